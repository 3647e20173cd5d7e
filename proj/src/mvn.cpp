#include "defacto/mvn.hpp"

#include <algorithm>
#include <cmath>

namespace defacto {

namespace {

double max_abs(const MatrixXd& m) { return m.cwiseAbs().maxCoeff(); }

}  // namespace

CovMatrix::CovMatrix(MatrixXd m) : m_(std::move(m)) {
  if (m_.rows() != m_.cols() || m_.rows() == 0) {
    throw ShapeMismatch("covariance matrix must be square and non-empty");
  }
  const double scale = std::max(max_abs(m_), 1e-300);
  const double asym = max_abs(m_ - m_.transpose());
  if (asym > 1e-12 * scale) {
    throw ValidationError("covariance matrix is not symmetric");
  }
  m_ = 0.5 * (m_ + m_.transpose().eval());
}

MvnParams::MvnParams(VectorXd mean_in, CovMatrix cov_in)
    : mean(std::move(mean_in)), cov(std::move(cov_in)) {
  if (mean.size() != cov.dim()) {
    throw ShapeMismatch("mean length does not match covariance dimension");
  }
}

MatrixXd cholesky(const CovMatrix& cov) {
  const MatrixXd& a = cov.matrix();
  const int n = cov.dim();
  const double tol = 1e-10 * std::max(a.diagonal().maxCoeff(), 0.0);
  MatrixXd l = MatrixXd::Zero(n, n);
  for (int j = 0; j < n; ++j) {
    double d = a(j, j) - l.row(j).head(j).squaredNorm();
    if (d <= tol) {
      throw NotPositiveDefinite("Cholesky pivot " + std::to_string(d) +
                                " at index " + std::to_string(j) +
                                " is at or below tolerance");
    }
    l(j, j) = std::sqrt(d);
    for (int i = j + 1; i < n; ++i) {
      l(i, j) = (a(i, j) - l.row(i).head(j).dot(l.row(j).head(j))) / l(j, j);
    }
  }
  return l;
}

MatrixXd cholesky_solve(const MatrixXd& lower, const MatrixXd& rhs) {
  MatrixXd y = lower.triangularView<Eigen::Lower>().solve(rhs);
  return lower.transpose().triangularView<Eigen::Upper>().solve(y);
}

ConditionalRegression conditional_regression(const MvnParams& params, int t) {
  const int dim = params.dim();
  const int tmax = dim - 1;
  if (t < 0 || t >= tmax) {
    throw ShapeMismatch("split index t must satisfy 0 <= t < T");
  }
  const int npre = t + 1;
  const int npost = tmax - t;
  const MatrixXd& s = params.cov.matrix();
  MatrixXd pre_pre = s.topLeftCorner(npre, npre);
  MatrixXd post_pre = s.bottomLeftCorner(npost, npre);
  MatrixXd post_post = s.bottomRightCorner(npost, npost);

  MatrixXd l = cholesky(CovMatrix(pre_pre));
  // beta' solves Sigma_pre,pre * beta' = Sigma_pre,post
  MatrixXd beta = cholesky_solve(l, post_pre.transpose()).transpose();
  MatrixXd residual = post_post - beta * post_pre.transpose();

  ConditionalRegression out;
  out.split_index = t;
  out.beta = std::move(beta);
  out.residual_cov = CovMatrix(std::move(residual));
  return out;
}

MvnParams conditional_mvn(
    const MvnParams& params,
    const std::vector<std::pair<int, double>>& observed) {
  const int dim = params.dim();
  std::vector<char> is_obs(dim, 0);
  for (const auto& [idx, value] : observed) {
    (void)value;
    if (idx < 0 || idx >= dim) {
      throw ShapeMismatch("observed index out of range");
    }
    if (is_obs[idx]) {
      throw ValidationError("duplicate observed index");
    }
    is_obs[idx] = 1;
  }
  if (observed.empty()) return params;

  std::vector<int> unobs;
  for (int i = 0; i < dim; ++i) {
    if (!is_obs[i]) unobs.push_back(i);
  }
  const int no = static_cast<int>(observed.size());
  const int nu = static_cast<int>(unobs.size());
  if (nu == 0) return MvnParams{};

  VectorXd y_obs(no), mu_obs(no);
  std::vector<int> obs_idx(no);
  for (int k = 0; k < no; ++k) {
    obs_idx[k] = observed[k].first;
    y_obs(k) = observed[k].second;
    mu_obs(k) = params.mean(obs_idx[k]);
  }
  const MatrixXd& s = params.cov.matrix();
  MatrixXd s_oo(no, no), s_uo(nu, no), s_uu(nu, nu);
  for (int i = 0; i < no; ++i)
    for (int j = 0; j < no; ++j) s_oo(i, j) = s(obs_idx[i], obs_idx[j]);
  for (int i = 0; i < nu; ++i)
    for (int j = 0; j < no; ++j) s_uo(i, j) = s(unobs[i], obs_idx[j]);
  for (int i = 0; i < nu; ++i)
    for (int j = 0; j < nu; ++j) s_uu(i, j) = s(unobs[i], unobs[j]);

  MatrixXd l = cholesky(CovMatrix(s_oo));
  MatrixXd gain = cholesky_solve(l, s_uo.transpose()).transpose();

  VectorXd mu_u(nu);
  for (int i = 0; i < nu; ++i) mu_u(i) = params.mean(unobs[i]);
  VectorXd cond_mean = mu_u + gain * (y_obs - mu_obs);
  MatrixXd cond_cov = s_uu - gain * s_uo.transpose();
  return MvnParams(std::move(cond_mean), CovMatrix(std::move(cond_cov)));
}

VectorXd mvn_sample(const MvnParams& params, Rng& rng) {
  return mvn_sample(params.mean, cholesky(params.cov), rng);
}

VectorXd mvn_sample(const VectorXd& mean, const MatrixXd& lower, Rng& rng) {
  VectorXd z(mean.size());
  for (int i = 0; i < z.size(); ++i) z(i) = rng.normal();
  return mean + lower * z;
}

}  // namespace defacto
