#include "defacto/estimation.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

namespace defacto {

namespace {

constexpr double kLog2Pi = 1.8378770664093454836;

// Mean-model parameter layout for the EM engine: one block of visit means
// per covariance group, followed by the covariate coefficients (shared
// across groups).
struct MeanLayout {
  int dim = 0;
  int n_groups = 1;
  int n_cov = 0;
  CovariateTiming timing = CovariateTiming::per_visit;

  int n_coef() const {
    return timing == CovariateTiming::per_visit ? n_cov * dim : n_cov;
  }
  int n_params() const { return n_groups * dim + n_coef(); }
  int cell(int g, int t) const { return g * dim + t; }
  int coef(int j, int t) const {
    return n_groups * dim +
           (timing == CovariateTiming::per_visit ? j * dim + t : j);
  }

  MatrixXd design(int group, const VectorXd& x) const {
    MatrixXd d = MatrixXd::Zero(dim, n_params());
    for (int t = 0; t < dim; ++t) {
      d(t, cell(group, t)) = 1.0;
      for (int j = 0; j < n_cov; ++j) d(t, coef(j, t)) = x(j);
    }
    return d;
  }
};

struct EmSubject {
  const Subject* s = nullptr;
  int group = 0;
  std::vector<int> obs;
  std::vector<int> mis;
  MatrixXd design;  // dim x p
};

struct EmState {
  VectorXd theta;
  std::vector<MatrixXd> sigma;  // one per covariance group
};

struct EmFit {
  EmState state;
  double loglik = 0.0;
  bool converged = false;
  int iterations = 0;
  std::vector<double> trace;
  MatrixXd info_inv;  // asymptotic covariance of theta
};

MatrixXd nearest_pd(const MatrixXd& m) {
  Eigen::SelfAdjointEigenSolver<MatrixXd> es(0.5 * (m + m.transpose()));
  VectorXd ev = es.eigenvalues();
  double top = ev.maxCoeff();
  if (!(top > 0)) return MatrixXd::Identity(m.rows(), m.cols());
  double floor = 1e-6 * top;
  for (int i = 0; i < ev.size(); ++i) ev(i) = std::max(ev(i), floor);
  return es.eigenvectors() * ev.asDiagonal() * es.eigenvectors().transpose();
}

EmState initial_state(const std::vector<EmSubject>& subjects,
                      const MeanLayout& layout, int n_sigma) {
  const int dim = layout.dim;
  EmState st;
  st.theta = VectorXd::Zero(layout.n_params());

  // Available-case visit means per group.
  MatrixXd sums = MatrixXd::Zero(layout.n_groups, dim);
  MatrixXd cnts = MatrixXd::Zero(layout.n_groups, dim);
  for (const auto& es : subjects) {
    for (int t : es.obs) {
      sums(es.group, t) += es.s->outcomes(t);
      cnts(es.group, t) += 1.0;
    }
  }
  for (int g = 0; g < layout.n_groups; ++g) {
    for (int t = 0; t < dim; ++t) {
      st.theta(layout.cell(g, t)) = sums(g, t) / cnts(g, t);
    }
  }

  // Available-case pairwise covariances per covariance group, projected to
  // the nearest PD matrix by eigenvalue flooring.
  st.sigma.resize(n_sigma);
  for (int g = 0; g < n_sigma; ++g) {
    MatrixXd acc = MatrixXd::Zero(dim, dim);
    MatrixXd cnt = MatrixXd::Zero(dim, dim);
    for (const auto& es : subjects) {
      int sg = (n_sigma == 1) ? 0 : es.group;
      if (sg != g) continue;
      double gm;
      for (int a : es.obs) {
        for (int b : es.obs) {
          gm = (es.s->outcomes(a) - st.theta(layout.cell(es.group, a))) *
               (es.s->outcomes(b) - st.theta(layout.cell(es.group, b)));
          acc(a, b) += gm;
          cnt(a, b) += 1.0;
        }
      }
    }
    MatrixXd cov(dim, dim);
    for (int a = 0; a < dim; ++a) {
      for (int b = 0; b < dim; ++b) {
        if (cnt(a, b) >= 2.0) {
          cov(a, b) = acc(a, b) / cnt(a, b);
        } else {
          cov(a, b) = (a == b) ? 1.0 : 0.0;
        }
      }
    }
    st.sigma[g] = nearest_pd(cov);
  }
  return st;
}

// One observed-data loglik evaluation plus the sufficient statistics for
// the next CM steps, all at the supplied parameter values.
struct EStepResult {
  double loglik = 0.0;
  MatrixXd xtwx;              // sum X' Sigma^-1 X
  VectorXd xtwy;              // sum X' Sigma^-1 yhat
  std::vector<VectorXd> yhat; // filled outcome per subject
  std::vector<MatrixXd> cond; // conditional covariance (full size) per subject
};

EStepResult e_step(const std::vector<EmSubject>& subjects,
                   const MeanLayout& layout, const EmState& st, int n_sigma) {
  const int p = layout.n_params();
  EStepResult r;
  r.xtwx = MatrixXd::Zero(p, p);
  r.xtwy = VectorXd::Zero(p);
  r.yhat.resize(subjects.size());
  r.cond.resize(subjects.size());

  std::vector<MatrixXd> sig_inv(n_sigma);
  for (int g = 0; g < n_sigma; ++g) {
    MatrixXd l = cholesky(CovMatrix(st.sigma[g]));
    sig_inv[g] = cholesky_solve(l, MatrixXd::Identity(layout.dim, layout.dim));
  }

  for (size_t i = 0; i < subjects.size(); ++i) {
    const auto& es = subjects[i];
    const int sg = (n_sigma == 1) ? 0 : es.group;
    const MatrixXd& sigma = st.sigma[sg];
    VectorXd mu = es.design * st.theta;

    const int no = static_cast<int>(es.obs.size());
    const int nm = static_cast<int>(es.mis.size());
    VectorXd yhat = es.s->outcomes;
    MatrixXd cond = MatrixXd::Zero(layout.dim, layout.dim);

    MatrixXd s_oo(no, no);
    VectorXd r_obs(no);
    for (int a = 0; a < no; ++a) {
      r_obs(a) = es.s->outcomes(es.obs[a]) - mu(es.obs[a]);
      for (int b = 0; b < no; ++b) s_oo(a, b) = sigma(es.obs[a], es.obs[b]);
    }
    MatrixXd l_oo = cholesky(CovMatrix(s_oo));
    VectorXd alpha = cholesky_solve(l_oo, r_obs);

    double logdet = 0.0;
    for (int a = 0; a < no; ++a) logdet += 2.0 * std::log(l_oo(a, a));
    r.loglik -= 0.5 * (no * kLog2Pi + logdet + r_obs.dot(alpha));

    if (nm > 0) {
      MatrixXd s_mo(nm, no), s_mm(nm, nm);
      for (int a = 0; a < nm; ++a) {
        for (int b = 0; b < no; ++b) s_mo(a, b) = sigma(es.mis[a], es.obs[b]);
        for (int b = 0; b < nm; ++b) s_mm(a, b) = sigma(es.mis[a], es.mis[b]);
      }
      VectorXd fill = s_mo * alpha;
      MatrixXd gain = cholesky_solve(l_oo, s_mo.transpose()).transpose();
      MatrixXd c_mm = s_mm - gain * s_mo.transpose();
      for (int a = 0; a < nm; ++a) {
        yhat(es.mis[a]) = mu(es.mis[a]) + fill(a);
        for (int b = 0; b < nm; ++b) cond(es.mis[a], es.mis[b]) = c_mm(a, b);
      }
    }

    r.xtwx.noalias() += es.design.transpose() * sig_inv[sg] * es.design;
    r.xtwy.noalias() += es.design.transpose() * sig_inv[sg] * yhat;
    r.yhat[i] = std::move(yhat);
    r.cond[i] = std::move(cond);
  }
  return r;
}

// Asymptotic covariance of the mean parameters: inverse of the observed
// information sum X_obs' Sigma_obs^-1 X_obs at the final covariance.
MatrixXd mean_param_cov(const std::vector<EmSubject>& subjects,
                        const MeanLayout& layout, const EmState& st,
                        int n_sigma) {
  const int p = layout.n_params();
  MatrixXd info = MatrixXd::Zero(p, p);
  for (const auto& es : subjects) {
    const int sg = (n_sigma == 1) ? 0 : es.group;
    const MatrixXd& sigma = st.sigma[sg];
    const int no = static_cast<int>(es.obs.size());
    MatrixXd s_oo(no, no);
    MatrixXd x_obs(no, p);
    for (int a = 0; a < no; ++a) {
      x_obs.row(a) = es.design.row(es.obs[a]);
      for (int b = 0; b < no; ++b) s_oo(a, b) = sigma(es.obs[a], es.obs[b]);
    }
    MatrixXd l = cholesky(CovMatrix(s_oo));
    info.noalias() += x_obs.transpose() * cholesky_solve(l, x_obs);
  }
  Eigen::ColPivHouseholderQR<MatrixXd> qr(info);
  if (qr.rank() < p) {
    throw RankDeficient("mean-model information matrix is singular");
  }
  return qr.solve(MatrixXd::Identity(p, p));
}

EmFit run_em(const std::vector<EmSubject>& subjects, const MeanLayout& layout,
             int n_sigma, const EmOptions& opt) {
  EmFit fit;
  EmState st = initial_state(subjects, layout, n_sigma);

  std::vector<double> n_group(n_sigma, 0.0);
  for (const auto& es : subjects) {
    n_group[(n_sigma == 1) ? 0 : es.group] += 1.0;
  }

  for (int iter = 0; iter < opt.max_iter; ++iter) {
    EStepResult es;
    try {
      es = e_step(subjects, layout, st, n_sigma);
    } catch (const NotPositiveDefinite& e) {
      throw SingularFit(std::string("covariance became singular during EM: ") +
                        e.what());
    }
    fit.trace.push_back(es.loglik);
    if (iter > 0) {
      double prev = fit.trace[iter - 1];
      if (std::abs(es.loglik - prev) < opt.tol * (std::abs(prev) + 1.0)) {
        fit.converged = true;
        fit.iterations = iter;
        break;
      }
    }

    Eigen::LDLT<MatrixXd> ldlt(es.xtwx);
    if (ldlt.info() != Eigen::Success || !ldlt.isPositive()) {
      throw RankDeficient("mean-model design is rank deficient");
    }
    st.theta = ldlt.solve(es.xtwy);

    for (int g = 0; g < n_sigma; ++g) {
      MatrixXd acc = MatrixXd::Zero(layout.dim, layout.dim);
      for (size_t i = 0; i < subjects.size(); ++i) {
        if (((n_sigma == 1) ? 0 : subjects[i].group) != g) continue;
        VectorXd resid = es.yhat[i] - subjects[i].design * st.theta;
        acc.noalias() += resid * resid.transpose() + es.cond[i];
      }
      st.sigma[g] = 0.5 * (acc + acc.transpose()) / n_group[g];
    }
  }

  if (!fit.converged) {
    fit.iterations = opt.max_iter;
    if (opt.require_convergence) {
      throw NotConverged("EM did not converge in " +
                             std::to_string(opt.max_iter) + " iterations",
                         fit.trace);
    }
    // Loglik at the final (post-update) parameters.
    fit.trace.push_back(e_step(subjects, layout, st, n_sigma).loglik);
  }
  fit.loglik = fit.trace.back();
  fit.info_inv = mean_param_cov(subjects, layout, st, n_sigma);
  fit.state = std::move(st);
  return fit;
}

std::vector<EmSubject> collect_subjects(const TrialDataset& data,
                                        const MeanLayout& layout,
                                        std::optional<Arm> only_arm) {
  std::vector<EmSubject> out;
  for (const auto& s : data.subjects) {
    if (only_arm && s.arm != *only_arm) continue;
    EmSubject es;
    es.s = &s;
    es.group = only_arm ? 0 : (s.arm == Arm::control ? 0 : 1);
    for (int t = 0; t < data.n_visits(); ++t) {
      (s.observed(t) ? es.obs : es.mis).push_back(t);
    }
    es.design = layout.design(es.group, s.covariates);
    out.push_back(std::move(es));
  }
  return out;
}

void check_fit_preconditions(const std::vector<EmSubject>& subjects, int dim,
                             int n_groups) {
  std::vector<int> n_group(n_groups, 0);
  std::vector<std::vector<int>> visit_counts(n_groups,
                                             std::vector<int>(dim, 0));
  for (const auto& es : subjects) {
    n_group[es.group]++;
    for (int t : es.obs) visit_counts[es.group][t]++;
  }
  for (int g = 0; g < n_groups; ++g) {
    if (n_group[g] < dim + 1) {
      throw ValidationError("group " + std::to_string(g) + " has " +
                            std::to_string(n_group[g]) +
                            " subjects; need at least T+2 = " +
                            std::to_string(dim + 1));
    }
    for (int t = 0; t < dim; ++t) {
      if (visit_counts[g][t] == 0) {
        throw ValidationError("no subject in group " + std::to_string(g) +
                              " observed at visit " + std::to_string(t));
      }
    }
  }
}

MatrixXd coef_matrix(const MeanLayout& layout, const VectorXd& theta) {
  if (layout.n_cov == 0) return MatrixXd(0, 0);
  const int rows = layout.timing == CovariateTiming::per_visit ? layout.dim : 1;
  MatrixXd coefs(rows, layout.n_cov);
  for (int j = 0; j < layout.n_cov; ++j) {
    for (int r = 0; r < rows; ++r) {
      coefs(r, j) = theta(layout.coef(j, layout.timing ==
                                             CovariateTiming::per_visit
                                         ? r
                                         : 0));
    }
  }
  return coefs;
}

FittedArmModel extract_arm(const MeanLayout& layout, const EmFit& fit, int group,
                           Arm arm, int sigma_index, int n_subjects) {
  FittedArmModel model;
  model.arm = arm;
  VectorXd mean(layout.dim);
  for (int t = 0; t < layout.dim; ++t) {
    mean(t) = fit.state.theta(layout.cell(group, t));
  }
  model.params = MvnParams(std::move(mean),
                           CovMatrix(fit.state.sigma[sigma_index]));
  model.covariate_coefficients = coef_matrix(layout, fit.state.theta);

  // Rows/cols of interest: this arm's visit means followed by the
  // covariate coefficients.
  std::vector<int> keep;
  for (int t = 0; t < layout.dim; ++t) keep.push_back(layout.cell(group, t));
  for (int k = layout.n_groups * layout.dim; k < layout.n_params(); ++k) {
    keep.push_back(k);
  }
  MatrixXd cc(keep.size(), keep.size());
  for (size_t a = 0; a < keep.size(); ++a)
    for (size_t b = 0; b < keep.size(); ++b)
      cc(a, b) = fit.info_inv(keep[a], keep[b]);
  model.coef_cov = std::move(cc);

  model.n = n_subjects;
  model.loglik = fit.loglik;
  model.converged = fit.converged;
  model.iterations = fit.iterations;
  model.loglik_trace = fit.trace;
  return model;
}

}  // namespace

VectorXd FittedArmModel::subject_mean(const Subject& s) const {
  VectorXd mu = params.mean;
  if (covariate_coefficients.size() == 0) return mu;
  if (covariate_coefficients.rows() == 1) {
    mu.array() += (covariate_coefficients * s.covariates)(0, 0);
  } else {
    mu += covariate_coefficients * s.covariates;
  }
  return mu;
}

FittedArmModel fit_mar_mvn(const TrialDataset& data, Arm arm,
                           const FitConfig& config) {
  data.validate();
  MeanLayout layout{data.n_visits(), 1, data.n_covariates(),
                    config.covariate_timing};
  auto subjects = collect_subjects(data, layout, arm);
  check_fit_preconditions(subjects, layout.dim, 1);
  EmFit fit = run_em(subjects, layout, 1, config.em);
  return extract_arm(layout, fit, 0, arm, 0,
                     static_cast<int>(subjects.size()));
}

ArmFits fit_arms(const TrialDataset& data, const FitConfig& config) {
  data.validate();
  MeanLayout layout{data.n_visits(), 2, data.n_covariates(),
                    config.covariate_timing};
  auto subjects = collect_subjects(data, layout, std::nullopt);
  check_fit_preconditions(subjects, layout.dim, 2);
  const int n_sigma = config.pooled_covariance ? 1 : 2;
  EmFit fit = run_em(subjects, layout, n_sigma, config.em);

  int n_control = 0, n_active = 0;
  for (const auto& es : subjects) (es.group == 0 ? n_control : n_active)++;

  ArmFits fits;
  fits.control =
      extract_arm(layout, fit, 0, Arm::control, 0, n_control);
  fits.active = extract_arm(layout, fit, 1, Arm::active,
                            config.pooled_covariance ? 0 : 1, n_active);
  const int nc = layout.n_coef();
  fits.shared_coef_cov =
      fit.info_inv.bottomRightCorner(nc, nc);
  return fits;
}

DeJureEstimates fit_mmrm(const TrialDataset& data, const FitConfig& config) {
  data.validate();
  MeanLayout layout{data.n_visits(), 2, data.n_covariates(),
                    config.covariate_timing};
  auto subjects = collect_subjects(data, layout, std::nullopt);
  check_fit_preconditions(subjects, layout.dim, 2);
  const int n_sigma = config.pooled_covariance ? 1 : 2;
  EmFit fit = run_em(subjects, layout, n_sigma, config.em);

  const int tmax = data.tmax();
  DeJureEstimates est;
  est.delta.resize(tmax);
  est.ses.resize(tmax);
  MatrixXd contrast = MatrixXd::Zero(tmax, layout.n_params());
  for (int t = 1; t <= tmax; ++t) {
    est.delta(t - 1) = fit.state.theta(layout.cell(1, t)) -
                       fit.state.theta(layout.cell(0, t));
    contrast(t - 1, layout.cell(1, t)) = 1.0;
    contrast(t - 1, layout.cell(0, t)) = -1.0;
  }
  est.vcov = contrast * fit.info_inv * contrast.transpose();
  for (int t = 0; t < tmax; ++t) est.ses(t) = std::sqrt(est.vcov(t, t));
  return est;
}

AncovaResult ancova(const TrialDataset& data) {
  data.validate();
  const int tmax = data.tmax();
  const int n = static_cast<int>(data.subjects.size());
  const int p = 3 + data.n_covariates();
  if (n <= p) {
    throw ValidationError("too few subjects for the analysis model");
  }
  MatrixXd x(n, p);
  VectorXd y(n);
  for (int i = 0; i < n; ++i) {
    const Subject& s = data.subjects[i];
    if (!s.observed(tmax)) {
      throw ValidationError("subject " + s.id +
                            ": final visit missing; analysis model requires "
                            "a complete final visit");
    }
    x(i, 0) = 1.0;
    x(i, 1) = s.arm == Arm::active ? 1.0 : 0.0;
    x(i, 2) = s.outcomes(0);
    for (int j = 0; j < data.n_covariates(); ++j) x(i, 3 + j) = s.covariates(j);
    y(i) = s.outcomes(tmax);
  }

  Eigen::ColPivHouseholderQR<MatrixXd> qr(x);
  if (qr.rank() < p) {
    throw RankDeficient("analysis design matrix is singular");
  }
  VectorXd beta = qr.solve(y);
  double rss = (y - x * beta).squaredNorm();
  double df = n - p;
  double sigma2 = rss / df;

  MatrixXd r = qr.matrixR().topLeftCorner(p, p).triangularView<Eigen::Upper>();
  MatrixXd rinv = r.triangularView<Eigen::Upper>().solve(MatrixXd::Identity(p, p));
  MatrixXd xtx_inv = qr.colsPermutation() * (rinv * rinv.transpose()) *
                     qr.colsPermutation().transpose();

  AncovaResult out;
  out.estimate = beta(1);
  out.se = std::sqrt(sigma2 * xtx_inv(1, 1));
  out.df = df;
  return out;
}

}  // namespace defacto
