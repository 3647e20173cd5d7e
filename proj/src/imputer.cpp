#include "defacto/imputer.hpp"

#include <cmath>
#include <map>

namespace defacto {

namespace {

// Seed-derivation tags keeping parameter, coefficient and subject streams
// disjoint.
constexpr std::uint64_t kTagParams = 0xA110C4;
constexpr std::uint64_t kTagCoefs = 0xC0EF5;
constexpr std::uint64_t kTagSubject = 0x5AB1EC7;

}  // namespace

MatrixXd build_K(const KSpec& kspec, int t,
                 const std::vector<double>& visit_times,
                 std::optional<double> subject_k) {
  const int tmax = static_cast<int>(visit_times.size()) - 1;
  if (t < 0 || t >= tmax) {
    throw ShapeMismatch("discontinuation index out of range for K_t");
  }
  const int rows = tmax - t;
  const int cols = t + 1;

  if (kspec.variant == KVariant::full_matrix) {
    if (static_cast<int>(kspec.matrices.size()) <= t) {
      throw ShapeMismatch("no K matrix supplied for discontinuation time " +
                          std::to_string(t));
    }
    const MatrixXd& k = kspec.matrices[t];
    if (k.rows() != rows || k.cols() != cols) {
      throw ShapeMismatch("K_" + std::to_string(t) + " must be " +
                          std::to_string(rows) + "x" + std::to_string(cols));
    }
    return k;
  }

  double k0 = kspec.k0;
  if (kspec.per_subject) {
    if (!subject_k) {
      throw ValidationError("per-subject k requested but no k value supplied");
    }
    k0 = *subject_k;
  }

  MatrixXd k = MatrixXd::Zero(rows, cols);
  for (int r = 0; r < rows; ++r) {
    const int s = t + 1 + r;
    switch (kspec.variant) {
      case KVariant::constant_k0:
        k(r, cols - 1) = k0;
        break;
      case KVariant::exponential_k1:
        k(r, cols - 1) = std::pow(kspec.k1, visit_times[s] - visit_times[t]);
        break;
      case KVariant::combined:
        k(r, cols - 1) =
            k0 * std::pow(kspec.k1, visit_times[s] - visit_times[t]);
        break;
      case KVariant::full_matrix:
        break;  // handled above
    }
  }
  return k;
}

namespace {

VectorXd carry_forward(int rows, const VectorXd& pre) {
  return VectorXd::Constant(rows, pre(pre.size() - 1));
}

}  // namespace

VectorXd imputation_mean_given_beta(const MethodSpec& method,
                                    const MvnParams& ref, const MvnParams& act,
                                    const VectorXd& y_pre, int t,
                                    const std::vector<double>& visit_times,
                                    const MatrixXd& beta,
                                    std::optional<double> subject_k) {
  const int tmax = ref.dim() - 1;
  if (act.dim() != ref.dim()) {
    throw ShapeMismatch("reference and active parameter dimensions differ");
  }
  if (t < 0 || t >= tmax) {
    throw ShapeMismatch("discontinuation index out of range");
  }
  if (y_pre.size() != t + 1) {
    throw ShapeMismatch(
        "history must be complete through the discontinuation visit");
  }
  const int npost = tmax - t;
  VectorXd mu_pre_act = act.mean.head(t + 1);
  VectorXd mu_pre_ref = ref.mean.head(t + 1);
  VectorXd mu_post_ref = ref.mean.tail(npost);

  switch (method.method) {
    case Method::MAR:
      // Own-arm conditional continuation; not a reference-based rule.
      return beta * (y_pre - mu_pre_act) + act.mean.tail(npost);
    case Method::LMCF:
      return beta * (y_pre - mu_pre_act) + carry_forward(npost, mu_pre_act);
    case Method::J2R:
      return beta * (y_pre - mu_pre_act) + mu_post_ref;
    case Method::CIR:
      return beta * (y_pre - mu_pre_act) +
             carry_forward(npost, VectorXd(mu_pre_act - mu_pre_ref)) +
             mu_post_ref;
    case Method::CR:
      return beta * (y_pre - mu_pre_act) + beta * (mu_pre_act - mu_pre_ref) +
             mu_post_ref;
    case Method::Causal: {
      MatrixXd k = build_K(method.kspec, t, visit_times, subject_k);
      return beta * (y_pre - mu_pre_act) + k * (mu_pre_act - mu_pre_ref) +
             mu_post_ref;
    }
  }
  throw Error("unreachable imputation method");
}

VectorXd imputation_mean(const MethodSpec& method, const MvnParams& ref,
                         const MvnParams& act, const VectorXd& y_pre, int t,
                         const std::vector<double>& visit_times,
                         std::optional<double> subject_k) {
  const MvnParams& beta_params =
      method.method == Method::MAR
          ? act
          : (method.beta() == CovSource::reference_arm ? ref : act);
  MatrixXd beta = conditional_regression(beta_params, t).beta;
  return imputation_mean_given_beta(method, ref, act, y_pre, t, visit_times,
                                    beta, subject_k);
}

CovMatrix imputation_cov(const MethodSpec& method, const MvnParams& ref,
                         const MvnParams& act, int t) {
  const MvnParams& src =
      method.method == Method::MAR
          ? act
          : (method.cov_source == CovSource::reference_arm ? ref : act);
  return conditional_regression(src, t).residual_cov;
}

MatrixXd inverse_wishart(double df, const MatrixXd& scale, Rng& rng) {
  const int d = static_cast<int>(scale.rows());
  if (df < d) {
    throw DrawFailed("inverse Wishart degrees of freedom below dimension");
  }
  MatrixXd l_scale = cholesky(CovMatrix(scale));
  MatrixXd scale_inv = cholesky_solve(l_scale, MatrixXd::Identity(d, d));
  MatrixXd g = cholesky(CovMatrix(scale_inv));

  // Bartlett factor: chi-square diagonal, standard-normal subdiagonal.
  MatrixXd a = MatrixXd::Zero(d, d);
  for (int i = 0; i < d; ++i) {
    a(i, i) = std::sqrt(rng.chi_squared(df - i));
    for (int j = 0; j < i; ++j) a(i, j) = rng.normal();
  }
  MatrixXd w_chol = g * a;
  MatrixXd w = w_chol * w_chol.transpose();
  MatrixXd l_w = cholesky(CovMatrix(w));
  MatrixXd sigma = cholesky_solve(l_w, MatrixXd::Identity(d, d));
  return 0.5 * (sigma + sigma.transpose());
}

MvnParams posterior_draw(const FittedArmModel& model, Rng& rng) {
  const int d = model.params.dim();
  if (model.n - 1 < d) {
    throw DrawFailed("need at least dim+1 subjects for a posterior draw");
  }
  MatrixXd sigma_star = inverse_wishart(
      model.n - 1, double(model.n) * model.params.cov.matrix(), rng);
  MatrixXd l = cholesky(CovMatrix(sigma_star / double(model.n)));
  VectorXd mu_star = mvn_sample(model.params.mean, l, rng);
  return MvnParams(std::move(mu_star), CovMatrix(std::move(sigma_star)));
}

namespace {

MatrixXd draw_coefficients(const MatrixXd& coefs, const MatrixXd& coef_cov,
                           Rng& rng) {
  if (coefs.size() == 0) return coefs;
  VectorXd flat(coefs.size());
  int idx = 0;
  for (int j = 0; j < coefs.cols(); ++j)
    for (int r = 0; r < coefs.rows(); ++r) flat(idx++) = coefs(r, j);
  MatrixXd l = cholesky(CovMatrix(coef_cov));
  VectorXd drawn = mvn_sample(flat, l, rng);
  MatrixXd out(coefs.rows(), coefs.cols());
  idx = 0;
  for (int j = 0; j < coefs.cols(); ++j)
    for (int r = 0; r < coefs.rows(); ++r) out(r, j) = drawn(idx++);
  return out;
}

VectorXd with_covariates(const MvnParams& base, const MatrixXd& coefs,
                         const Subject& s) {
  VectorXd mu = base.mean;
  if (coefs.size() == 0) return mu;
  if (coefs.rows() == 1) {
    mu.array() += (coefs * s.covariates)(0, 0);
  } else {
    mu += coefs * s.covariates;
  }
  return mu;
}

// Per-imputation engine. The regression coefficients and the residual
// factorizations depend only on the drawn covariances and the
// discontinuation time, so they are memoized across subjects.
class DrawEngine {
 public:
  DrawEngine(const MethodSpec& method, const MvnParams& ctrl,
             const MvnParams& act, const std::vector<double>& times)
      : method_(method), ctrl_(ctrl), act_(act), times_(times) {}

  void fill_subject(Subject& s, const MatrixXd& coefs, Rng& rng) {
    const int dim = static_cast<int>(s.outcomes.size());
    std::vector<int> missing;
    for (int t = 0; t < dim; ++t) {
      if (!s.observed(t)) missing.push_back(t);
    }
    if (missing.empty()) return;

    const MvnParams& own = s.arm == Arm::control ? ctrl_ : act_;
    VectorXd own_mu = with_covariates(own, coefs, s);

    if (s.arm == Arm::control || method_.method == Method::MAR) {
      fill_own_arm(s, own, own_mu, missing, rng);
      return;
    }

    // Active arm, reference-based: intermittent gaps before the
    // discontinuation visit come from the own-arm conditional.
    std::vector<int> gaps;
    for (int t : missing) {
      if (t <= s.disc_time) gaps.push_back(t);
    }
    if (!gaps.empty()) {
      fill_pre_gaps(s, own, own_mu, gaps, rng);
    }

    if (s.disc_time < dim - 1) {
      const int t = s.disc_time;
      VectorXd y_pre = s.outcomes.head(t + 1);
      MvnParams ref_subj(with_covariates(ctrl_, coefs, s), ctrl_.cov);
      MvnParams act_subj(std::move(own_mu), act_.cov);
      VectorXd mean =
          imputation_mean_given_beta(method_, ref_subj, act_subj, y_pre, t,
                                     times_, beta(t), s.k_value);
      VectorXd post = mvn_sample(mean, residual_chol(t), rng);
      for (int r = 0; r < post.size(); ++r) s.outcomes(t + 1 + r) = post(r);
    }
  }

 private:
  void fill_own_arm(Subject& s, const MvnParams& own, const VectorXd& own_mu,
                    const std::vector<int>& missing, Rng& rng) const {
    std::vector<std::pair<int, double>> observed;
    for (int t = 0; t < s.outcomes.size(); ++t) {
      if (s.observed(t)) observed.emplace_back(t, s.outcomes(t));
    }
    MvnParams centered(own_mu, own.cov);
    MvnParams cond = conditional_mvn(centered, observed);
    VectorXd draw = mvn_sample(cond, rng);
    for (size_t i = 0; i < missing.size(); ++i)
      s.outcomes(missing[i]) = draw(i);
  }

  void fill_pre_gaps(Subject& s, const MvnParams& own, const VectorXd& own_mu,
                     const std::vector<int>& gaps, Rng& rng) const {
    const int t = s.disc_time;
    MatrixXd sub_cov = own.cov.matrix().topLeftCorner(t + 1, t + 1);
    MvnParams sub(own_mu.head(t + 1), CovMatrix(std::move(sub_cov)));
    std::vector<std::pair<int, double>> observed;
    for (int v = 0; v <= t; ++v) {
      if (s.observed(v)) observed.emplace_back(v, s.outcomes(v));
    }
    MvnParams cond = conditional_mvn(sub, observed);
    VectorXd draw = mvn_sample(cond, rng);
    for (size_t i = 0; i < gaps.size(); ++i) s.outcomes(gaps[i]) = draw(i);
  }

  const MatrixXd& beta(int t) {
    auto it = beta_.find(t);
    if (it == beta_.end()) {
      const MvnParams& src =
          method_.beta() == CovSource::reference_arm ? ctrl_ : act_;
      it = beta_.emplace(t, conditional_regression(src, t).beta).first;
    }
    return it->second;
  }

  const MatrixXd& residual_chol(int t) {
    auto it = residual_chol_.find(t);
    if (it == residual_chol_.end()) {
      CovMatrix resid = imputation_cov(method_, ctrl_, act_, t);
      it = residual_chol_.emplace(t, cholesky(resid)).first;
    }
    return it->second;
  }

  const MethodSpec& method_;
  const MvnParams& ctrl_;
  const MvnParams& act_;
  const std::vector<double>& times_;
  std::map<int, MatrixXd> beta_;
  std::map<int, MatrixXd> residual_chol_;
};

void check_reference(const TrialDataset& data, const MethodSpec& method) {
  if (method.reference != data.arm_labels[0]) {
    if (method.reference == data.arm_labels[1]) {
      throw ValidationError(
          "reference arm '" + method.reference +
          "' is the active arm of this dataset; re-ingest with the desired "
          "reference so arm roles are assigned consistently");
    }
    throw ValidationError("reference arm '" + method.reference +
                          "' not present in dataset");
  }
}

}  // namespace

void impute_each(
    const TrialDataset& data, const MethodSpec& method,
    const std::vector<std::pair<MvnParams, MvnParams>>& draws,
    const std::vector<MatrixXd>& coef_draws, std::uint64_t seed,
    const std::function<void(int, const TrialDataset&)>& consume) {
  data.validate();
  check_reference(data, method);
  if (!coef_draws.empty() && coef_draws.size() != draws.size()) {
    throw ShapeMismatch("coefficient draws do not match parameter draws");
  }

  const std::uint64_t subj_ns = derive_seed(seed, kTagSubject);
  const MatrixXd no_coefs(0, 0);
  TrialDataset buffer;
  for (int j = 0; j < static_cast<int>(draws.size()); ++j) {
    buffer = data;
    const MatrixXd& coefs = coef_draws.empty() ? no_coefs : coef_draws[j];
    DrawEngine engine(method, draws[j].first, draws[j].second,
                      data.visit_times);
    const std::uint64_t imp_ns = derive_seed(subj_ns, j);
    for (auto& s : buffer.subjects) {
      Rng rng(derive_seed(imp_ns, hash_tag(s.id)));
      engine.fill_subject(s, coefs, rng);
    }
    consume(j, buffer);
  }
}

ImputationSet impute_with_draws(
    const TrialDataset& data, const MethodSpec& method,
    const std::vector<std::pair<MvnParams, MvnParams>>& draws,
    const std::vector<MatrixXd>& coef_draws, std::uint64_t seed) {
  ImputationSet out;
  out.m = static_cast<int>(draws.size());
  out.seed = seed;
  out.draws = draws;
  out.coef_draws = coef_draws;
  out.datasets.reserve(out.m);
  impute_each(data, method, draws, coef_draws, seed,
              [&](int, const TrialDataset& filled) {
                out.datasets.push_back(filled);
              });
  return out;
}

ImputationSet impute_with_fits(const TrialDataset& data,
                               const MethodSpec& method, int m,
                               std::uint64_t seed, const ArmFits& fits,
                               const ImputeOptions& options) {
  std::vector<std::pair<MvnParams, MvnParams>> draws;
  std::vector<MatrixXd> coef_draws;
  draws.reserve(m);
  const bool has_covs = data.n_covariates() > 0;
  const std::uint64_t param_ns = derive_seed(seed, kTagParams);
  const std::uint64_t coef_ns = derive_seed(seed, kTagCoefs);
  for (int j = 0; j < m; ++j) {
    if (options.draw_parameters) {
      Rng rng_c(derive_seed(param_ns, 2 * j));
      Rng rng_a(derive_seed(param_ns, 2 * j + 1));
      draws.emplace_back(posterior_draw(fits.control, rng_c),
                         posterior_draw(fits.active, rng_a));
      if (has_covs) {
        Rng rng_g(derive_seed(coef_ns, j));
        coef_draws.push_back(draw_coefficients(
            fits.control.covariate_coefficients, fits.shared_coef_cov, rng_g));
      }
    } else {
      draws.emplace_back(fits.control.params, fits.active.params);
      if (has_covs) coef_draws.push_back(fits.control.covariate_coefficients);
    }
  }
  return impute_with_draws(data, method, draws, coef_draws, seed);
}

ImputationSet impute_dataset(const TrialDataset& data, const MethodSpec& method,
                             int m, std::uint64_t seed,
                             const ImputeOptions& options) {
  data.validate();
  check_reference(data, method);
  ArmFits fits = fit_arms(data, options.fit);
  return impute_with_fits(data, method, m, seed, fits, options);
}

}  // namespace defacto
