#include "defacto/estimands.hpp"

#include <boost/math/distributions/students_t.hpp>
#include <cmath>

#include "defacto/parallel.hpp"

namespace defacto {

PooledResult rubin_pool(const MIResult& r, double ci_level) {
  const int m = static_cast<int>(r.estimates.size());
  if (m < 2) {
    throw ValidationError("pooling requires at least two imputations");
  }
  if (r.variances.size() != m) {
    throw ShapeMismatch("estimates and variances length mismatch");
  }
  if (r.variances.minCoeff() <= 0.0) {
    throw ValidationError("per-imputation variances must be positive");
  }

  PooledResult out;
  out.m = m;
  out.estimate = r.estimates.mean();
  out.within = r.variances.mean();
  out.between =
      (r.estimates.array() - out.estimate).square().sum() / (m - 1.0);
  out.total_var = out.within + (1.0 + 1.0 / m) * out.between;
  out.se = std::sqrt(out.total_var);

  if (out.between == 0.0) {
    out.degenerate_between = true;
    out.df = r.complete_df;
  } else {
    const double lambda = (1.0 + 1.0 / m) * out.between / out.total_var;
    const double df_old = (m - 1.0) / (lambda * lambda);
    const double nu = r.complete_df;
    const double df_obs = (nu + 1.0) / (nu + 3.0) * nu * (1.0 - lambda);
    out.df = df_old * df_obs / (df_old + df_obs);
  }
  out.df = std::max(out.df, 1.0);

  boost::math::students_t dist(out.df);
  const double tq = boost::math::quantile(dist, 0.5 + 0.5 * ci_level);
  out.ci_low = out.estimate - tq * out.se;
  out.ci_high = out.estimate + tq * out.se;
  out.p_value =
      2.0 * boost::math::cdf(boost::math::complement(
                dist, std::abs(out.estimate) / out.se));
  return out;
}

DiscontinuationDistribution estimate_alpha(const TrialDataset& data) {
  auto active = data.arm_subjects(Arm::active);
  if (active.empty()) {
    throw ValidationError("active arm is empty");
  }
  VectorXd alpha = VectorXd::Zero(data.n_visits());
  for (const Subject* s : active) alpha(s->disc_time) += 1.0;
  alpha /= static_cast<double>(active.size());
  return DiscontinuationDistribution{alpha};
}

namespace {

// Coefficients c_1..c_T such that the de facto estimate is c' delta.
VectorXd defacto_coefficients(const DiscontinuationDistribution& alpha,
                              const KSpec& kspec,
                              const std::vector<double>& visit_times) {
  const int tmax = static_cast<int>(visit_times.size()) - 1;
  if (alpha.alpha.size() != tmax + 1) {
    throw ShapeMismatch("discontinuation distribution length mismatch");
  }
  VectorXd c = VectorXd::Zero(tmax);
  c(tmax - 1) = alpha.alpha(tmax);
  for (int t = 1; t < tmax; ++t) {
    // e_t' K_t picks the final-visit row of K_t; column j multiplies
    // delta_j (the j = 0 column is inert since delta_0 = 0).
    MatrixXd k = build_K(kspec, t, visit_times);
    for (int j = 1; j <= t; ++j) {
      c(j - 1) += alpha.alpha(t) * k(k.rows() - 1, j);
    }
  }
  return c;
}

}  // namespace

EstimateWithSe defacto_closed_form(const DeJureEstimates& dejure,
                                   const DiscontinuationDistribution& alpha,
                                   const KSpec& kspec,
                                   const std::vector<double>& visit_times) {
  const int tmax = static_cast<int>(visit_times.size()) - 1;
  if (dejure.delta.size() != tmax) {
    throw ShapeMismatch("de jure estimates length mismatch");
  }
  VectorXd c = defacto_coefficients(alpha, kspec, visit_times);
  EstimateWithSe out;
  out.estimate = c.dot(dejure.delta);
  out.se = std::sqrt((c.transpose() * dejure.vcov * c)(0, 0));
  return out;
}

EstimateWithSe defacto_from_j2r(const PooledResult& j2r_pooled,
                                const DeJureEstimates& dejure,
                                const DiscontinuationDistribution& alpha,
                                const KSpec& kspec,
                                const std::vector<double>& visit_times) {
  VectorXd c = defacto_coefficients(alpha, kspec, visit_times);
  c(c.size() - 1) -= alpha.alpha(alpha.alpha.size() - 1);  // J2R covers alpha_T delta_T
  EstimateWithSe out;
  out.estimate = j2r_pooled.estimate + c.dot(dejure.delta);
  out.se = j2r_pooled.se;
  return out;
}

PooledResult pool_ancova(const ImputationSet& imputations, double ci_level) {
  const int m = imputations.m;
  MIResult r;
  r.estimates.resize(m);
  r.variances.resize(m);
  for (int j = 0; j < m; ++j) {
    AncovaResult a = ancova(imputations.datasets[j]);
    r.estimates(j) = a.estimate;
    r.variances(j) = a.se * a.se;
    r.complete_df = a.df;
  }
  return rubin_pool(r, ci_level);
}

namespace {

TippingRow evaluate_k(const TrialDataset& data, const TippingConfig& config,
                      const ArmFits& fits, double k) {
  MethodSpec ms;
  ms.method = Method::Causal;
  ms.kspec.variant = config.family;
  if (config.family == KVariant::exponential_k1) {
    ms.kspec.k1 = k;
  } else {
    ms.kspec.k0 = k;
  }
  ms.cov_source = config.cov_source;
  ms.beta_source = config.beta_source;
  ms.reference = data.arm_labels[0];

  ImputationSet imp =
      impute_with_fits(data, ms, config.m, config.seed, fits);
  PooledResult pooled = pool_ancova(imp, 1.0 - config.alpha_level);
  return TippingRow{k, pooled.estimate, pooled.ci_low, pooled.ci_high,
                    pooled.p_value};
}

}  // namespace

TippingResult tipping_point(const TrialDataset& data,
                            const TippingConfig& config) {
  if (!(config.k_max > config.k_min) || !std::isfinite(config.k_min) ||
      !std::isfinite(config.k_max)) {
    throw ValidationError("tipping-point range must be finite and increasing");
  }
  if (config.family == KVariant::exponential_k1 &&
      (config.k_min < 0.0 || config.k_max > 1.0)) {
    throw ValidationError("exponential-decay sweep requires k1 in [0, 1]");
  }
  if (config.grid_points < 2) {
    throw ValidationError("need at least two grid points");
  }

  ArmFits fits = fit_arms(data);

  TippingResult out;
  out.curve.resize(config.grid_points);
  const double step =
      (config.k_max - config.k_min) / (config.grid_points - 1);
  parallel_for(config.grid_points, config.workers, [&](int i) {
    out.curve[i] = evaluate_k(data, config, fits, config.k_min + i * step);
  });

  auto significant = [&](const TippingRow& row) {
    return row.p < config.alpha_level;
  };
  int bracket = -1;
  for (int i = 0; i + 1 < config.grid_points; ++i) {
    if (significant(out.curve[i]) != significant(out.curve[i + 1])) {
      bracket = i;
      break;
    }
  }
  if (bracket < 0) return out;

  double lo = out.curve[bracket].k;
  double hi = out.curve[bracket + 1].k;
  bool lo_sig = significant(out.curve[bracket]);
  for (int step_i = 0; step_i < config.bisect_steps; ++step_i) {
    double mid = 0.5 * (lo + hi);
    TippingRow row = evaluate_k(data, config, fits, mid);
    if (significant(row) == lo_sig) {
      lo = mid;
    } else {
      hi = mid;
    }
  }
  out.crossing = 0.5 * (lo + hi);
  return out;
}

}  // namespace defacto
