#pragma once

#include <cstdint>
#include <optional>
#include <vector>

#include "defacto/data.hpp"
#include "defacto/estimation.hpp"
#include "defacto/imputer.hpp"

namespace defacto {

// Per-imputation analysis results feeding Rubin's rules.
struct MIResult {
  VectorXd estimates;
  VectorXd variances;  // squared standard errors
  double complete_df = 0.0;
};

struct PooledResult {
  double estimate = 0.0;
  double within = 0.0;      // W
  double between = 0.0;     // B
  double total_var = 0.0;   // W + (1 + 1/m) B
  double se = 0.0;
  double df = 0.0;          // Barnard-Rubin
  double ci_low = 0.0;
  double ci_high = 0.0;
  double p_value = 0.0;
  int m = 0;
  bool degenerate_between = false;  // B == 0: W-only result
};

struct DiscontinuationDistribution {
  VectorXd alpha;  // alpha_0..alpha_T
};

struct EstimateWithSe {
  double estimate = 0.0;
  double se = 0.0;
};

PooledResult rubin_pool(const MIResult& r, double ci_level = 0.95);

DiscontinuationDistribution estimate_alpha(const TrialDataset& data);

// Closed-form de facto estimate at the final visit as a linear combination
// of the de jure visit effects:
//   alpha_T * delta_T + sum_{t<T} alpha_t e_t' K_t delta_t,
// assuming no beta mismatch. The SE treats alpha as fixed.
EstimateWithSe defacto_closed_form(const DeJureEstimates& dejure,
                                   const DiscontinuationDistribution& alpha,
                                   const KSpec& kspec,
                                   const std::vector<double>& visit_times);

// De facto estimate built from a J2R run: the J2R estimate plus the
// maintained-effect correction, with the J2R pooled SE carried over.
EstimateWithSe defacto_from_j2r(const PooledResult& j2r_pooled,
                                const DeJureEstimates& dejure,
                                const DiscontinuationDistribution& alpha,
                                const KSpec& kspec,
                                const std::vector<double>& visit_times);

// Runs ancova on every completed dataset and pools.
PooledResult pool_ancova(const ImputationSet& imputations,
                         double ci_level = 0.95);

struct TippingConfig {
  KVariant family = KVariant::constant_k0;  // constant_k0 or exponential_k1
  double k_min = 0.0;
  double k_max = 1.0;
  int grid_points = 13;
  int bisect_steps = 20;
  int m = 100;
  double alpha_level = 0.05;
  CovSource cov_source = CovSource::reference_arm;
  std::optional<CovSource> beta_source;
  std::uint64_t seed = 0;
  int workers = 0;
};

struct TippingRow {
  double k = 0.0;
  double estimate = 0.0;
  double ci_low = 0.0;
  double ci_high = 0.0;
  double p = 0.0;
};

struct TippingResult {
  std::vector<TippingRow> curve;        // grid points, ascending k
  std::optional<double> crossing;       // k where significance flips
};

// Full-pipeline sensitivity sweep over k with common random numbers, then
// bisection between the first pair of grid cells where p crosses
// alpha_level.
TippingResult tipping_point(const TrialDataset& data,
                            const TippingConfig& config);

}  // namespace defacto
