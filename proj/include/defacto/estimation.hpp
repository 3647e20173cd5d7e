#pragma once

#include <vector>

#include "defacto/data.hpp"
#include "defacto/mvn.hpp"

namespace defacto {

struct EmOptions {
  int max_iter = 500;
  double tol = 1e-8;                // relative loglik change
  bool require_convergence = true;  // throw NotConverged at max_iter
};

enum class CovariateTiming { per_visit, shared };

struct FitConfig {
  EmOptions em;
  CovariateTiming covariate_timing = CovariateTiming::per_visit;
  bool pooled_covariance = false;  // single covariance across arms
};

// ML fit of one arm's visit means and unstructured covariance under MAR.
// With baseline covariates, params.mean holds the visit means at reference
// covariate values (all expanded covariates zero) and
// covariate_coefficients holds the per-visit (rows) coefficients.
struct FittedArmModel {
  Arm arm = Arm::control;
  MvnParams params;
  MatrixXd covariate_coefficients;  // (T+1) x n_cov, or 1 x n_cov when shared
  MatrixXd coef_cov;  // asymptotic covariance of [visit means; vec(coefs)]
  int n = 0;
  double loglik = 0.0;
  bool converged = false;
  int iterations = 0;
  std::vector<double> loglik_trace;

  // Subject-specific mean path: params.mean + coefficients * covariates.
  VectorXd subject_mean(const Subject& s) const;
};

// Both arms fitted jointly: arm-specific visit means and covariances,
// covariate coefficients shared across arms (each model carries a copy).
struct ArmFits {
  FittedArmModel control;
  FittedArmModel active;
  MatrixXd shared_coef_cov;  // asymptotic covariance of vec(shared coefs)

  const FittedArmModel& of(Arm a) const {
    return a == Arm::control ? control : active;
  }
};

// Visit-specific adjusted treatment effects (active - control) for
// t = 1..T; the baseline difference is a nuisance and not reported.
struct DeJureEstimates {
  VectorXd delta;  // length T
  VectorXd ses;    // length T
  MatrixXd vcov;   // T x T
};

FittedArmModel fit_mar_mvn(const TrialDataset& data, Arm arm,
                           const FitConfig& config = {});

ArmFits fit_arms(const TrialDataset& data, const FitConfig& config = {});

// Joint likelihood model with arm-by-visit means, shared baseline-covariate
// coefficients and arm-specific unstructured covariance; model-based SEs.
DeJureEstimates fit_mmrm(const TrialDataset& data, const FitConfig& config = {});

struct AncovaResult {
  double estimate = 0.0;  // coefficient on the active-arm indicator
  double se = 0.0;
  double df = 0.0;  // residual degrees of freedom
};

// OLS of the final-visit outcome on arm, baseline outcome and any
// configured baseline covariates. Requires a complete final visit.
AncovaResult ancova(const TrialDataset& complete_data);

}  // namespace defacto
