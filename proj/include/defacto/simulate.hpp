#pragma once

#include <array>
#include <cstdint>
#include <string>
#include <vector>

#include "defacto/data.hpp"
#include "defacto/mvn.hpp"
#include "defacto/rng.hpp"

namespace defacto {

// One data-generating mechanism: a three-visit trial (baseline + two
// follow-ups) with AR(1) untreated outcomes, additive treatment effects
// with optional between-participant heterogeneity, and logistic
// discontinuation after the first follow-up in the active arm.
struct SimConfig {
  int n_per_arm = 250;
  int reps = 1000;  // used by run_study
  VectorXd mu0 = (VectorXd(3) << 10.0, 12.0, 14.0).finished();
  double sd = 3.0;
  double lag1_corr = 0.5;
  double delta1 = 1.0;
  double delta2 = 2.0;
  double heterogeneity_sd = 0.0;  // scale of u1 (0 or 2.5)
  double tau1 = 0.0;              // 0: MCAR, 1: MAR discontinuation
  double target_dropout = 0.5;    // p(D_a = 1)
  // Values of the true maintained-effect fraction k for which complete
  // potential-outcome datasets are materialized.
  std::vector<double> k_values = {0.0, 0.5, 0.74, 1.0};
  std::uint64_t seed = 1;
};

// Complete datasets indexed by [k index][u2 option], where option 0 draws
// the partly-treated residual u2 with corr(u1, u2) = 0.5 (making the
// partly-treated regression match the control arm's) and option 1 with
// corr = 1 (matching the active arm's).
struct GeneratedTrial {
  TrialDataset observed;
  std::vector<std::array<TrialDataset, 2>> complete;
};

// Untreated-outcome covariance: AR(1) with the configured sd and lag-one
// correlation.
CovMatrix base_covariance(const SimConfig& cfg);

// On-treatment covariance of (Y0, Y1(1), Y2(2)): base plus the shared
// heterogeneity term on both follow-ups.
CovMatrix active_covariance(const SimConfig& cfg);

// Root of E[expit(tau0 + tau1 Y)] = target over Y ~ N(y1_mean, y1_var),
// by 32-node Gauss-Hermite quadrature and bisection.
double solve_tau0(double tau1, double y1_mean, double y1_var, double target);

GeneratedTrial generate_trial(const SimConfig& cfg, Rng& rng);

struct StudyConfig {
  int n_per_arm = 250;
  int reps = 1000;
  int m = 25;  // imputations per replicate
  std::vector<double> k_values = {0.0, 0.5, 0.74, 1.0};
  std::uint64_t seed = 20260801;
  int workers = 0;
  double max_failed_fraction = 0.01;
};

// A row of the simulation report: one analysis configuration.
struct StudyRow {
  std::string panel;   // "A" complete data, "B" causal MI, "C" RBI
  std::string label;
  double k = 0.0;           // panels A and B
  int beta_choice = 0;      // 0: control-arm regression, 1: active-arm
  Method method = Method::Causal;  // panel C
};

struct CellStats {
  double mean_est = 0.0;
  double emp_se = 0.0;   // SD of point estimates
  double avg_se = 0.0;   // mean of reported SEs
  double mcse_mean = 0.0;
  double mcse_emp = 0.0;
  double mcse_avg = 0.0;
  int reps = 0;
};

struct StudyResult {
  std::vector<std::string> mechanisms;  // column labels
  std::vector<StudyRow> rows;
  // cells[mechanism][row]
  std::vector<std::vector<CellStats>> cells;
  std::vector<int> failed;  // failed replicate count per mechanism
};

// Runs the full grid: four data-generating mechanisms (MCAR/MAR crossed
// with homogeneous/heterogeneous treatment effects), complete-data
// analyses for each k and u2 option, causal-model MI over the k grid with
// both regression sources, and J2R/CR/CIR under both covariance sources.
StudyResult run_study(const StudyConfig& config);

}  // namespace defacto
