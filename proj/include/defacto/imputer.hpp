#pragma once

#include <cstdint>
#include <functional>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "defacto/data.hpp"
#include "defacto/estimation.hpp"
#include "defacto/mvn.hpp"
#include "defacto/rng.hpp"

namespace defacto {

// Sensitivity parameterization of the maintained treatment effect after
// discontinuation. K_t maps the on-treatment mean advantage through visit t
// onto the post-discontinuation visits.
enum class KVariant { constant_k0, exponential_k1, combined, full_matrix };

struct KSpec {
  KVariant variant = KVariant::constant_k0;
  double k0 = 1.0;
  double k1 = 1.0;
  // Take k from each subject's k_value instead of k0 (carry-forward form
  // with a participant-specific scalar).
  bool per_subject = false;
  // full_matrix: explicit K_t per discontinuation time, indexed by t.
  std::vector<MatrixXd> matrices;
};

enum class Method { MAR, LMCF, J2R, CIR, CR, Causal };
enum class CovSource { reference_arm, active_arm };

struct MethodSpec {
  Method method = Method::Causal;
  KSpec kspec;                            // Causal only
  CovSource cov_source = CovSource::reference_arm;
  std::optional<CovSource> beta_source;   // defaults to cov_source
  std::string reference = "control";      // arm label acting as reference

  CovSource beta() const { return beta_source.value_or(cov_source); }
};

struct ImputationSet {
  int m = 0;
  std::vector<TrialDataset> datasets;
  // Parameter draws used for each imputation: (control, active).
  std::vector<std::pair<MvnParams, MvnParams>> draws;
  std::vector<MatrixXd> coef_draws;  // shared covariate coefficients, if any
  std::uint64_t seed = 0;
};

// K_t as a (T-t) x (t+1) matrix. The first column never affects the
// imputation mean (the baseline treatment effect is zero) and is emitted
// as zeros for the parametric variants. subject_k supplies the
// participant-specific scalar when kspec.per_subject is set.
MatrixXd build_K(const KSpec& kspec, int t,
                 const std::vector<double>& visit_times,
                 std::optional<double> subject_k = std::nullopt);

// Mean of the post-discontinuation imputation distribution for a subject
// discontinuing at t with complete history y_pre. ref/act hold that
// subject's mean paths under control and active treatment with the
// corresponding covariances.
VectorXd imputation_mean(const MethodSpec& method, const MvnParams& ref,
                         const MvnParams& act, const VectorXd& y_pre, int t,
                         const std::vector<double>& visit_times,
                         std::optional<double> subject_k = std::nullopt);

// Same with the regression coefficient matrix supplied by the caller
// (avoids refactorizing per subject when the covariances are shared).
VectorXd imputation_mean_given_beta(const MethodSpec& method,
                                    const MvnParams& ref, const MvnParams& act,
                                    const VectorXd& y_pre, int t,
                                    const std::vector<double>& visit_times,
                                    const MatrixXd& beta,
                                    std::optional<double> subject_k = std::nullopt);

// Residual covariance of the post block given the pre block, taken from
// the cov_source arm.
CovMatrix imputation_cov(const MethodSpec& method, const MvnParams& ref,
                         const MvnParams& act, int t);

// Draw (mu*, Sigma*) from the approximate posterior: Sigma* from an
// inverse Wishart with df n-1 and scale n*Sigma_hat, then
// mu* ~ N(mu_hat, Sigma*/n).
MvnParams posterior_draw(const FittedArmModel& model, Rng& rng);

MatrixXd inverse_wishart(double df, const MatrixXd& scale, Rng& rng);

struct ImputeOptions {
  bool draw_parameters = true;  // false: impute at the ML estimates
  FitConfig fit;
};

ImputationSet impute_dataset(const TrialDataset& data, const MethodSpec& method,
                             int m, std::uint64_t seed,
                             const ImputeOptions& options = {});

// Same pipeline with the model fits supplied by the caller (reused across
// sensitivity-parameter values).
ImputationSet impute_with_fits(const TrialDataset& data,
                               const MethodSpec& method, int m,
                               std::uint64_t seed, const ArmFits& fits,
                               const ImputeOptions& options = {});

// Lowest-level entry: parameter draws fixed by the caller. Residual draws
// are keyed by (seed, imputation index, subject id), so two methods run
// with identical draws and seed produce identical fills wherever their
// imputation distributions coincide.
ImputationSet impute_with_draws(
    const TrialDataset& data, const MethodSpec& method,
    const std::vector<std::pair<MvnParams, MvnParams>>& draws,
    const std::vector<MatrixXd>& coef_draws, std::uint64_t seed);

// Streaming variant: invokes consume(j, completed) for each imputation,
// reusing one buffer instead of materializing all m datasets. Fill values
// are identical to impute_with_draws under the same arguments.
void impute_each(const TrialDataset& data, const MethodSpec& method,
                 const std::vector<std::pair<MvnParams, MvnParams>>& draws,
                 const std::vector<MatrixXd>& coef_draws, std::uint64_t seed,
                 const std::function<void(int, const TrialDataset&)>& consume);

}  // namespace defacto
