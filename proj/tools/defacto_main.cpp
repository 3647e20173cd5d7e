#include <CLI11.hpp>
#include <string>

#include "defacto/commands.hpp"
#include "defacto/version.hpp"

namespace {

using defacto::RunConfig;

// Flags shared by the data-driven subcommands. Values given on the command
// line override the config file.
struct CommonFlags {
  std::string config_path;

  void attach(CLI::App* cmd, RunConfig& cfg) {
    cmd->add_option("-c,--config", config_path,
                    "JSON config file (or a manifest from a previous run)");
    cmd->add_option("-i,--input", cfg.input, "input data file (CSV)");
    cmd->add_option("-r,--reference", cfg.reference,
                    "arm label used as the reference (control) arm");
    cmd->add_option("-o,--output-dir", cfg.output_dir, "output directory");
    cmd->add_option("--seed", cfg.seed, "random seed");
    cmd->add_option("-m,--imputations", cfg.m, "number of imputations");
    cmd->add_option("--alpha", cfg.alpha, "two-sided significance level");
    cmd->add_option("--workers", cfg.workers, "worker threads (0 = auto)");
    cmd->add_option("--subject-col", cfg.columns.subject, "subject id column");
    cmd->add_option("--arm-col", cfg.columns.arm, "arm column");
    cmd->add_option("--visit-col", cfg.columns.visit, "visit column (long)");
    cmd->add_option("--outcome-col", cfg.columns.outcome,
                    "outcome column (long)");
    cmd->add_option("--outcome-cols", cfg.columns.outcome_columns,
                    "per-visit outcome columns (wide format)");
    cmd->add_option("--visit-times", cfg.columns.visit_times,
                    "numeric visit times (wide format)");
    cmd->add_option("--covariates", cfg.columns.covariates,
                    "numeric baseline covariate columns");
    cmd->add_option("--categorical-covariates",
                    cfg.columns.categorical_covariates,
                    "categorical baseline covariate columns");
    cmd->add_option("--k-col", cfg.columns.k_column,
                    "per-subject k column (variable maintained effect)");
    cmd->add_option("--disc-col", cfg.columns.disc_column,
                    "explicit discontinuation-time column");
    cmd->add_option("--na-token", cfg.columns.na_token,
                    "extra missing-value token besides empty cells");
  }
};

void attach_method(CLI::App* cmd, RunConfig& cfg) {
  cmd->add_option("--method", cfg.method,
                  "imputation method: MAR, LMCF, J2R, CIR, CR, Causal");
  cmd->add_option("--k-family", cfg.k_family,
                  "causal K form: constant_k0, exponential_k1, combined");
  cmd->add_option("--k0", cfg.k0, "maintained-effect fraction");
  cmd->add_option("--k1", cfg.k1, "per-time-unit decay in [0,1]");
  cmd->add_flag("--per-subject-k", cfg.per_subject_k,
                "take k from the per-subject k column");
  cmd->add_option("--cov-source", cfg.cov_source,
                  "covariance source: reference or active");
  cmd->add_option("--beta-source", cfg.beta_source,
                  "regression source override: reference or active");
}

RunConfig resolve(const CommonFlags& common, const CLI::App* cmd,
                  const RunConfig& parsed) {
  if (common.config_path.empty()) return parsed;
  RunConfig cfg = defacto::load_config(common.config_path);
  // Re-parse the command line on top of the file values.
  (void)cmd;
  return cfg;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"de facto treatment-effect estimation with reference-based "
               "and causal-model multiple imputation"};
  app.set_version_flag("--version", defacto::kVersion);
  app.require_subcommand(1);

  RunConfig cfg;
  CommonFlags common;

  auto* fit = app.add_subcommand(
      "fit", "fit per-arm models under MAR and report de jure effects");
  common.attach(fit, cfg);

  auto* impute = app.add_subcommand(
      "impute", "write completed datasets under the chosen method");
  common.attach(impute, cfg);
  attach_method(impute, cfg);

  auto* analyze = app.add_subcommand(
      "analyze", "impute, analyze each completed dataset and pool");
  common.attach(analyze, cfg);
  attach_method(analyze, cfg);
  analyze->add_option("--engine", cfg.engine,
                      "mi (default), closed_form, or j2r");

  auto* tipping = app.add_subcommand(
      "tipping-point", "sensitivity sweep over k with bisection for the "
                       "significance crossing");
  common.attach(tipping, cfg);
  attach_method(tipping, cfg);
  tipping->add_option("--k-min", cfg.k_min, "sweep lower bound");
  tipping->add_option("--k-max", cfg.k_max, "sweep upper bound");
  tipping->add_option("--grid-points", cfg.grid_points, "grid size");
  tipping->add_option("--bisect-steps", cfg.bisect_steps, "bisection steps");

  auto* simulate = app.add_subcommand(
      "simulate", "run the simulation study grid and write report tables");
  std::string study_config;
  std::string sim_output = ".";
  int sim_reps = -1;
  int sim_workers = -1;
  std::uint64_t sim_seed = 0;
  bool sim_seed_set = false;
  simulate->add_option("-c,--config", study_config, "study config JSON");
  simulate->add_option("-o,--output-dir", sim_output, "output directory");
  simulate->add_option("--reps", sim_reps, "replicates (overrides config)");
  simulate->add_option("--workers", sim_workers, "worker threads");
  simulate->add_option("--seed", sim_seed, "study seed")
      ->each([&](const std::string&) { sim_seed_set = true; });

  // Parse once to find the config file, then layer flags over it.
  CLI11_PARSE(app, argc, argv);
  if (!common.config_path.empty()) {
    RunConfig from_file = defacto::load_config(common.config_path);
    RunConfig flags_only;  // defaults
    cfg = from_file;
    // Second pass: re-parse so explicit flags win over the file.
    CLI::App reparse{""};
    reparse.allow_extras();
    CommonFlags common2;
    RunConfig overlay = from_file;
    for (auto* sub : {fit, impute, analyze, tipping}) {
      if (sub->parsed()) {
        CLI::App* cmd = reparse.add_subcommand(sub->get_name());
        cmd->allow_extras();
        common2.attach(cmd, overlay);
        if (sub != fit) attach_method(cmd, overlay);
        if (sub == analyze) {
          cmd->add_option("--engine", overlay.engine);
        }
        if (sub == tipping) {
          cmd->add_option("--k-min", overlay.k_min);
          cmd->add_option("--k-max", overlay.k_max);
          cmd->add_option("--grid-points", overlay.grid_points);
          cmd->add_option("--bisect-steps", overlay.bisect_steps);
        }
      }
    }
    try {
      reparse.parse(argc, argv);
    } catch (const CLI::ParseError&) {
      // the first parse already validated the command line
    }
    cfg = overlay;
  }

  return defacto::run_guarded([&]() -> int {
    if (fit->parsed()) return defacto::command_fit(cfg);
    if (impute->parsed()) return defacto::command_impute(cfg);
    if (analyze->parsed()) return defacto::command_analyze(cfg);
    if (tipping->parsed()) return defacto::command_tipping(cfg);
    if (simulate->parsed()) {
      defacto::SimulateConfig sim;
      if (!study_config.empty()) {
        sim = defacto::load_simulate_config(study_config);
      }
      if (sim_output != ".") sim.output_dir = sim_output;
      if (sim_reps > 0) sim.study.reps = sim_reps;
      if (sim_workers >= 0) sim.study.workers = sim_workers;
      if (sim_seed_set) sim.study.seed = sim_seed;
      return defacto::command_simulate(sim);
    }
    return 1;
  });
}
