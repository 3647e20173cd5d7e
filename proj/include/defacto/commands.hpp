#pragma once

#include <cstdint>
#include <optional>
#include <string>

#include "defacto/estimands.hpp"
#include "defacto/io.hpp"
#include "defacto/simulate.hpp"

namespace defacto {

// Resolved configuration for the data-driven commands. Values come from an
// optional JSON config file with command-line flags layered on top.
struct RunConfig {
  std::string input;
  ColumnMapping columns;
  std::string reference;

  std::string method = "Causal";  // MAR, LMCF, J2R, CIR, CR, Causal
  std::string k_family = "constant_k0";
  double k0 = 1.0;
  double k1 = 1.0;
  bool per_subject_k = false;
  std::string cov_source = "reference";  // reference | active
  std::string beta_source;               // empty: follow cov_source
  std::string engine = "mi";             // analyze: mi | closed_form | j2r

  int m = 100;
  std::uint64_t seed = 0;
  double alpha = 0.05;
  std::string output_dir = ".";
  int workers = 0;

  // tipping-point sweep
  double k_min = 0.0;
  double k_max = 1.0;
  int grid_points = 13;
  int bisect_steps = 20;

  MethodSpec method_spec() const;
  KSpec k_spec() const;
};

// Loads a config file (plain config or a manifest from a previous run) and
// returns the embedded RunConfig.
RunConfig load_config(const std::string& path);

std::string config_json(const RunConfig& cfg);

int command_fit(const RunConfig& cfg);
int command_impute(const RunConfig& cfg);
int command_analyze(const RunConfig& cfg);
int command_tipping(const RunConfig& cfg);

struct SimulateConfig {
  StudyConfig study;
  std::string output_dir = ".";
};

SimulateConfig load_simulate_config(const std::string& path);
int command_simulate(const SimulateConfig& cfg);

// Maps a thrown error to the documented exit codes: 2 validation,
// 3 convergence/numerical failure, 4 I/O.
int run_guarded(const std::function<int()>& fn);

}  // namespace defacto
