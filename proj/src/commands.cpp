#include "defacto/commands.hpp"

#include <filesystem>
#include <fstream>
#include <iostream>
#include <json.hpp>

#include "defacto/svg.hpp"
#include "defacto/version.hpp"

namespace defacto {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

Method parse_method(const std::string& name) {
  if (name == "MAR") return Method::MAR;
  if (name == "LMCF") return Method::LMCF;
  if (name == "J2R") return Method::J2R;
  if (name == "CIR") return Method::CIR;
  if (name == "CR") return Method::CR;
  if (name == "Causal") return Method::Causal;
  throw ValidationError("unknown method '" + name + "'");
}

KVariant parse_family(const std::string& name) {
  if (name == "constant_k0") return KVariant::constant_k0;
  if (name == "exponential_k1") return KVariant::exponential_k1;
  if (name == "combined") return KVariant::combined;
  throw ValidationError("unknown k family '" + name + "'");
}

CovSource parse_source(const std::string& name) {
  if (name == "reference") return CovSource::reference_arm;
  if (name == "active") return CovSource::active_arm;
  throw ValidationError("cov/beta source must be 'reference' or 'active'");
}

json mapping_to_json(const ColumnMapping& m) {
  return json{{"subject", m.subject},
              {"arm", m.arm},
              {"visit", m.visit},
              {"outcome", m.outcome},
              {"outcome_columns", m.outcome_columns},
              {"visit_times", m.visit_times},
              {"covariates", m.covariates},
              {"categorical_covariates", m.categorical_covariates},
              {"k_column", m.k_column},
              {"disc_column", m.disc_column},
              {"na_token", m.na_token},
              {"delimiter", std::string(1, m.delimiter)}};
}

void mapping_from_json(const json& j, ColumnMapping& m) {
  m.subject = j.value("subject", m.subject);
  m.arm = j.value("arm", m.arm);
  m.visit = j.value("visit", m.visit);
  m.outcome = j.value("outcome", m.outcome);
  m.outcome_columns = j.value("outcome_columns", m.outcome_columns);
  m.visit_times = j.value("visit_times", m.visit_times);
  m.covariates = j.value("covariates", m.covariates);
  m.categorical_covariates =
      j.value("categorical_covariates", m.categorical_covariates);
  m.k_column = j.value("k_column", m.k_column);
  m.disc_column = j.value("disc_column", m.disc_column);
  m.na_token = j.value("na_token", m.na_token);
  std::string d = j.value("delimiter", std::string(1, m.delimiter));
  if (d.size() != 1) throw ValidationError("delimiter must be one character");
  m.delimiter = d[0];
}

json config_to_json(const RunConfig& cfg) {
  return json{{"input", cfg.input},
              {"columns", mapping_to_json(cfg.columns)},
              {"reference", cfg.reference},
              {"method", cfg.method},
              {"k_family", cfg.k_family},
              {"k0", cfg.k0},
              {"k1", cfg.k1},
              {"per_subject_k", cfg.per_subject_k},
              {"cov_source", cfg.cov_source},
              {"beta_source", cfg.beta_source},
              {"engine", cfg.engine},
              {"m", cfg.m},
              {"seed", cfg.seed},
              {"alpha", cfg.alpha},
              {"output_dir", cfg.output_dir},
              {"workers", cfg.workers},
              {"k_min", cfg.k_min},
              {"k_max", cfg.k_max},
              {"grid_points", cfg.grid_points},
              {"bisect_steps", cfg.bisect_steps}};
}

RunConfig config_from_json(const json& j) {
  RunConfig cfg;
  cfg.input = j.value("input", cfg.input);
  if (j.contains("columns")) mapping_from_json(j.at("columns"), cfg.columns);
  cfg.reference = j.value("reference", cfg.reference);
  cfg.method = j.value("method", cfg.method);
  cfg.k_family = j.value("k_family", cfg.k_family);
  cfg.k0 = j.value("k0", cfg.k0);
  cfg.k1 = j.value("k1", cfg.k1);
  cfg.per_subject_k = j.value("per_subject_k", cfg.per_subject_k);
  cfg.cov_source = j.value("cov_source", cfg.cov_source);
  cfg.beta_source = j.value("beta_source", cfg.beta_source);
  cfg.engine = j.value("engine", cfg.engine);
  cfg.m = j.value("m", cfg.m);
  cfg.seed = j.value("seed", cfg.seed);
  cfg.alpha = j.value("alpha", cfg.alpha);
  cfg.output_dir = j.value("output_dir", cfg.output_dir);
  cfg.workers = j.value("workers", cfg.workers);
  cfg.k_min = j.value("k_min", cfg.k_min);
  cfg.k_max = j.value("k_max", cfg.k_max);
  cfg.grid_points = j.value("grid_points", cfg.grid_points);
  cfg.bisect_steps = j.value("bisect_steps", cfg.bisect_steps);
  return cfg;
}

std::ofstream open_output(const fs::path& path) {
  std::ofstream out(path);
  if (!out) {
    throw IoError("cannot write output file: " + path.string());
  }
  out.precision(17);
  return out;
}

fs::path prepare_output_dir(const std::string& dir) {
  fs::path p(dir);
  std::error_code ec;
  fs::create_directories(p, ec);
  if (ec) {
    throw IoError("cannot create output directory: " + dir);
  }
  return p;
}

void write_manifest(const fs::path& dir, const std::string& command,
                    const json& config) {
  json manifest{{"tool", "defacto"},
                {"version", kVersion},
                {"command", command},
                {"config", config},
                {"config_hash", hash_tag(config.dump())}};
  open_output(dir / "manifest.json") << manifest.dump(2) << "\n";
}

TrialDataset load_input(const RunConfig& cfg, IngestReport* report = nullptr) {
  if (cfg.input.empty()) {
    throw ValidationError("no input file given");
  }
  if (cfg.reference.empty()) {
    throw ValidationError("no reference arm given");
  }
  IngestReport local;
  IngestReport& rep = report ? *report : local;
  TrialDataset data = ingest(cfg.input, cfg.columns, cfg.reference, &rep);
  if (rep.excluded_no_postbaseline > 0) {
    std::cerr << "note: excluded " << rep.excluded_no_postbaseline
              << " subject(s) with no post-baseline observation\n";
  }
  return data;
}

json pooled_to_json(const PooledResult& p) {
  return json{{"estimate", p.estimate},
              {"se", p.se},
              {"within", p.within},
              {"between", p.between},
              {"total_var", p.total_var},
              {"df", p.df},
              {"ci_low", p.ci_low},
              {"ci_high", p.ci_high},
              {"p_value", p.p_value},
              {"m", p.m},
              {"degenerate_between", p.degenerate_between}};
}

void write_draws_summary(const fs::path& dir, const ImputationSet& imp,
                         const TrialDataset& data) {
  auto out = open_output(dir / "draws_summary.csv");
  out << "imputation,arm,visit,mean,variance\n";
  for (int j = 0; j < imp.m; ++j) {
    for (int a = 0; a < 2; ++a) {
      const MvnParams& p = a == 0 ? imp.draws[j].first : imp.draws[j].second;
      for (int t = 0; t < p.dim(); ++t) {
        out << j << "," << data.arm_labels[a] << "," << data.visit_times[t]
            << "," << p.mean(t) << "," << p.cov(t, t) << "\n";
      }
    }
  }
}

}  // namespace

MethodSpec RunConfig::method_spec() const {
  MethodSpec ms;
  ms.method = parse_method(method);
  ms.kspec = k_spec();
  ms.cov_source = parse_source(cov_source);
  if (!beta_source.empty()) ms.beta_source = parse_source(beta_source);
  ms.reference = reference;
  return ms;
}

KSpec RunConfig::k_spec() const {
  KSpec ks;
  ks.variant = parse_family(k_family);
  ks.k0 = k0;
  ks.k1 = k1;
  ks.per_subject = per_subject_k;
  return ks;
}

RunConfig load_config(const std::string& path) {
  std::ifstream in(path);
  if (!in) {
    throw IoError("cannot open config file: " + path);
  }
  json j;
  try {
    in >> j;
  } catch (const json::exception& e) {
    throw ParseError(std::string("config is not valid JSON: ") + e.what());
  }
  // A manifest from a previous run embeds the config.
  if (j.contains("config") && j.contains("tool")) {
    j = j.at("config");
  }
  return config_from_json(j);
}

std::string config_json(const RunConfig& cfg) {
  return config_to_json(cfg).dump(2);
}

int command_fit(const RunConfig& cfg) {
  TrialDataset data = load_input(cfg);
  fs::path dir = prepare_output_dir(cfg.output_dir);

  ArmFits fits = fit_arms(data);
  DeJureEstimates dejure = fit_mmrm(data);
  DiscontinuationDistribution alpha = estimate_alpha(data);

  json out;
  for (int a = 0; a < 2; ++a) {
    const FittedArmModel& f = a == 0 ? fits.control : fits.active;
    json jf{{"arm", data.arm_labels[a]},
            {"n", f.n},
            {"loglik", f.loglik},
            {"converged", f.converged},
            {"iterations", f.iterations}};
    jf["mean"] = std::vector<double>(f.params.mean.begin(), f.params.mean.end());
    json cov = json::array();
    for (int i = 0; i < f.params.dim(); ++i) {
      json row = json::array();
      for (int k = 0; k < f.params.dim(); ++k) row.push_back(f.params.cov(i, k));
      cov.push_back(row);
    }
    jf["covariance"] = cov;
    if (f.covariate_coefficients.size() > 0) {
      json coefs = json::array();
      for (int i = 0; i < f.covariate_coefficients.rows(); ++i) {
        json row = json::array();
        for (int k = 0; k < f.covariate_coefficients.cols(); ++k) {
          row.push_back(f.covariate_coefficients(i, k));
        }
        coefs.push_back(row);
      }
      jf["covariate_coefficients"] = coefs;
      jf["covariate_names"] = data.covariate_names;
    }
    out["arms"].push_back(jf);
  }
  out["discontinuation"] =
      std::vector<double>(alpha.alpha.begin(), alpha.alpha.end());
  open_output(dir / "fit.json") << out.dump(2) << "\n";

  auto dj = open_output(dir / "dejure.csv");
  dj << "visit,delta,se\n";
  for (int t = 0; t < dejure.delta.size(); ++t) {
    dj << data.visit_times[t + 1] << "," << dejure.delta(t) << ","
       << dejure.ses(t) << "\n";
  }
  write_manifest(dir, "fit", config_to_json(cfg));
  std::cout << "fit written to " << dir.string() << "\n";
  return 0;
}

int command_impute(const RunConfig& cfg) {
  TrialDataset data = load_input(cfg);
  fs::path dir = prepare_output_dir(cfg.output_dir);

  ImputationSet imp = impute_dataset(data, cfg.method_spec(), cfg.m, cfg.seed);
  auto out = open_output(dir / "imputations.csv");
  std::ostringstream buffer;
  for (int j = 0; j < imp.m; ++j) {
    std::ostringstream one;
    write_dataset_long(one, imp.datasets[j], "imputation", std::to_string(j));
    std::string text = one.str();
    if (j > 0) {
      text.erase(0, text.find('\n') + 1);  // keep a single header
    }
    buffer << text;
  }
  out << buffer.str();
  write_draws_summary(dir, imp, data);
  write_manifest(dir, "impute", config_to_json(cfg));
  std::cout << imp.m << " imputations written to " << dir.string() << "\n";
  return 0;
}

int command_analyze(const RunConfig& cfg) {
  TrialDataset data = load_input(cfg);
  fs::path dir = prepare_output_dir(cfg.output_dir);
  json result;

  if (cfg.engine == "mi") {
    ImputationSet imp =
        impute_dataset(data, cfg.method_spec(), cfg.m, cfg.seed);
    MIResult mi;
    mi.estimates.resize(imp.m);
    mi.variances.resize(imp.m);
    auto per = open_output(dir / "per_imputation.csv");
    per << "imputation,estimate,se\n";
    for (int j = 0; j < imp.m; ++j) {
      AncovaResult a = ancova(imp.datasets[j]);
      mi.estimates(j) = a.estimate;
      mi.variances(j) = a.se * a.se;
      mi.complete_df = a.df;
      per << j << "," << a.estimate << "," << a.se << "\n";
    }
    PooledResult pooled = rubin_pool(mi, 1.0 - cfg.alpha);
    result = pooled_to_json(pooled);
    write_draws_summary(dir, imp, data);
  } else if (cfg.engine == "closed_form" || cfg.engine == "j2r") {
    DeJureEstimates dejure = fit_mmrm(data);
    DiscontinuationDistribution alpha = estimate_alpha(data);
    EstimateWithSe est;
    if (cfg.engine == "closed_form") {
      est = defacto_closed_form(dejure, alpha, cfg.k_spec(), data.visit_times);
    } else {
      RunConfig j2r_cfg = cfg;
      j2r_cfg.method = "J2R";
      ImputationSet imp =
          impute_dataset(data, j2r_cfg.method_spec(), cfg.m, cfg.seed);
      PooledResult j2r = pool_ancova(imp, 1.0 - cfg.alpha);
      est = defacto_from_j2r(j2r, dejure, alpha, cfg.k_spec(),
                             data.visit_times);
      result["j2r"] = pooled_to_json(j2r);
    }
    result["estimate"] = est.estimate;
    result["se"] = est.se;
  } else {
    throw ValidationError("engine must be mi, closed_form or j2r");
  }

  open_output(dir / "pooled.json") << result.dump(2) << "\n";
  write_manifest(dir, "analyze", config_to_json(cfg));
  std::cout << "estimate " << result["estimate"].get<double>();
  if (result.contains("p_value")) {
    std::cout << " (p = " << result["p_value"].get<double>() << ")";
  }
  std::cout << "\n";
  return 0;
}

int command_tipping(const RunConfig& cfg) {
  TrialDataset data = load_input(cfg);
  fs::path dir = prepare_output_dir(cfg.output_dir);

  TippingConfig tc;
  tc.family = parse_family(cfg.k_family);
  if (tc.family == KVariant::combined) {
    throw ValidationError("tipping sweep supports constant_k0 or exponential_k1");
  }
  tc.k_min = cfg.k_min;
  tc.k_max = cfg.k_max;
  tc.grid_points = cfg.grid_points;
  tc.bisect_steps = cfg.bisect_steps;
  tc.m = cfg.m;
  tc.alpha_level = cfg.alpha;
  tc.cov_source = parse_source(cfg.cov_source);
  if (!cfg.beta_source.empty()) tc.beta_source = parse_source(cfg.beta_source);
  tc.seed = cfg.seed;
  tc.workers = cfg.workers;

  TippingResult result = tipping_point(data, tc);

  auto out = open_output(dir / "tipping_curve.csv");
  out << "k,estimate,ci_low,ci_high,p\n";
  for (const auto& row : result.curve) {
    out << row.k << "," << row.estimate << "," << row.ci_low << ","
        << row.ci_high << "," << row.p << "\n";
  }
  const std::string k_label =
      tc.family == KVariant::constant_k0 ? "k0" : "k1";
  open_output(dir / "tipping_plot.svg") << tipping_svg(result, k_label);

  json summary{{"k_label", k_label}, {"alpha", cfg.alpha}};
  if (result.crossing) {
    summary["crossing"] = *result.crossing;
    std::cout << "tipping point: " << k_label << " = " << *result.crossing
              << "\n";
  } else {
    summary["crossing"] = nullptr;
    std::cout << "no crossing in [" << cfg.k_min << ", " << cfg.k_max
              << "]\n";
  }
  open_output(dir / "summary.json") << summary.dump(2) << "\n";
  write_manifest(dir, "tipping-point", config_to_json(cfg));
  return 0;
}

SimulateConfig load_simulate_config(const std::string& path) {
  std::ifstream in(path);
  if (!in) {
    throw IoError("cannot open study config: " + path);
  }
  json j;
  try {
    in >> j;
  } catch (const json::exception& e) {
    throw ParseError(std::string("study config is not valid JSON: ") + e.what());
  }
  if (j.contains("config") && j.contains("tool")) j = j.at("config");
  SimulateConfig cfg;
  cfg.study.n_per_arm = j.value("n_per_arm", cfg.study.n_per_arm);
  cfg.study.reps = j.value("reps", cfg.study.reps);
  cfg.study.m = j.value("m", cfg.study.m);
  cfg.study.k_values = j.value("k_values", cfg.study.k_values);
  cfg.study.seed = j.value("seed", cfg.study.seed);
  cfg.study.workers = j.value("workers", cfg.study.workers);
  cfg.output_dir = j.value("output_dir", cfg.output_dir);
  return cfg;
}

int command_simulate(const SimulateConfig& cfg) {
  fs::path dir = prepare_output_dir(cfg.output_dir);
  StudyResult result = run_study(cfg.study);

  auto t3 = open_output(dir / "table3.csv");
  t3 << "mechanism,panel,row,k,mean_estimate,mc_se\n";
  auto t4 = open_output(dir / "table4.csv");
  t4 << "mechanism,panel,row,k,average_se,empirical_se,mc_se_avg,mc_se_emp\n";
  for (size_t mech = 0; mech < result.mechanisms.size(); ++mech) {
    for (size_t ri = 0; ri < result.rows.size(); ++ri) {
      const StudyRow& row = result.rows[ri];
      const CellStats& c = result.cells[mech][ri];
      t3 << result.mechanisms[mech] << "," << row.panel << "," << row.label
         << "," << row.k << "," << c.mean_est << "," << c.mcse_mean << "\n";
      t4 << result.mechanisms[mech] << "," << row.panel << "," << row.label
         << "," << row.k << "," << c.avg_se << "," << c.emp_se << ","
         << c.mcse_avg << "," << c.mcse_emp << "\n";
    }
  }

  json config{{"n_per_arm", cfg.study.n_per_arm},
              {"reps", cfg.study.reps},
              {"m", cfg.study.m},
              {"k_values", cfg.study.k_values},
              {"seed", cfg.study.seed},
              {"workers", cfg.study.workers},
              {"output_dir", cfg.output_dir}};
  write_manifest(dir, "simulate", config);
  std::cout << "study tables written to " << dir.string() << "\n";
  return 0;
}

int run_guarded(const std::function<int()>& fn) {
  try {
    return fn();
  } catch (const ParseError& e) {
    std::cerr << "error: " << e.what();
    if (e.row >= 0) std::cerr << " (row " << e.row << ")";
    std::cerr << "\n";
    return 2;
  } catch (const ValidationError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  } catch (const NoRoot& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  } catch (const NotConverged& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 3;
  } catch (const SingularFit& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 3;
  } catch (const NotPositiveDefinite& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 3;
  } catch (const RankDeficient& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 3;
  } catch (const DrawFailed& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 3;
  } catch (const IoError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 4;
  } catch (const Error& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
}

}  // namespace defacto
