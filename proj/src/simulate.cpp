#include "defacto/simulate.hpp"

#include <cmath>

#include "defacto/estimands.hpp"
#include "defacto/estimation.hpp"
#include "defacto/imputer.hpp"
#include "defacto/parallel.hpp"
#include "defacto/quadrature.hpp"

namespace defacto {

namespace {

double expit(double x) {
  if (x >= 0.0) {
    return 1.0 / (1.0 + std::exp(-x));
  }
  double e = std::exp(x);
  return e / (1.0 + e);
}

char id_buf_arm(Arm a) { return a == Arm::control ? 'c' : 'a'; }

std::string subject_id(Arm a, int i) {
  char buf[16];
  std::snprintf(buf, sizeof(buf), "%c%05d", id_buf_arm(a), i);
  return buf;
}

}  // namespace

CovMatrix base_covariance(const SimConfig& cfg) {
  const int dim = static_cast<int>(cfg.mu0.size());
  MatrixXd s(dim, dim);
  for (int i = 0; i < dim; ++i)
    for (int j = 0; j < dim; ++j)
      s(i, j) = cfg.sd * cfg.sd * std::pow(cfg.lag1_corr, std::abs(i - j));
  return CovMatrix(std::move(s));
}

CovMatrix active_covariance(const SimConfig& cfg) {
  MatrixXd s = base_covariance(cfg).matrix();
  const double h = cfg.heterogeneity_sd * cfg.heterogeneity_sd;
  for (int i = 1; i <= 2; ++i)
    for (int j = 1; j <= 2; ++j) s(i, j) += h;
  return CovMatrix(std::move(s));
}

double solve_tau0(double tau1, double y1_mean, double y1_var, double target) {
  if (!(target > 0.0 && target < 1.0)) {
    throw NoRoot("target probability must lie strictly inside (0, 1)");
  }
  if (!(y1_var > 0.0)) {
    throw ValidationError("outcome variance must be positive");
  }
  auto [nodes, weights] = gauss_hermite(32);
  const double sd = std::sqrt(y1_var);
  auto prob = [&](double tau0) {
    double p = 0.0;
    for (int i = 0; i < nodes.size(); ++i) {
      p += weights(i) * expit(tau0 + tau1 * (y1_mean + sd * nodes(i)));
    }
    return p;
  };

  double lo = -1.0, hi = 1.0;
  for (int i = 0; i < 200 && prob(lo) > target; ++i) lo *= 2.0;
  for (int i = 0; i < 200 && prob(hi) < target; ++i) hi *= 2.0;
  if (prob(lo) > target || prob(hi) < target) {
    throw NoRoot("failed to bracket the discontinuation intercept");
  }
  for (int i = 0; i < 200; ++i) {
    double mid = 0.5 * (lo + hi);
    double p = prob(mid);
    if (p == target) return mid;
    (p < target ? lo : hi) = mid;
    if (hi - lo < 1e-14 * (1.0 + std::abs(lo) + std::abs(hi))) break;
  }
  return 0.5 * (lo + hi);
}

GeneratedTrial generate_trial(const SimConfig& cfg, Rng& rng) {
  if (cfg.mu0.size() != 3) {
    throw ValidationError("this trial design has baseline plus two visits");
  }
  if (cfg.heterogeneity_sd < 0.0) {
    throw ValidationError("heterogeneity sd must be non-negative");
  }
  const double hsd = cfg.heterogeneity_sd;
  const double tau0 =
      solve_tau0(cfg.tau1, cfg.mu0(1) + cfg.delta1,
                 base_covariance(cfg)(1, 1) + hsd * hsd, cfg.target_dropout);
  const MatrixXd l0 = cholesky(base_covariance(cfg));
  const double nan = std::numeric_limits<double>::quiet_NaN();

  TrialDataset skeleton;
  skeleton.visit_times = {0.0, 1.0, 2.0};
  GeneratedTrial out;
  out.observed = skeleton;
  out.complete.assign(cfg.k_values.size(), {skeleton, skeleton});

  auto add_everywhere = [&](const Subject& obs_subject,
                            const std::function<double(double, int)>& y2_complete) {
    out.observed.subjects.push_back(obs_subject);
    for (size_t ki = 0; ki < cfg.k_values.size(); ++ki) {
      for (int opt = 0; opt < 2; ++opt) {
        Subject s = obs_subject;
        if (s.disc_time < 2) {
          s.outcomes(2) = y2_complete(cfg.k_values[ki], opt);
        }
        out.complete[ki][opt].subjects.push_back(std::move(s));
      }
    }
  };

  for (int i = 0; i < cfg.n_per_arm; ++i) {
    VectorXd z(3);
    for (int t = 0; t < 3; ++t) z(t) = rng.normal();
    Subject s;
    s.id = subject_id(Arm::control, i);
    s.arm = Arm::control;
    s.outcomes = cfg.mu0 + l0 * z;
    s.disc_time = 2;
    add_everywhere(s, [](double, int) { return 0.0; });
  }

  for (int i = 0; i < cfg.n_per_arm; ++i) {
    VectorXd z(3);
    for (int t = 0; t < 3; ++t) z(t) = rng.normal();
    VectorXd y0 = cfg.mu0 + l0 * z;
    const double zu = rng.normal();
    const double ze = rng.normal();
    const double u1 = hsd * zu;
    const double y1_treated = y0(1) + cfg.delta1 + u1;
    const double y2_treated = y0(2) + cfg.delta2 + u1;
    const double p_disc = expit(tau0 + cfg.tau1 * y1_treated);
    const int d = rng.uniform() < p_disc ? 1 : 2;

    Subject s;
    s.id = subject_id(Arm::active, i);
    s.arm = Arm::active;
    s.outcomes.resize(3);
    s.outcomes << y0(0), y1_treated, (d == 2 ? y2_treated : nan);
    s.disc_time = d;

    // Partly-treated final outcome Y2(1) = Y2(0) + k delta_1 + u2 with u2
    // marginally like u1 and corr(u1, u2) of 0.5 (option 0) or 1 (option 1).
    const double u2_half = hsd * (0.5 * zu + std::sqrt(0.75) * ze);
    const double u2_full = u1;
    add_everywhere(s, [&, y2 = y0(2)](double k, int opt) {
      return y2 + k * cfg.delta1 + (opt == 0 ? u2_half : u2_full);
    });
  }
  return out;
}

namespace {

std::vector<StudyRow> study_rows(const std::vector<double>& k_values) {
  std::vector<StudyRow> rows;
  auto beta_name = [](int b) {
    return std::string("beta1(1)=beta1(") + (b == 0 ? "0" : "2") + ")";
  };
  for (int b = 0; b < 2; ++b) {
    for (double k : k_values) {
      rows.push_back({"A", "complete " + beta_name(b), k, b, Method::Causal});
    }
  }
  for (int b = 0; b < 2; ++b) {
    for (double k : k_values) {
      rows.push_back({"B", "causal " + beta_name(b), k, b, Method::Causal});
    }
  }
  const Method rbi[] = {Method::J2R, Method::CR, Method::CIR};
  const char* rbi_names[] = {"J2R", "CR", "CIR"};
  for (int c = 0; c < 2; ++c) {
    std::string cov = c == 0 ? "cov=control" : "cov=active";
    for (int mi = 0; mi < 3; ++mi) {
      rows.push_back({"C", std::string(rbi_names[mi]) + " " + cov, 0.0, c,
                      rbi[mi]});
    }
  }
  return rows;
}

struct RepOutcome {
  bool ok = false;
  std::vector<double> est;
  std::vector<double> se;
};

RepOutcome run_rep(const StudyConfig& study, const std::vector<StudyRow>& rows,
                   int mechanism, int rep) {
  SimConfig cfg;
  cfg.n_per_arm = study.n_per_arm;
  cfg.k_values = study.k_values;
  cfg.heterogeneity_sd = (mechanism % 2 == 1) ? 2.5 : 0.0;
  cfg.tau1 = (mechanism >= 2) ? 1.0 : 0.0;

  const std::uint64_t rep_seed =
      derive_seed(derive_seed(study.seed, 101 + mechanism), rep);
  Rng rng(rep_seed);

  RepOutcome out;
  out.est.assign(rows.size(), 0.0);
  out.se.assign(rows.size(), 0.0);

  GeneratedTrial gen = generate_trial(cfg, rng);
  ArmFits fits = fit_arms(gen.observed);

  // One set of posterior draws per replicate, shared by every imputation
  // method so that the algebraic equivalences hold replicate by replicate.
  std::vector<std::pair<MvnParams, MvnParams>> draws;
  draws.reserve(study.m);
  const std::uint64_t param_ns = derive_seed(rep_seed, 0xD4A3);
  for (int j = 0; j < study.m; ++j) {
    Rng rng_c(derive_seed(param_ns, 2 * j));
    Rng rng_a(derive_seed(param_ns, 2 * j + 1));
    draws.emplace_back(posterior_draw(fits.control, rng_c),
                       posterior_draw(fits.active, rng_a));
  }

  MIResult mi;
  mi.estimates.resize(study.m);
  mi.variances.resize(study.m);
  for (size_t ri = 0; ri < rows.size(); ++ri) {
    const StudyRow& row = rows[ri];
    if (row.panel == "A") {
      auto ki = std::find(study.k_values.begin(), study.k_values.end(), row.k);
      AncovaResult a =
          ancova(gen.complete[ki - study.k_values.begin()][row.beta_choice]);
      out.est[ri] = a.estimate;
      out.se[ri] = a.se;
      continue;
    }
    MethodSpec ms;
    if (row.panel == "B") {
      ms.method = Method::Causal;
      ms.kspec.variant = KVariant::constant_k0;
      ms.kspec.k0 = row.k;
    } else {
      ms.method = row.method;
    }
    ms.cov_source = row.beta_choice == 0 ? CovSource::reference_arm
                                         : CovSource::active_arm;
    impute_each(gen.observed, ms, draws, {}, rep_seed,
                [&](int j, const TrialDataset& filled) {
                  AncovaResult a = ancova(filled);
                  mi.estimates(j) = a.estimate;
                  mi.variances(j) = a.se * a.se;
                  mi.complete_df = a.df;
                });
    PooledResult pooled = rubin_pool(mi);
    out.est[ri] = pooled.estimate;
    out.se[ri] = pooled.se;
  }
  out.ok = true;
  return out;
}

}  // namespace

StudyResult run_study(const StudyConfig& config) {
  StudyResult result;
  result.mechanisms = {"MCAR beta1(2)=beta1(0)", "MCAR beta1(2)!=beta1(0)",
                       "MAR beta1(2)=beta1(0)", "MAR beta1(2)!=beta1(0)"};
  result.rows = study_rows(config.k_values);
  const int n_mech = static_cast<int>(result.mechanisms.size());
  const int n_rows = static_cast<int>(result.rows.size());
  const int reps = config.reps;

  std::vector<RepOutcome> outcomes(n_mech * reps);
  parallel_for(n_mech * reps, config.workers, [&](int task) {
    const int mech = task / reps;
    const int rep = task % reps;
    try {
      outcomes[task] = run_rep(config, result.rows, mech, rep);
    } catch (const Error&) {
      outcomes[task].ok = false;
    }
  });

  result.failed.assign(n_mech, 0);
  result.cells.assign(n_mech, std::vector<CellStats>(n_rows));
  for (int mech = 0; mech < n_mech; ++mech) {
    std::vector<const RepOutcome*> good;
    for (int rep = 0; rep < reps; ++rep) {
      const RepOutcome& o = outcomes[mech * reps + rep];
      if (o.ok) {
        good.push_back(&o);
      } else {
        result.failed[mech]++;
      }
    }
    if (result.failed[mech] > config.max_failed_fraction * reps) {
      throw Error("mechanism " + result.mechanisms[mech] + ": " +
                  std::to_string(result.failed[mech]) +
                  " failed replicates exceed the tolerated fraction");
    }
    const double r = static_cast<double>(good.size());
    for (int ri = 0; ri < n_rows; ++ri) {
      CellStats& c = result.cells[mech][ri];
      c.reps = static_cast<int>(good.size());
      double sum_e = 0.0, sum_s = 0.0;
      for (const RepOutcome* o : good) {
        sum_e += o->est[ri];
        sum_s += o->se[ri];
      }
      c.mean_est = sum_e / r;
      c.avg_se = sum_s / r;
      double ss_e = 0.0, ss_s = 0.0;
      for (const RepOutcome* o : good) {
        ss_e += (o->est[ri] - c.mean_est) * (o->est[ri] - c.mean_est);
        ss_s += (o->se[ri] - c.avg_se) * (o->se[ri] - c.avg_se);
      }
      c.emp_se = std::sqrt(ss_e / (r - 1.0));
      c.mcse_mean = c.emp_se / std::sqrt(r);
      c.mcse_emp = c.emp_se / std::sqrt(2.0 * (r - 1.0));
      c.mcse_avg = std::sqrt(ss_s / (r - 1.0)) / std::sqrt(r);
    }
  }
  return result;
}

}  // namespace defacto
