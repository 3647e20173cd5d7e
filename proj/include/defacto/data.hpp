#pragma once

#include <Eigen/Dense>
#include <cmath>
#include <optional>
#include <string>
#include <vector>

#include "defacto/errors.hpp"

namespace defacto {

enum class Arm { control, active };

inline const char* arm_name(Arm a) {
  return a == Arm::control ? "control" : "active";
}

// One trial participant. Outcomes are indexed by visit (0 = baseline) and
// use NaN for missing values. disc_time is D, the last on-treatment
// observation index; visits after D are never observed.
struct Subject {
  std::string id;
  Arm arm = Arm::control;
  Eigen::VectorXd outcomes;
  int disc_time = 0;
  Eigen::VectorXd covariates;        // expanded numeric design values
  std::optional<double> k_value;     // per-subject sensitivity k, when supplied

  bool observed(int t) const { return !std::isnan(outcomes(t)); }
};

struct TrialDataset {
  std::vector<double> visit_times;             // v_0..v_T, strictly increasing
  std::vector<std::string> covariate_names;    // expanded design column names
  std::vector<std::string> arm_labels{"control", "active"};  // [control, active]
  std::vector<Subject> subjects;

  int n_visits() const { return static_cast<int>(visit_times.size()); }
  int tmax() const { return n_visits() - 1; }
  int n_covariates() const { return static_cast<int>(covariate_names.size()); }

  std::vector<const Subject*> arm_subjects(Arm arm) const {
    std::vector<const Subject*> out;
    for (const auto& s : subjects)
      if (s.arm == arm) out.push_back(&s);
    return out;
  }

  int count_missing() const {
    int n = 0;
    for (const auto& s : subjects)
      for (int t = 0; t < s.outcomes.size(); ++t)
        if (!s.observed(t)) ++n;
    return n;
  }

  // Structural invariants: strictly increasing visit schedule, baseline
  // observed everywhere, consistent vector lengths, disc_time in range.
  // Throws ValidationError naming the violation. Holds for both observed
  // and completed datasets.
  void validate() const;

  // Observed-data invariant on top of validate(): no observed value after
  // a subject's discontinuation time. Completed datasets do not satisfy
  // this; raw ingested data must.
  void validate_observed() const;
};

}  // namespace defacto
