#include "defacto/data.hpp"

namespace defacto {

void TrialDataset::validate() const {
  if (n_visits() < 2) {
    throw ValidationError("dataset needs at least baseline and one follow-up visit");
  }
  for (size_t i = 1; i < visit_times.size(); ++i) {
    if (!(visit_times[i] > visit_times[i - 1])) {
      throw ValidationError("visit times must be strictly increasing");
    }
  }
  const int dim = n_visits();
  for (const auto& s : subjects) {
    if (s.outcomes.size() != dim) {
      throw ValidationError("subject " + s.id + ": outcome vector length " +
                            std::to_string(s.outcomes.size()) +
                            " does not match visit count " + std::to_string(dim));
    }
    if (!s.observed(0)) {
      throw ValidationError("subject " + s.id + ": baseline outcome is missing");
    }
    if (s.disc_time < 0 || s.disc_time > tmax()) {
      throw ValidationError("subject " + s.id + ": discontinuation time out of range");
    }
    if (s.covariates.size() != static_cast<int>(covariate_names.size())) {
      throw ValidationError("subject " + s.id + ": covariate vector length mismatch");
    }
  }
}

void TrialDataset::validate_observed() const {
  validate();
  for (const auto& s : subjects) {
    for (int t = s.disc_time + 1; t < n_visits(); ++t) {
      if (s.observed(t)) {
        throw ValidationError("subject " + s.id + ": observed value at visit " +
                              std::to_string(t) + " after discontinuation time " +
                              std::to_string(s.disc_time));
      }
    }
  }
}

}  // namespace defacto
