#pragma once

#include <iosfwd>
#include <string>
#include <vector>

#include "defacto/data.hpp"

namespace defacto {

// How to read a delimited trial data file. With outcome_columns set the
// file is wide (one row per subject, one outcome column per visit);
// otherwise it is long (one row per subject-visit).
struct ColumnMapping {
  std::string subject = "subject";
  std::string arm = "arm";
  std::string visit = "visit";      // long format only
  std::string outcome = "outcome";  // long format only
  std::vector<std::string> outcome_columns;  // wide format
  std::vector<double> visit_times;  // optional; long format derives from labels
  std::vector<std::string> covariates;             // numeric
  std::vector<std::string> categorical_covariates; // expanded to indicators
  std::string k_column;     // optional per-subject sensitivity k
  std::string disc_column;  // optional explicit discontinuation time (visit index)
  std::string na_token;     // extra missing-value sentinel besides empty cells
  char delimiter = ',';
};

struct IngestReport {
  int excluded_no_postbaseline = 0;
  std::vector<std::string> excluded_ids;
};

// Reads and validates a trial dataset. The reference arm label becomes the
// control arm; the other label the active arm. Subjects with no
// post-baseline observation are dropped and counted in the report.
TrialDataset ingest(const std::string& path, const ColumnMapping& mapping,
                    const std::string& reference_arm,
                    IngestReport* report = nullptr);

TrialDataset ingest_stream(std::istream& in, const ColumnMapping& mapping,
                           const std::string& reference_arm,
                           IngestReport* report = nullptr);

// Long-format writer; missing values become empty cells. extra_column, if
// named, is prepended with the given value on every row (used to stack
// imputed datasets).
void write_dataset_long(std::ostream& out, const TrialDataset& data,
                        const std::string& extra_column = "",
                        const std::string& extra_value = "");

// Minimal delimited-text reader shared by ingest and the CLI.
struct CsvTable {
  std::vector<std::string> header;
  std::vector<std::vector<std::string>> rows;

  int column(const std::string& name) const;  // -1 when absent
  int require_column(const std::string& name) const;
};

CsvTable read_csv(std::istream& in, char delimiter);

}  // namespace defacto
