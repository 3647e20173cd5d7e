#include "defacto/io.hpp"

#include <algorithm>
#include <cmath>
#include <cstdlib>
#include <fstream>
#include <limits>
#include <map>
#include <set>
#include <sstream>

namespace defacto {

namespace {

std::vector<std::string> split_line(const std::string& line, char delim,
                                    long row) {
  std::vector<std::string> cells;
  std::string cell;
  bool quoted = false;
  for (size_t i = 0; i < line.size(); ++i) {
    char c = line[i];
    if (quoted) {
      if (c == '"') {
        if (i + 1 < line.size() && line[i + 1] == '"') {
          cell += '"';
          ++i;
        } else {
          quoted = false;
        }
      } else {
        cell += c;
      }
    } else if (c == '"' && cell.empty()) {
      quoted = true;
    } else if (c == delim) {
      cells.push_back(std::move(cell));
      cell.clear();
    } else {
      cell += c;
    }
  }
  if (quoted) {
    throw ParseError("unterminated quote", row);
  }
  cells.push_back(std::move(cell));
  return cells;
}

std::string trim(const std::string& s) {
  size_t a = s.find_first_not_of(" \t\r");
  if (a == std::string::npos) return "";
  size_t b = s.find_last_not_of(" \t\r");
  return s.substr(a, b - a + 1);
}

double parse_number(const std::string& cell, long row, long col) {
  const char* begin = cell.c_str();
  char* end = nullptr;
  double v = std::strtod(begin, &end);
  if (end == begin || *end != '\0') {
    throw ParseError("expected a number, found '" + cell + "'", row, col);
  }
  return v;
}

}  // namespace

int CsvTable::column(const std::string& name) const {
  auto it = std::find(header.begin(), header.end(), name);
  return it == header.end() ? -1 : static_cast<int>(it - header.begin());
}

int CsvTable::require_column(const std::string& name) const {
  int idx = column(name);
  if (idx < 0) {
    throw ValidationError("required column '" + name + "' not found");
  }
  return idx;
}

CsvTable read_csv(std::istream& in, char delimiter) {
  CsvTable table;
  std::string line;
  long row = 0;
  while (std::getline(in, line)) {
    ++row;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    auto cells = split_line(line, delimiter, row);
    for (auto& c : cells) c = trim(c);
    if (table.header.empty()) {
      table.header = std::move(cells);
    } else {
      if (cells.size() != table.header.size()) {
        throw ParseError("row has " + std::to_string(cells.size()) +
                             " cells, header has " +
                             std::to_string(table.header.size()),
                         row);
      }
      table.rows.push_back(std::move(cells));
    }
  }
  if (table.header.empty()) {
    throw ParseError("file is empty", 0);
  }
  return table;
}

namespace {

constexpr double kNaN = std::numeric_limits<double>::quiet_NaN();

bool is_missing(const std::string& cell, const ColumnMapping& mapping) {
  return cell.empty() || (!mapping.na_token.empty() && cell == mapping.na_token);
}

struct RawSubject {
  std::string id;
  std::string arm_label;
  std::vector<double> outcomes;             // NaN = missing
  std::map<std::string, std::string> cells; // covariate/k/disc raw values
  long first_row = 0;
};

// Expanded covariate design: numeric columns pass through; categorical
// columns become one indicator per non-reference level, with the first
// level (sorted) as reference.
struct CovariateExpander {
  std::vector<std::string> names;
  std::vector<std::pair<std::string, std::string>> indicators;  // (col, level)
  std::vector<std::string> numeric;

  void build(const ColumnMapping& mapping,
             const std::vector<RawSubject>& subjects) {
    numeric = mapping.covariates;
    for (const auto& col : mapping.categorical_covariates) {
      std::set<std::string> levels;
      for (const auto& s : subjects) levels.insert(s.cells.at(col));
      bool first = true;
      for (const auto& lvl : levels) {
        if (first) {
          first = false;  // reference level
          continue;
        }
        indicators.emplace_back(col, lvl);
      }
    }
    for (const auto& col : numeric) names.push_back(col);
    for (const auto& [col, lvl] : indicators) names.push_back(col + "=" + lvl);
  }

  Eigen::VectorXd expand(const RawSubject& s) const {
    Eigen::VectorXd x(names.size());
    int i = 0;
    for (const auto& col : numeric) {
      x(i++) = parse_number(s.cells.at(col), s.first_row, -1);
    }
    for (const auto& [col, lvl] : indicators) {
      x(i++) = s.cells.at(col) == lvl ? 1.0 : 0.0;
    }
    return x;
  }
};

}  // namespace

TrialDataset ingest_stream(std::istream& in, const ColumnMapping& mapping,
                           const std::string& reference_arm,
                           IngestReport* report) {
  CsvTable table = read_csv(in, mapping.delimiter);
  const bool wide = !mapping.outcome_columns.empty();

  const int c_subject = table.require_column(mapping.subject);
  const int c_arm = table.require_column(mapping.arm);

  std::vector<std::string> extra_cols = mapping.covariates;
  for (const auto& c : mapping.categorical_covariates) extra_cols.push_back(c);
  if (!mapping.k_column.empty()) extra_cols.push_back(mapping.k_column);
  if (!mapping.disc_column.empty()) extra_cols.push_back(mapping.disc_column);
  std::map<std::string, int> extra_idx;
  for (const auto& c : extra_cols) extra_idx[c] = table.require_column(c);

  std::vector<double> times;
  std::vector<RawSubject> raws;
  std::map<std::string, size_t> by_id;

  auto raw_for = [&](const std::string& id, const std::string& arm_label,
                     const std::vector<std::string>& cells, long row,
                     int n_visits) -> RawSubject& {
    auto it = by_id.find(id);
    if (it == by_id.end()) {
      RawSubject r;
      r.id = id;
      r.arm_label = arm_label;
      r.outcomes.assign(n_visits, kNaN);
      r.first_row = row;
      for (const auto& [col, idx] : extra_idx) r.cells[col] = cells[idx];
      by_id[id] = raws.size();
      raws.push_back(std::move(r));
      return raws.back();
    }
    RawSubject& r = raws[it->second];
    if (r.arm_label != arm_label) {
      throw ValidationError("subject " + id + ": inconsistent arm labels");
    }
    for (const auto& [col, idx] : extra_idx) {
      if (r.cells[col] != cells[idx]) {
        throw ValidationError("subject " + id + ": baseline column '" + col +
                              "' varies across rows");
      }
    }
    return r;
  };

  if (wide) {
    const int n_visits = static_cast<int>(mapping.outcome_columns.size());
    if (n_visits < 2) {
      throw ValidationError("wide format needs at least two outcome columns");
    }
    std::vector<int> c_out;
    for (const auto& name : mapping.outcome_columns) {
      c_out.push_back(table.require_column(name));
    }
    if (mapping.visit_times.empty()) {
      for (int t = 0; t < n_visits; ++t) times.push_back(t);
    } else {
      times = mapping.visit_times;
    }
    long row = 1;
    for (const auto& cells : table.rows) {
      ++row;
      const std::string id = cells[c_subject];
      if (by_id.count(id)) {
        throw ValidationError("subject " + id + ": duplicate row in wide file");
      }
      RawSubject& r = raw_for(id, cells[c_arm], cells, row, n_visits);
      for (int t = 0; t < n_visits; ++t) {
        const std::string& cell = cells[c_out[t]];
        if (!is_missing(cell, mapping)) {
          r.outcomes[t] = parse_number(cell, row, c_out[t] + 1);
        }
      }
    }
  } else {
    const int c_visit = table.require_column(mapping.visit);
    const int c_outcome = table.require_column(mapping.outcome);

    // Visit labels must form a numeric scale; the sorted unique values
    // define the schedule.
    std::set<double> visit_set;
    long row = 1;
    for (const auto& cells : table.rows) {
      ++row;
      visit_set.insert(parse_number(cells[c_visit], row, c_visit + 1));
    }
    times.assign(visit_set.begin(), visit_set.end());
    if (times.size() < 2) {
      throw ValidationError("need at least two distinct visits");
    }
    std::map<double, int> visit_index;
    for (size_t t = 0; t < times.size(); ++t) visit_index[times[t]] = t;

    row = 1;
    for (const auto& cells : table.rows) {
      ++row;
      RawSubject& r = raw_for(cells[c_subject], cells[c_arm], cells, row,
                              static_cast<int>(times.size()));
      const int t =
          visit_index.at(parse_number(cells[c_visit], row, c_visit + 1));
      const std::string& cell = cells[c_outcome];
      if (!is_missing(cell, mapping)) {
        if (!std::isnan(r.outcomes[t])) {
          throw ValidationError("subject " + r.id + ": duplicate outcome at visit " +
                                std::to_string(times[t]));
        }
        r.outcomes[t] = parse_number(cell, row, c_outcome + 1);
      }
    }
  }

  // Arm roles: the reference label is the control arm.
  std::set<std::string> labels;
  for (const auto& r : raws) labels.insert(r.arm_label);
  if (labels.size() != 2) {
    throw ValidationError("expected exactly two arm labels, found " +
                          std::to_string(labels.size()));
  }
  if (!labels.count(reference_arm)) {
    throw ValidationError("reference arm '" + reference_arm +
                          "' not present in data");
  }
  std::string active_label;
  for (const auto& l : labels) {
    if (l != reference_arm) active_label = l;
  }

  CovariateExpander expander;
  expander.build(mapping, raws);

  TrialDataset data;
  data.visit_times = times;
  data.covariate_names = expander.names;
  data.arm_labels = {reference_arm, active_label};

  IngestReport local_report;
  IngestReport& rep = report ? *report : local_report;

  for (const auto& raw : raws) {
    bool any_postbaseline = false;
    for (size_t t = 1; t < raw.outcomes.size(); ++t) {
      if (!std::isnan(raw.outcomes[t])) any_postbaseline = true;
    }
    if (!any_postbaseline) {
      rep.excluded_no_postbaseline++;
      rep.excluded_ids.push_back(raw.id);
      continue;
    }
    Subject s;
    s.id = raw.id;
    s.arm = raw.arm_label == reference_arm ? Arm::control : Arm::active;
    s.outcomes.resize(raw.outcomes.size());
    for (size_t t = 0; t < raw.outcomes.size(); ++t) s.outcomes(t) = raw.outcomes[t];
    if (!s.observed(0)) {
      throw ValidationError("subject " + s.id + ": baseline outcome is missing");
    }
    if (!mapping.disc_column.empty()) {
      double d = parse_number(raw.cells.at(mapping.disc_column), raw.first_row, -1);
      s.disc_time = static_cast<int>(d);
      if (s.disc_time != d) {
        throw ValidationError("subject " + s.id +
                              ": discontinuation time must be a visit index");
      }
    } else {
      for (int t = 0; t < s.outcomes.size(); ++t) {
        if (s.observed(t)) s.disc_time = t;
      }
    }
    if (!mapping.k_column.empty()) {
      s.k_value = parse_number(raw.cells.at(mapping.k_column), raw.first_row, -1);
    }
    s.covariates = expander.expand(raw);
    data.subjects.push_back(std::move(s));
  }

  data.validate_observed();
  return data;
}

TrialDataset ingest(const std::string& path, const ColumnMapping& mapping,
                    const std::string& reference_arm, IngestReport* report) {
  std::ifstream in(path);
  if (!in) {
    throw IoError("cannot open input file: " + path);
  }
  return ingest_stream(in, mapping, reference_arm, report);
}

void write_dataset_long(std::ostream& out, const TrialDataset& data,
                        const std::string& extra_column,
                        const std::string& extra_value) {
  if (!extra_column.empty()) out << extra_column << ",";
  out << "subject,arm,visit,outcome";
  for (const auto& name : data.covariate_names) out << "," << name;
  out << "\n";
  out.precision(17);
  for (const auto& s : data.subjects) {
    for (int t = 0; t < data.n_visits(); ++t) {
      if (!extra_column.empty()) out << extra_value << ",";
      out << s.id << "," << data.arm_labels[s.arm == Arm::control ? 0 : 1]
          << "," << data.visit_times[t] << ",";
      if (s.observed(t)) out << s.outcomes(t);
      for (int j = 0; j < s.covariates.size(); ++j) out << "," << s.covariates(j);
      out << "\n";
    }
  }
}

}  // namespace defacto
