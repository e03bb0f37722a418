#pragma once

// Trial data: observations, outcome declarations and the randomisation design.

#include <algorithm>
#include <charconv>
#include <cmath>
#include <cstddef>
#include <fstream>
#include <istream>
#include <map>
#include <ostream>
#include <sstream>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

#include "crtperm/error.hpp"

namespace crtperm {

enum class Family { gaussian, poisson, binomial };
enum class Link { identity, log, logit };

inline std::string_view to_string(Family f) {
  switch (f) {
    case Family::gaussian: return "gaussian";
    case Family::poisson: return "poisson";
    case Family::binomial: return "binomial";
  }
  return "?";
}

inline std::string_view to_string(Link l) {
  switch (l) {
    case Link::identity: return "identity";
    case Link::log: return "log";
    case Link::logit: return "logit";
  }
  return "?";
}

inline Family parse_family(std::string_view s) {
  if (s == "gaussian") return Family::gaussian;
  if (s == "poisson") return Family::poisson;
  if (s == "binomial" || s == "bernoulli") return Family::binomial;
  throw ConfigError("unknown family: " + std::string(s));
}

inline Link parse_link(std::string_view s) {
  if (s == "identity") return Link::identity;
  if (s == "log") return Link::log;
  if (s == "logit") return Link::logit;
  throw ConfigError("unknown link: " + std::string(s));
}

/// Canonical link of a family; the only link accepted for it.
constexpr Link canonical_link(Family f) {
  switch (f) {
    case Family::gaussian: return Link::identity;
    case Family::poisson: return Link::log;
    case Family::binomial: return Link::logit;
  }
  return Link::identity;
}

struct OutcomeSpec {
  std::string name;
  Family family = Family::gaussian;
  Link link = Link::identity;
};

inline void check_supported(const OutcomeSpec& spec) {
  if (spec.link != canonical_link(spec.family)) {
    throw ConfigError("outcome '" + spec.name + "': unsupported family/link pair (" +
                      std::string(to_string(spec.family)) + ", " +
                      std::string(to_string(spec.link)) + ")");
  }
}

/// One individual measurement. `cluster` is the dense cluster index and
/// `period` the 1-based time period as given in the data.
struct Observation {
  std::size_t cluster = 0;
  int period = 1;
  int treatment = 0;
  std::vector<double> outcomes;
  std::vector<double> covariates;

  bool operator==(const Observation&) const = default;
};

enum class DesignScheme { parallel, parallel_with_baseline };

inline std::string_view to_string(DesignScheme s) {
  return s == DesignScheme::parallel ? "parallel" : "parallel_with_baseline";
}

/// Two-sequence randomisation design. Treated-sequence clusters follow
/// `treated_sequence` over periods; control clusters are never treated.
struct DesignInfo {
  std::size_t n_clusters = 0;
  std::size_t n_periods = 0;
  std::size_t n_treated = 0;
  std::size_t n_control = 0;
  DesignScheme scheme = DesignScheme::parallel;
  std::vector<int> treated_sequence;     // per period index, 0/1
  std::vector<bool> observed_treated;    // per cluster, the realised allocation

  bool operator==(const DesignInfo&) const = default;
};

/// Observation indices grouped by cluster then period index.
struct ClusterLayout {
  std::size_t n_clusters = 0;
  std::size_t n_periods = 0;
  std::vector<std::vector<std::vector<std::size_t>>> rows;  // [cluster][period]

  std::size_t size(std::size_t c, std::size_t t) const { return rows[c][t].size(); }

  std::size_t cluster_size(std::size_t c) const {
    std::size_t n = 0;
    for (const auto& p : rows[c]) n += p.size();
    return n;
  }

  /// Observation indices of cluster c in period order.
  std::vector<std::size_t> cluster_rows(std::size_t c) const {
    std::vector<std::size_t> out;
    for (const auto& p : rows[c]) out.insert(out.end(), p.begin(), p.end());
    return out;
  }
};

struct TrialDataset {
  std::vector<std::string> cluster_labels;
  std::vector<OutcomeSpec> outcome_specs;
  std::vector<std::string> covariate_names;
  std::vector<Observation> observations;
  std::vector<int> periods;              // sorted distinct period values
  std::vector<std::size_t> period_index;  // per observation, into `periods`
  ClusterLayout layout;
  DesignInfo design;

  std::size_t n_outcomes() const { return outcome_specs.size(); }
  std::size_t n_obs() const { return observations.size(); }
  std::size_t n_clusters() const { return cluster_labels.size(); }
  std::size_t n_periods() const { return periods.size(); }
  std::size_t n_covariates() const { return covariate_names.size(); }

  double outcome(std::size_t row, std::size_t j) const { return observations[row].outcomes[j]; }
};

/// Column roles for CSV input. An empty `time` means a single period.
struct ColumnMapping {
  std::string cluster = "cluster";
  std::string time;
  std::string treatment = "treatment";
  std::vector<OutcomeSpec> outcomes;
  std::vector<std::string> covariates;
};

DesignInfo validate_design(const TrialDataset& ds);

namespace detail {

inline void check_outcome_value(const OutcomeSpec& spec, double v, std::size_t row) {
  const auto where = [&] { return "row " + std::to_string(row) + " column '" + spec.name + "'"; };
  if (!std::isfinite(v)) throw DataError(where() + ": non-finite outcome value");
  if (spec.family == Family::binomial && v != 0.0 && v != 1.0) {
    throw DataError(where() + ": binomial outcome must be 0 or 1");
  }
  if (spec.family == Family::poisson && (v < 0.0 || v != std::floor(v))) {
    throw DataError(where() + ": poisson outcome must be a non-negative integer");
  }
}

}  // namespace detail

/// Validates a dataset whose labels, specs and observations are filled in,
/// then derives period indices, the cluster layout and the design.
/// Row numbers in messages are 1-based data rows.
inline TrialDataset finalize_dataset(TrialDataset ds) {
  if (ds.outcome_specs.empty()) throw DataError("at least one outcome is required");
  for (const auto& spec : ds.outcome_specs) check_supported(spec);
  if (ds.observations.empty()) throw DataError("dataset has no observations");
  const std::size_t J = ds.outcome_specs.size();
  const std::size_t P = ds.covariate_names.size();
  const std::size_t C = ds.cluster_labels.size();

  std::vector<int> periods;
  for (std::size_t i = 0; i < ds.observations.size(); ++i) {
    const auto& ob = ds.observations[i];
    if (ob.outcomes.size() != J) {
      throw DataError("row " + std::to_string(i + 1) + ": expected " + std::to_string(J) + " outcomes");
    }
    if (ob.covariates.size() != P) {
      throw DataError("row " + std::to_string(i + 1) + ": expected " + std::to_string(P) + " covariates");
    }
    if (ob.cluster >= C) throw DataError("row " + std::to_string(i + 1) + ": cluster index out of range");
    if (ob.period < 1) throw DataError("row " + std::to_string(i + 1) + ": time period must be >= 1");
    if (ob.treatment != 0 && ob.treatment != 1) {
      throw DataError("row " + std::to_string(i + 1) + ": treatment must be 0 or 1");
    }
    for (std::size_t j = 0; j < J; ++j) detail::check_outcome_value(ds.outcome_specs[j], ob.outcomes[j], i + 1);
    for (double x : ob.covariates) {
      if (!std::isfinite(x)) throw DataError("row " + std::to_string(i + 1) + ": non-finite covariate");
    }
    periods.push_back(ob.period);
  }
  std::sort(periods.begin(), periods.end());
  periods.erase(std::unique(periods.begin(), periods.end()), periods.end());
  ds.periods = periods;

  const std::size_t T = periods.size();
  ds.period_index.resize(ds.observations.size());
  ds.layout = ClusterLayout{C, T, std::vector<std::vector<std::vector<std::size_t>>>(
                                      C, std::vector<std::vector<std::size_t>>(T))};
  std::vector<int> cp_treat(C * T, -1);
  for (std::size_t i = 0; i < ds.observations.size(); ++i) {
    const auto& ob = ds.observations[i];
    const auto t = static_cast<std::size_t>(
        std::lower_bound(periods.begin(), periods.end(), ob.period) - periods.begin());
    ds.period_index[i] = t;
    ds.layout.rows[ob.cluster][t].push_back(i);
    int& cell = cp_treat[ob.cluster * T + t];
    if (cell == -1) {
      cell = ob.treatment;
    } else if (cell != ob.treatment) {
      throw DataError("row " + std::to_string(i + 1) + ": treatment varies within cluster-period (cluster '" +
                      ds.cluster_labels[ob.cluster] + "', period " + std::to_string(ob.period) + ")");
    }
  }
  for (std::size_t c = 0; c < C; ++c) {
    for (std::size_t t = 0; t < T; ++t) {
      if (ds.layout.rows[c][t].empty()) {
        throw DataError("cluster '" + ds.cluster_labels[c] + "' has no observations in period " +
                        std::to_string(periods[t]));
      }
    }
  }
  ds.design = validate_design(ds);
  return ds;
}

/// Infers the randomisation scheme from the cluster-period treatment pattern.
inline DesignInfo validate_design(const TrialDataset& ds) {
  const std::size_t C = ds.layout.n_clusters;
  const std::size_t T = ds.layout.n_periods;
  if (C < 2) throw DataError("unsupported design: at least 2 clusters are required");

  std::vector<std::vector<int>> pattern(C, std::vector<int>(T, 0));
  for (std::size_t c = 0; c < C; ++c) {
    for (std::size_t t = 0; t < T; ++t) {
      const auto& rows = ds.layout.rows[c][t];
      if (rows.empty()) throw DataError("unsupported design: empty cluster-period");
      pattern[c][t] = ds.observations[rows.front()].treatment;
    }
  }

  DesignInfo info;
  info.n_clusters = C;
  info.n_periods = T;
  info.observed_treated.assign(C, false);
  std::vector<int> treated_seq;
  for (std::size_t c = 0; c < C; ++c) {
    const auto& seq = pattern[c];
    for (std::size_t t = 1; t < T; ++t) {
      if (seq[t] < seq[t - 1]) throw DataError("unsupported design: treatment switches off in cluster '" +
                                               ds.cluster_labels[c] + "'");
    }
    const bool any = std::find(seq.begin(), seq.end(), 1) != seq.end();
    if (!any) continue;
    if (treated_seq.empty()) {
      treated_seq = seq;
    } else if (treated_seq != seq) {
      throw DataError("unsupported design: more than one treatment sequence");
    }
    info.observed_treated[c] = true;
    ++info.n_treated;
  }
  info.n_control = C - info.n_treated;
  if (info.n_treated == 0 || info.n_control == 0) {
    throw DataError("unsupported design: both arms must contain at least one cluster");
  }
  const bool all_on = std::all_of(treated_seq.begin(), treated_seq.end(), [](int d) { return d == 1; });
  if (all_on) {
    info.scheme = DesignScheme::parallel;
  } else if (T >= 2 && treated_seq[0] == 0 &&
             std::all_of(treated_seq.begin() + 1, treated_seq.end(), [](int d) { return d == 1; })) {
    info.scheme = DesignScheme::parallel_with_baseline;
  } else {
    throw DataError("unsupported design: treated clusters must be treated from period 1 or period 2 onward");
  }
  info.treated_sequence = treated_seq;
  return info;
}

// ---------------------------------------------------------------------------
// CSV input/output

namespace detail {

inline std::vector<std::string> split_csv_line(std::string_view line) {
  std::vector<std::string> fields;
  std::string cur;
  bool quoted = false;
  for (std::size_t i = 0; i < line.size(); ++i) {
    const char ch = line[i];
    if (quoted) {
      if (ch == '"') {
        if (i + 1 < line.size() && line[i + 1] == '"') {
          cur.push_back('"');
          ++i;
        } else {
          quoted = false;
        }
      } else {
        cur.push_back(ch);
      }
    } else if (ch == '"') {
      quoted = true;
    } else if (ch == ',') {
      fields.push_back(std::move(cur));
      cur.clear();
    } else {
      cur.push_back(ch);
    }
  }
  fields.push_back(std::move(cur));
  for (auto& f : fields) {
    const auto b = f.find_first_not_of(" \t\r");
    const auto e = f.find_last_not_of(" \t\r");
    f = b == std::string::npos ? std::string{} : f.substr(b, e - b + 1);
  }
  return fields;
}

inline double parse_number(const std::string& text, std::size_t row, const std::string& column) {
  if (text.empty()) {
    throw DataError("row " + std::to_string(row) + " column '" + column + "': missing value");
  }
  double v = 0.0;
  const char* first = text.data();
  const char* last = text.data() + text.size();
  if (*first == '+') ++first;
  const auto [ptr, ec] = std::from_chars(first, last, v);
  if (ec != std::errc{} || ptr != last) {
    throw DataError("row " + std::to_string(row) + " column '" + column + "': not a number: '" + text + "'");
  }
  return v;
}

inline std::string format_number(double v) {
  char buf[64];
  const auto [ptr, ec] = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, ptr);
}

}  // namespace detail

/// Reads a trial dataset from CSV text. Cluster indices follow first appearance.
inline TrialDataset read_dataset(std::istream& in, const ColumnMapping& mapping) {
  if (mapping.outcomes.empty()) throw ConfigError("missing field: outcomes");
  for (const auto& spec : mapping.outcomes) check_supported(spec);

  std::string line;
  bool have_header = false;
  while (std::getline(in, line)) {
    if (line.find_first_not_of(" \t\r") != std::string::npos) {
      have_header = true;
      break;
    }
  }
  if (!have_header) throw DataError("empty file");
  if (line.size() >= 3 && static_cast<unsigned char>(line[0]) == 0xEF) line.erase(0, 3);  // UTF-8 BOM
  const auto header = detail::split_csv_line(line);

  const auto column = [&](const std::string& name) -> std::size_t {
    const auto it = std::find(header.begin(), header.end(), name);
    if (it == header.end()) throw DataError("missing column: " + name);
    return static_cast<std::size_t>(it - header.begin());
  };
  const std::size_t cluster_col = column(mapping.cluster);
  const std::size_t treat_col = column(mapping.treatment);
  const bool has_time = !mapping.time.empty();
  const std::size_t time_col = has_time ? column(mapping.time) : 0;
  std::vector<std::size_t> outcome_cols, cov_cols;
  for (const auto& spec : mapping.outcomes) outcome_cols.push_back(column(spec.name));
  for (const auto& name : mapping.covariates) cov_cols.push_back(column(name));

  TrialDataset ds;
  ds.outcome_specs = mapping.outcomes;
  ds.covariate_names = mapping.covariates;
  std::unordered_map<std::string, std::size_t> cluster_index;

  std::size_t row = 0;
  while (std::getline(in, line)) {
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    ++row;
    const auto fields = detail::split_csv_line(line);
    if (fields.size() != header.size()) {
      throw DataError("row " + std::to_string(row) + ": expected " + std::to_string(header.size()) +
                      " fields, found " + std::to_string(fields.size()));
    }
    Observation ob;
    const auto& label = fields[cluster_col];
    if (label.empty()) throw DataError("row " + std::to_string(row) + ": empty cluster label");
    const auto [it, inserted] = cluster_index.try_emplace(label, ds.cluster_labels.size());
    if (inserted) ds.cluster_labels.push_back(label);
    ob.cluster = it->second;

    const double treat = detail::parse_number(fields[treat_col], row, mapping.treatment);
    if (treat != 0.0 && treat != 1.0) {
      throw DataError("row " + std::to_string(row) + " column '" + mapping.treatment +
                      "': treatment must be 0 or 1 (non-binary treatment value)");
    }
    ob.treatment = static_cast<int>(treat);
    if (has_time) {
      const double t = detail::parse_number(fields[time_col], row, mapping.time);
      if (t != std::floor(t) || t < 1.0) {
        throw DataError("row " + std::to_string(row) + " column '" + mapping.time +
                        "': time period must be an integer >= 1");
      }
      ob.period = static_cast<int>(t);
    }
    for (std::size_t j = 0; j < outcome_cols.size(); ++j) {
      const double v = detail::parse_number(fields[outcome_cols[j]], row, mapping.outcomes[j].name);
      detail::check_outcome_value(mapping.outcomes[j], v, row);
      ob.outcomes.push_back(v);
    }
    for (std::size_t k = 0; k < cov_cols.size(); ++k) {
      ob.covariates.push_back(detail::parse_number(fields[cov_cols[k]], row, mapping.covariates[k]));
    }
    ds.observations.push_back(std::move(ob));
  }
  if (ds.observations.empty()) throw DataError("empty file: no data rows");
  return finalize_dataset(std::move(ds));
}

inline TrialDataset load_dataset(const std::string& csv_path, const ColumnMapping& mapping) {
  std::ifstream in(csv_path);
  if (!in) throw DataError("cannot open data file: " + csv_path);
  return read_dataset(in, mapping);
}

/// Column mapping matching the header written by write_dataset.
inline ColumnMapping mapping_of(const TrialDataset& ds) {
  ColumnMapping m;
  m.cluster = "cluster";
  m.time = "time";
  m.treatment = "treatment";
  m.outcomes = ds.outcome_specs;
  m.covariates = ds.covariate_names;
  return m;
}

/// Writes the dataset as CSV using shortest round-trip decimal text.
inline void write_dataset(std::ostream& out, const TrialDataset& ds) {
  const auto m = mapping_of(ds);
  out << m.cluster << ',' << m.time << ',' << m.treatment;
  for (const auto& s : ds.outcome_specs) out << ',' << s.name;
  for (const auto& c : ds.covariate_names) out << ',' << c;
  out << '\n';
  for (const auto& ob : ds.observations) {
    const auto& label = ds.cluster_labels[ob.cluster];
    if (label.find_first_of(",\"") != std::string::npos) {
      out << '"';
      for (char ch : label) {
        if (ch == '"') out << '"';
        out << ch;
      }
      out << '"';
    } else {
      out << label;
    }
    out << ',' << ob.period << ',' << ob.treatment;
    for (double v : ob.outcomes) out << ',' << detail::format_number(v);
    for (double v : ob.covariates) out << ',' << detail::format_number(v);
    out << '\n';
  }
}

}  // namespace crtperm
