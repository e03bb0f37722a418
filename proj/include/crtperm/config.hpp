#pragma once

// JSON schemas for analysis configs, study configs, and their reports.

#include <nlohmann/json.hpp>

#include <cstdint>
#include <fstream>
#include <initializer_list>
#include <istream>
#include <sstream>
#include <string>
#include <vector>

#include "crtperm/analysis.hpp"
#include "crtperm/error.hpp"
#include "crtperm/simulation.hpp"

namespace crtperm {

inline constexpr int kSchemaVersion = 1;

namespace detail {

using nlohmann::json;

inline void check_keys(const json& j, std::string_view where, std::initializer_list<std::string_view> allowed) {
  if (!j.is_object()) throw ConfigError(std::string(where) + " must be an object");
  for (const auto& [key, _] : j.items()) {
    bool ok = false;
    for (auto a : allowed) ok = ok || key == a;
    if (!ok) throw ConfigError(std::string(where) + ": unknown field: " + key);
  }
}

inline const json* field(const json& j, const char* name) {
  const auto it = j.find(name);
  return it == j.end() ? nullptr : &*it;
}

inline const json& require(const json& j, const char* name) {
  const json* f = field(j, name);
  if (f == nullptr) throw ConfigError(std::string("missing field: ") + name);
  return *f;
}

inline double get_number(const json& v, const char* name) {
  if (!v.is_number()) throw ConfigError(std::string("field '") + name + "' must be a number");
  return v.get<double>();
}

inline std::uint64_t get_count(const json& v, const char* name) {
  if (!v.is_number_integer() || (v.is_number_integer() && !v.is_number_unsigned() && v.get<std::int64_t>() < 0)) {
    throw ConfigError(std::string("field '") + name + "' must be a non-negative integer");
  }
  return v.get<std::uint64_t>();
}

inline std::string get_string(const json& v, const char* name) {
  if (!v.is_string()) throw ConfigError(std::string("field '") + name + "' must be a string");
  return v.get<std::string>();
}

inline bool get_bool(const json& v, const char* name) {
  if (!v.is_boolean()) throw ConfigError(std::string("field '") + name + "' must be a boolean");
  return v.get<bool>();
}

inline std::vector<double> get_numbers(const json& v, const char* name) {
  if (!v.is_array()) throw ConfigError(std::string("field '") + name + "' must be an array of numbers");
  std::vector<double> out;
  for (const auto& x : v) out.push_back(get_number(x, name));
  return out;
}

inline std::vector<std::string> get_strings(const json& v, const char* name) {
  if (!v.is_array()) throw ConfigError(std::string("field '") + name + "' must be an array of strings");
  std::vector<std::string> out;
  for (const auto& x : v) out.push_back(get_string(x, name));
  return out;
}

inline void check_schema_version(const json& j) {
  if (const json* v = field(j, "schema_version")) {
    if (!v->is_number_integer() || v->get<int>() != kSchemaVersion) {
      throw ConfigError("unsupported schema_version (expected " + std::to_string(kSchemaVersion) + ")");
    }
  }
}

inline json parse_json(std::istream& in, std::string_view what) {
  try {
    return json::parse(in);
  } catch (const json::parse_error& e) {
    throw ConfigError(std::string(what) + " is not valid JSON: " + e.what());
  }
}

inline std::vector<Method> parse_methods(const json& v) {
  std::vector<Method> out;
  for (const auto& s : get_strings(v, "methods")) out.push_back(parse_method(s));
  if (out.empty()) throw ConfigError("field 'methods' must not be empty");
  return out;
}

inline json methods_json(const std::vector<Method>& methods) {
  json a = json::array();
  for (Method m : canonical_methods(methods)) a.push_back(std::string(to_string(m)));
  return a;
}

inline json number_or_null(double v) { return std::isfinite(v) ? json(v) : json(nullptr); }

}  // namespace detail

// ---------------------------------------------------------------------------
// Analysis config

inline CovarianceSpec parse_covariance_values(const nlohmann::json& v, CovarianceStructure structure) {
  detail::check_keys(v, "covariance.values[]", {"sigma2", "tau2", "lambda"});
  CovarianceSpec s;
  s.structure = structure;
  if (const auto* f = detail::field(v, "sigma2")) s.sigma2 = detail::get_number(*f, "sigma2");
  if (const auto* f = detail::field(v, "tau2")) s.tau2 = detail::get_number(*f, "tau2");
  if (const auto* f = detail::field(v, "lambda")) s.lambda = detail::get_number(*f, "lambda");
  check_covariance_spec(s);
  return s;
}

inline AnalysisConfig parse_analysis_config(const nlohmann::json& j) {
  using namespace detail;
  check_keys(j, "config",
             {"schema_version", "columns", "outcomes", "alpha", "methods", "statistic", "sided", "M", "Q", "seed",
              "enumerate", "covariance", "confidence_sets"});
  check_schema_version(j);
  AnalysisConfig cfg;
  if (const json* c = field(j, "columns")) {
    check_keys(*c, "columns", {"cluster", "time", "treatment", "covariates"});
    if (const json* f = field(*c, "cluster")) cfg.columns.cluster = get_string(*f, "cluster");
    if (const json* f = field(*c, "time")) cfg.columns.time = get_string(*f, "time");
    if (const json* f = field(*c, "treatment")) cfg.columns.treatment = get_string(*f, "treatment");
    if (const json* f = field(*c, "covariates")) cfg.columns.covariates = get_strings(*f, "covariates");
  }
  const json& outcomes = require(j, "outcomes");
  if (!outcomes.is_array() || outcomes.empty()) throw ConfigError("field 'outcomes' must be a non-empty array");
  for (const auto& o : outcomes) {
    check_keys(o, "outcomes[]", {"name", "family", "link"});
    OutcomeSpec spec;
    spec.name = get_string(require(o, "name"), "name");
    spec.family = parse_family(get_string(require(o, "family"), "family"));
    spec.link = canonical_link(spec.family);
    if (const json* f = field(o, "link")) spec.link = parse_link(get_string(*f, "link"));
    check_supported(spec);
    cfg.columns.outcomes.push_back(spec);
  }
  if (const json* f = field(j, "alpha")) cfg.alpha = get_number(*f, "alpha");
  if (const json* f = field(j, "methods")) cfg.methods = parse_methods(*f);
  if (const json* f = field(j, "statistic")) cfg.statistic = parse_statistic_kind(get_string(*f, "statistic"));
  if (const json* f = field(j, "sided")) cfg.sided = parse_sided(get_string(*f, "sided"));
  if (const json* f = field(j, "M")) cfg.permutations = get_count(*f, "M");
  if (const json* f = field(j, "Q")) cfg.steps = get_count(*f, "Q");
  if (const json* f = field(j, "seed")) cfg.seed = get_count(*f, "seed");
  if (const json* f = field(j, "enumerate")) cfg.enumerate = parse_enumerate_mode(get_string(*f, "enumerate"));
  if (const json* f = field(j, "confidence_sets")) cfg.confidence_sets = get_bool(*f, "confidence_sets");
  if (const json* c = field(j, "covariance")) {
    check_keys(*c, "covariance", {"source", "structure", "values"});
    if (const json* f = field(*c, "structure")) {
      cfg.covariance.structure = parse_covariance_structure(get_string(*f, "structure"));
    }
    const std::string source = field(*c, "source") ? get_string(*field(*c, "source"), "source") : "estimate";
    if (source == "estimate") {
      cfg.covariance.source = CovarianceSource::estimate;
      if (field(*c, "values")) throw ConfigError("covariance: values require source 'fixed'");
    } else if (source == "fixed") {
      cfg.covariance.source = CovarianceSource::fixed;
      const json& values = require(*c, "values");
      if (!values.is_array()) throw ConfigError("field 'values' must be an array");
      for (const auto& v : values) cfg.covariance.fixed.push_back(parse_covariance_values(v, cfg.covariance.structure));
    } else {
      throw ConfigError("unknown covariance source: " + source);
    }
  }
  validate_config(cfg);
  return cfg;
}

inline AnalysisConfig read_analysis_config(std::istream& in) {
  return parse_analysis_config(detail::parse_json(in, "config"));
}

inline AnalysisConfig load_analysis_config(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open config file: " + path);
  return read_analysis_config(in);
}

inline nlohmann::json analysis_config_json(const AnalysisConfig& cfg) {
  using nlohmann::json;
  json j;
  j["schema_version"] = kSchemaVersion;
  j["columns"] = {{"cluster", cfg.columns.cluster},
                  {"time", cfg.columns.time},
                  {"treatment", cfg.columns.treatment},
                  {"covariates", cfg.columns.covariates}};
  json outcomes = json::array();
  for (const auto& o : cfg.columns.outcomes) {
    outcomes.push_back({{"name", o.name}, {"family", to_string(o.family)}, {"link", to_string(o.link)}});
  }
  j["outcomes"] = outcomes;
  j["alpha"] = cfg.alpha;
  j["methods"] = detail::methods_json(cfg.methods);
  j["statistic"] = to_string(cfg.statistic);
  j["sided"] = to_string(cfg.sided);
  j["M"] = cfg.permutations;
  j["Q"] = cfg.steps;
  j["seed"] = cfg.seed;
  j["enumerate"] = to_string(cfg.enumerate);
  j["confidence_sets"] = cfg.confidence_sets;
  json cov;
  cov["source"] = cfg.covariance.source == CovarianceSource::fixed ? "fixed" : "estimate";
  cov["structure"] = to_string(cfg.covariance.structure);
  if (cfg.covariance.source == CovarianceSource::fixed) {
    json values = json::array();
    for (const auto& s : cfg.covariance.fixed) {
      values.push_back({{"sigma2", s.sigma2}, {"tau2", s.tau2}, {"lambda", s.lambda}});
    }
    cov["values"] = values;
  }
  j["covariance"] = cov;
  return j;
}

/// Result document: records are outcome-major with methods in canonical order.
inline nlohmann::json analysis_result_json(const AnalysisResult& r, const AnalysisConfig& cfg,
                                           bool include_timings = true) {
  using nlohmann::json;
  json j;
  j["schema_version"] = kSchemaVersion;
  j["kind"] = "analysis_result";
  json records = json::array();
  for (const auto& rec : r.records) {
    json o;
    o["outcome"] = r.outcome_names[rec.outcome];
    o["method"] = to_string(rec.method);
    o["estimate"] = detail::number_or_null(rec.estimate);
    o["p_unadjusted"] = rec.p_unadjusted;
    o["p_adjusted"] = rec.p_adjusted;
    o["lower"] = rec.lower ? detail::number_or_null(*rec.lower) : json(nullptr);
    o["upper"] = rec.upper ? detail::number_or_null(*rec.upper) : json(nullptr);
    records.push_back(o);
  }
  j["records"] = records;
  json outcomes = json::array();
  for (std::size_t k = 0; k < r.outcome_names.size(); ++k) {
    outcomes.push_back({{"name", r.outcome_names[k]},
                        {"estimate", detail::number_or_null(r.estimates[k])},
                        {"naive_se", detail::number_or_null(r.naive_se[k])}});
  }
  j["outcomes"] = outcomes;
  json meta;
  meta["seed"] = cfg.seed;
  meta["M"] = cfg.permutations;
  meta["Q"] = cfg.steps;
  meta["alpha"] = cfg.alpha;
  meta["statistic"] = to_string(cfg.statistic);
  meta["sided"] = to_string(cfg.sided);
  meta["exhaustive"] = r.exhaustive;
  meta["n_permutations"] = r.n_permutations;
  meta["clamped_steps"] = r.clamped;
  meta["search_warnings"] = r.warnings;
  if (include_timings) {
    meta["timings"] = {{"fit_seconds", r.timings.fit_seconds},
                       {"pvalue_seconds", r.timings.pvalue_seconds},
                       {"search_seconds", r.timings.search_seconds},
                       {"total_seconds", r.timings.total_seconds}};
  }
  j["metadata"] = meta;
  return j;
}

// ---------------------------------------------------------------------------
// Study config

struct StudyConfig {
  DgpSpec dgp;
  StudySettings settings;
};

inline StudyConfig parse_study_config(const nlohmann::json& j) {
  using namespace detail;
  check_keys(j, "study",
             {"schema_version", "model", "parameters", "methods", "search_methods", "statistics", "naive", "alpha",
              "R", "M", "Q", "seed", "enumerate"});
  check_schema_version(j);
  StudyConfig s;
  s.dgp = default_dgp(parse_model(get_string(require(j, "model"), "model")));
  if (const json* p = field(j, "parameters")) {
    check_keys(*p, "parameters",
               {"clusters_per_arm", "n_per_cluster", "delta", "mu", "sigma2", "tau2", "rho", "pi", "lambda",
                "period_effect"});
    if (const json* f = field(*p, "clusters_per_arm")) s.dgp.clusters_per_arm = get_count(*f, "clusters_per_arm");
    if (const json* f = field(*p, "n_per_cluster")) s.dgp.n_per_cluster = get_count(*f, "n_per_cluster");
    if (const json* f = field(*p, "delta")) s.dgp.delta = get_numbers(*f, "delta");
    if (const json* f = field(*p, "mu")) s.dgp.mu = get_numbers(*f, "mu");
    if (const json* f = field(*p, "sigma2")) s.dgp.sigma2 = get_numbers(*f, "sigma2");
    if (const json* f = field(*p, "tau2")) s.dgp.tau2 = get_numbers(*f, "tau2");
    if (const json* f = field(*p, "rho")) s.dgp.rho = get_number(*f, "rho");
    if (const json* f = field(*p, "pi")) s.dgp.pi = get_number(*f, "pi");
    if (const json* f = field(*p, "lambda")) s.dgp.lambda = get_number(*f, "lambda");
    if (const json* f = field(*p, "period_effect")) s.dgp.period_effect = get_numbers(*f, "period_effect");
  }
  validate_dgp(s.dgp);
  auto& st = s.settings;
  if (const json* f = field(j, "methods")) st.methods = canonical_methods(parse_methods(*f));
  if (const json* f = field(j, "search_methods")) {
    st.search_methods.clear();
    for (const auto& m : get_strings(*f, "search_methods")) st.search_methods.push_back(parse_method(m));
    st.search_methods = canonical_methods(st.search_methods);
  }
  if (const json* f = field(j, "statistics")) {
    st.kinds.clear();
    for (const auto& k : get_strings(*f, "statistics")) st.kinds.push_back(parse_statistic_kind(k));
    if (st.kinds.empty()) throw ConfigError("field 'statistics' must not be empty");
  }
  if (const json* f = field(j, "naive")) st.naive = get_bool(*f, "naive");
  if (const json* f = field(j, "alpha")) st.alpha = get_number(*f, "alpha");
  st.replicates = get_count(require(j, "R"), "R");
  st.permutations = get_count(require(j, "M"), "M");
  st.steps = get_count(require(j, "Q"), "Q");
  if (const json* f = field(j, "seed")) st.seed = get_count(*f, "seed");
  if (const json* f = field(j, "enumerate")) st.enumerate = parse_enumerate_mode(get_string(*f, "enumerate"));
  if (!(st.alpha > 0.0 && st.alpha < 0.5)) throw ConfigError("alpha must lie in (0, 0.5)");
  if (st.replicates < 1) throw ConfigError("R must be at least 1");
  if (st.permutations < 1) throw ConfigError("M must be positive");
  if (!st.search_methods.empty() && st.steps < 100) throw ConfigError("Q must be at least 100");
  return s;
}

inline StudyConfig read_study_config(std::istream& in) { return parse_study_config(detail::parse_json(in, "study")); }

inline StudyConfig load_study_config(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open study file: " + path);
  return read_study_config(in);
}

inline nlohmann::json dgp_json(const DgpSpec& d) {
  nlohmann::json p;
  p["clusters_per_arm"] = d.clusters_per_arm;
  p["n_per_cluster"] = d.n_per_cluster;
  p["delta"] = d.delta;
  p["mu"] = d.mu;
  p["sigma2"] = d.sigma2;
  p["tau2"] = d.tau2;
  p["rho"] = d.rho;
  p["pi"] = d.pi;
  p["lambda"] = d.lambda;
  p["period_effect"] = d.period_effect;
  return p;
}

/// Report document; it contains no timings so identical studies produce
/// byte-identical output.
inline nlohmann::json simulation_report_json(const SimulationReport& r) {
  using nlohmann::json;
  json j;
  j["schema_version"] = kSchemaVersion;
  j["kind"] = "simulation_report";
  json settings;
  settings["model"] = to_string(r.dgp.model);
  settings["parameters"] = dgp_json(r.dgp);
  settings["methods"] = detail::methods_json(r.settings.methods);
  settings["search_methods"] = detail::methods_json(r.settings.search_methods);
  json kinds = json::array();
  for (auto k : r.settings.kinds) kinds.push_back(std::string(to_string(k)));
  settings["statistics"] = kinds;
  settings["naive"] = r.settings.naive;
  settings["alpha"] = r.settings.alpha;
  settings["R"] = r.settings.replicates;
  settings["M"] = r.settings.permutations;
  settings["Q"] = r.settings.steps;
  settings["seed"] = r.settings.seed;
  settings["enumerate"] = to_string(r.settings.enumerate);
  j["settings"] = settings;
  j["replicates"] = r.replicates;
  j["failures"] = r.failures;
  j["failure_messages"] = r.failure_messages;
  json methods = json::array();
  for (const auto& s : r.summaries) {
    json m;
    m["method"] = s.label;
    m["statistic"] = s.kind ? json(std::string(to_string(*s.kind))) : json(nullptr);
    m["fwer"] = {{"value", s.fwer.value}, {"se", s.fwer.se}};
    if (s.has_intervals) {
      m["coverage"] = {{"value", s.coverage.value}, {"se", s.coverage.se}};
      m["mean_ci_width"] = s.mean_width;
      m["ci_width_se"] = s.width_se;
    } else {
      m["coverage"] = nullptr;
      m["mean_ci_width"] = nullptr;
      m["ci_width_se"] = nullptr;
    }
    methods.push_back(m);
  }
  j["methods"] = methods;
  return j;
}

}  // namespace crtperm
