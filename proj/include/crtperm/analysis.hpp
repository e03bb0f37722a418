#pragma once

// End-to-end analysis of one trial: point estimates, adjusted permutation
// p-values at the null value and simultaneous confidence sets per method.

#include <algorithm>
#include <chrono>
#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "crtperm/confidence.hpp"
#include "crtperm/core_data.hpp"
#include "crtperm/corrections.hpp"
#include "crtperm/error.hpp"
#include "crtperm/glm.hpp"
#include "crtperm/parallel.hpp"
#include "crtperm/permutation.hpp"
#include "crtperm/statistics.hpp"

namespace crtperm {

enum class CovarianceSource { estimate, fixed };

/// Working covariance for the weighted statistic. With `estimate` the
/// variance components come from the unconstrained fit of each outcome;
/// with `fixed` one spec per outcome is given.
struct CovarianceConfig {
  CovarianceSource source = CovarianceSource::estimate;
  CovarianceStructure structure = CovarianceStructure::exchangeable;
  std::vector<CovarianceSpec> fixed;
};

struct AnalysisConfig {
  ColumnMapping columns;
  double alpha = 0.05;
  std::vector<Method> methods{kAllMethods.begin(), kAllMethods.end()};
  StatisticKind statistic = StatisticKind::unweighted;
  Sided sided = Sided::two_sided;
  std::size_t permutations = 1000;  // M
  std::size_t steps = 2000;         // Q
  std::uint64_t seed = 0;
  EnumerateMode enumerate = EnumerateMode::automatic;
  CovarianceConfig covariance;
  bool confidence_sets = true;
};

inline void validate_config(const AnalysisConfig& cfg) {
  if (cfg.columns.outcomes.empty()) throw ConfigError("missing field: outcomes");
  for (const auto& o : cfg.columns.outcomes) check_supported(o);
  if (!(cfg.alpha > 0.0 && cfg.alpha < 0.5)) throw ConfigError("alpha must lie in (0, 0.5)");
  if (cfg.methods.empty()) throw ConfigError("methods must not be empty");
  if (cfg.permutations < 1) throw ConfigError("M must be positive");
  if (cfg.confidence_sets && cfg.steps < 100) throw ConfigError("Q must be at least 100");
  if (cfg.covariance.source == CovarianceSource::fixed) {
    if (cfg.covariance.fixed.size() != cfg.columns.outcomes.size()) {
      throw ConfigError("covariance: one fixed spec per outcome is required");
    }
    for (const auto& s : cfg.covariance.fixed) check_covariance_spec(s);
  } else if (cfg.covariance.structure == CovarianceStructure::ar1_time) {
    throw ConfigError("covariance: ar1_time requires fixed values");
  }
}

/// One row of the result table.
struct AnalysisRecord {
  std::size_t outcome = 0;
  Method method = Method::none;
  double estimate = 0.0;
  double p_unadjusted = 1.0;
  double p_adjusted = 1.0;
  std::optional<double> lower;
  std::optional<double> upper;
};

struct AnalysisTimings {
  double fit_seconds = 0.0;
  double pvalue_seconds = 0.0;
  double search_seconds = 0.0;
  double total_seconds = 0.0;
};

struct AnalysisResult {
  std::vector<std::string> outcome_names;
  std::vector<double> estimates;
  std::vector<double> naive_se;
  std::vector<AnalysisRecord> records;  // outcome-major, methods in canonical order
  bool exhaustive = false;
  std::size_t n_permutations = 0;
  std::size_t clamped = 0;
  std::size_t warnings = 0;
  AnalysisTimings timings;
  std::vector<StepRecord> trace;
  std::optional<Method> trace_method;
};

/// Covariance matrices per outcome for the weighted statistic.
inline std::vector<ClusterSolver> working_solvers(const TrialDataset& ds, const CovarianceConfig& cov,
                                                  const std::vector<FittedMeanModel>& fits) {
  std::vector<ClusterSolver> solvers;
  for (std::size_t j = 0; j < ds.n_outcomes(); ++j) {
    CovarianceSpec spec;
    if (cov.source == CovarianceSource::fixed) {
      spec = cov.fixed.at(j);
    } else {
      const auto vc = estimate_variance_components(ds, j, fits[j]);
      spec.structure = cov.structure;
      if (cov.structure == CovarianceStructure::independent) {
        spec.sigma2 = std::max(vc.sigma2 + vc.tau2, 1e-8);
      } else {
        spec.sigma2 = std::max(vc.sigma2, 1e-8);
        spec.tau2 = vc.tau2;
      }
    }
    solvers.emplace_back(ds.layout, build_cluster_covariance(spec, ds.layout), ds.cluster_labels);
  }
  return solvers;
}

/// Methods sorted into canonical order without duplicates.
inline std::vector<Method> canonical_methods(const std::vector<Method>& methods) {
  std::vector<Method> out;
  for (Method m : kAllMethods) {
    if (std::find(methods.begin(), methods.end(), m) != methods.end()) out.push_back(m);
  }
  return out;
}

/// Runs the full analysis. `trace_method`, when set and requested, records
/// the search trace of that method.
inline AnalysisResult run_analysis(const TrialDataset& ds, const AnalysisConfig& cfg, unsigned threads = 1,
                                   std::optional<Method> trace_method = std::nullopt) {
  validate_config(cfg);
  using clock = std::chrono::steady_clock;
  const auto seconds = [](clock::time_point a, clock::time_point b) {
    return std::chrono::duration<double>(b - a).count();
  };
  const auto t0 = clock::now();
  AnalysisResult out;
  const std::size_t J = ds.n_outcomes();
  for (const auto& o : ds.outcome_specs) out.outcome_names.push_back(o.name);

  SearchInputs inputs = prepare_search_inputs(ds);
  std::vector<FittedMeanModel> null_fits;
  for (std::size_t j = 0; j < J; ++j) {
    out.estimates.push_back(inputs.fits[j].delta());
    out.naive_se.push_back(inputs.fits[j].naive_se);
    null_fits.push_back(inputs.designs[j].fit_fixed(0.0, &inputs.fits[j]));
  }
  std::vector<ClusterSolver> solvers;
  if (cfg.statistic == StatisticKind::weighted) solvers = working_solvers(ds, cfg.covariance, inputs.fits);
  const auto t1 = clock::now();

  PermutationPlan plan;
  plan.draws = cfg.permutations;
  plan.seed = cfg.seed;
  plan.enumerate = cfg.enumerate;
  const StatisticContext ctx{cfg.statistic, cfg.statistic == StatisticKind::weighted ? &solvers : nullptr};
  const StatMatrix matrix = build_stat_matrix(ds, null_fits, plan, ctx, threads);
  out.exhaustive = matrix.exhaustive;
  out.n_permutations = matrix.n_permutations();
  const auto methods = canonical_methods(cfg.methods);
  std::vector<AdjustedPValues> adjusted;
  for (Method m : methods) adjusted.push_back(adjust(matrix, m, cfg.sided));
  const auto t2 = clock::now();

  std::vector<ConfidenceSet> sets(methods.size());
  if (cfg.confidence_sets) {
    inputs.solvers = ctx.solvers;
    parallel_for(methods.size(), threads, [&](std::size_t i) {
      SearchOptions opt;
      opt.method = methods[i];
      opt.kind = cfg.statistic;
      opt.alpha = cfg.alpha;
      opt.steps = cfg.steps;
      opt.seed = cfg.seed;
      opt.record_trace = trace_method && *trace_method == methods[i];
      sets[i] = rm_search(ds, inputs, opt);
    });
  }
  const auto t3 = clock::now();

  for (std::size_t j = 0; j < J; ++j) {
    for (std::size_t i = 0; i < methods.size(); ++i) {
      AnalysisRecord r;
      r.outcome = j;
      r.method = methods[i];
      r.estimate = out.estimates[j];
      r.p_unadjusted = adjusted[i].p_unadjusted[j];
      r.p_adjusted = adjusted[i].p_adjusted[j];
      if (cfg.confidence_sets) {
        r.lower = sets[i].lower[j];
        r.upper = sets[i].upper[j];
      }
      out.records.push_back(r);
    }
  }
  for (std::size_t i = 0; i < sets.size(); ++i) {
    out.clamped += sets[i].clamped;
    out.warnings += sets[i].warnings;
    if (trace_method && *trace_method == methods[i]) {
      out.trace = std::move(sets[i].trace);
      out.trace_method = methods[i];
    }
  }
  out.timings = {seconds(t0, t1), seconds(t1, t2), seconds(t2, t3), seconds(t0, clock::now())};
  return out;
}

}  // namespace crtperm
