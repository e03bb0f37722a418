#pragma once

// Re-allocation of clusters under the randomisation scheme and the joint
// permutation distribution of the J test statistics.

#include <cmath>
#include <cstdint>
#include <limits>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "crtperm/core_data.hpp"
#include "crtperm/error.hpp"
#include "crtperm/glm.hpp"
#include "crtperm/parallel.hpp"
#include "crtperm/rng.hpp"
#include "crtperm/statistics.hpp"

namespace crtperm {

enum class Sided { two_sided, one_sided };

inline std::string_view to_string(Sided s) { return s == Sided::two_sided ? "two_sided" : "one_sided"; }

inline Sided parse_sided(std::string_view s) {
  if (s == "two_sided") return Sided::two_sided;
  if (s == "one_sided") return Sided::one_sided;
  throw ConfigError("unknown sidedness: " + std::string(s));
}

/// Number of allocations C choose k, saturating at uint64 max.
inline std::uint64_t count_allocations(std::size_t n, std::size_t k) {
  if (k > n) return 0;
  k = std::min(k, n - k);
  std::uint64_t result = 1;
  for (std::size_t i = 1; i <= k; ++i) {
    const std::uint64_t num = n - k + i;
    if (result > std::numeric_limits<std::uint64_t>::max() / num) return std::numeric_limits<std::uint64_t>::max();
    result = result * num / i;
  }
  return result;
}

/// Every allocation with the design's treated-arm size, in lexicographic
/// order of treated cluster index sets.
inline std::vector<Assignment> enumerate_allocations(const DesignInfo& design) {
  const std::size_t C = design.n_clusters;
  const std::size_t k = design.n_treated;
  std::vector<Assignment> out;
  out.reserve(static_cast<std::size_t>(count_allocations(C, k)));
  std::vector<std::size_t> idx(k);
  for (std::size_t i = 0; i < k; ++i) idx[i] = i;
  for (;;) {
    Assignment a(C, 0);
    for (auto i : idx) a[i] = 1;
    out.push_back(std::move(a));
    std::size_t pos = k;
    while (pos > 0 && idx[pos - 1] == C - k + pos - 1) --pos;
    if (pos == 0) break;
    ++idx[pos - 1];
    for (std::size_t i = pos; i < k; ++i) idx[i] = idx[i - 1] + 1;
  }
  return out;
}

/// Uniform draw of n_treated clusters (partial Fisher-Yates).
inline Assignment sample_assignment(const DesignInfo& design, CounterRng& rng) {
  const std::size_t C = design.n_clusters;
  std::vector<std::uint32_t> order(C);
  for (std::size_t i = 0; i < C; ++i) order[i] = static_cast<std::uint32_t>(i);
  Assignment a(C, 0);
  for (std::size_t i = 0; i < design.n_treated; ++i) {
    const std::size_t j = i + rng.below(static_cast<std::uint32_t>(C - i));
    std::swap(order[i], order[j]);
    a[order[i]] = 1;
  }
  return a;
}

/// Draw `index` of the permutation stream keyed by `seed`; the same pair
/// always yields the same allocation.
inline Assignment draw_assignment(const DesignInfo& design, std::uint64_t seed, std::uint64_t index) {
  CounterRng rng(derive_key(seed, StreamTag::permutation), index);
  return sample_assignment(design, rng);
}

/// Randomly re-allocates clusters; with a baseline period every cluster stays
/// untreated in period 1.
inline SignedAllocation sample_allocation(const DesignInfo& design, CounterRng& rng) {
  const Assignment a = sample_assignment(design, rng);
  return signed_allocation(design, a);
}

enum class EnumerateMode { automatic, always, never };

inline std::string_view to_string(EnumerateMode m) {
  switch (m) {
    case EnumerateMode::automatic: return "auto";
    case EnumerateMode::always: return "always";
    case EnumerateMode::never: return "never";
  }
  return "?";
}

inline EnumerateMode parse_enumerate_mode(std::string_view s) {
  if (s == "auto") return EnumerateMode::automatic;
  if (s == "always") return EnumerateMode::always;
  if (s == "never") return EnumerateMode::never;
  throw ConfigError("unknown enumerate mode: " + std::string(s));
}

struct PermutationPlan {
  std::size_t draws = 1000;  // M
  std::uint64_t seed = 0;
  EnumerateMode enumerate = EnumerateMode::automatic;
  std::uint64_t enumerate_threshold = 20000;

  /// Whether the full allocation set is used for `design`.
  bool exhaustive(const DesignInfo& design) const {
    const auto count = count_allocations(design.n_clusters, design.n_treated);
    switch (enumerate) {
      case EnumerateMode::always:
        if (count > 10'000'000) throw ConfigError("allocation set too large to enumerate");
        return true;
      case EnumerateMode::never: return false;
      case EnumerateMode::automatic: return count <= enumerate_threshold;
    }
    return false;
  }
};

/// J x (1 + columns) statistics; column 0 is the observed allocation. In an
/// exhaustive matrix columns 1..L are every allocation (the observed one
/// included), otherwise they are M Monte Carlo draws.
struct StatMatrix {
  std::size_t n_outcomes = 0;
  std::size_t n_columns = 0;  // including column 0
  std::vector<double> values;  // row-major
  std::vector<double> delta_star;
  StatisticKind kind = StatisticKind::unweighted;
  bool exhaustive = false;

  double at(std::size_t j, std::size_t m) const { return values[j * n_columns + m]; }
  double& at(std::size_t j, std::size_t m) { return values[j * n_columns + m]; }
  std::span<const double> row(std::size_t j) const { return {values.data() + j * n_columns, n_columns}; }
  std::size_t n_permutations() const { return n_columns - 1; }
};

/// Evaluates prepared statistics over the observed and permuted allocations.
/// All outcomes in a column share one allocation.
inline StatMatrix stat_matrix_from_prepared(const DesignInfo& design, std::span<const PreparedStatistic> stats,
                                            std::span<const double> delta_star, const PermutationPlan& plan,
                                            StatisticKind kind, unsigned threads = 1) {
  StatMatrix out;
  out.n_outcomes = stats.size();
  out.kind = kind;
  out.delta_star.assign(delta_star.begin(), delta_star.end());
  out.exhaustive = plan.exhaustive(design);
  std::vector<Assignment> all;
  if (out.exhaustive) all = enumerate_allocations(design);
  out.n_columns = 1 + (out.exhaustive ? all.size() : plan.draws);
  out.values.assign(out.n_outcomes * out.n_columns, 0.0);

  const Assignment observed = observed_assignment(design);
  auto fill = [&](std::size_t m, const Assignment& a) {
    for (std::size_t j = 0; j < stats.size(); ++j) {
      const double v = stats[j].evaluate(a);
      if (!std::isfinite(v)) {
        throw NumericalError("permutation_engine", "degenerate statistic for outcome " + std::to_string(j) +
                                                       " at column " + std::to_string(m));
      }
      out.values[j * out.n_columns + m] = v;
    }
  };
  fill(0, observed);
  parallel_for(out.n_columns - 1, threads, [&](std::size_t col) {
    const std::size_t m = col + 1;
    if (out.exhaustive) {
      fill(m, all[col]);
    } else {
      fill(m, draw_assignment(design, plan.seed, col));
    }
  });
  return out;
}

/// Per-outcome statistic inputs for building a matrix from fitted models.
struct StatisticContext {
  StatisticKind kind = StatisticKind::unweighted;
  const std::vector<ClusterSolver>* solvers = nullptr;  // per outcome, weighted only
};

inline ClusterScores scores_for(const TrialDataset& ds, const NullResiduals& residuals, std::span<const double> eta,
                                StatisticKind kind, const ClusterSolver* solver) {
  if (kind == StatisticKind::unweighted) return unweighted_scores(ds.layout, residuals);
  if (solver == nullptr) throw ConfigError("weighted statistic requires covariance matrices");
  const auto g = g_weights(eta, ds.outcome_specs.at(residuals.outcome_index).link);
  return weighted_scores(ds.layout, residuals, *solver, g);
}

/// Builds the statistic matrix from one constrained fit per outcome (each at
/// its own delta*). Residuals are computed once per outcome and reused for
/// every column.
inline StatMatrix build_stat_matrix(const TrialDataset& ds, std::span<const FittedMeanModel> fits,
                                    const PermutationPlan& plan, const StatisticContext& ctx, unsigned threads = 1) {
  if (fits.size() != ds.n_outcomes()) throw ConfigError("build_stat_matrix: one fit per outcome is required");
  std::vector<PreparedStatistic> prepared;
  std::vector<double> deltas;
  for (std::size_t j = 0; j < fits.size(); ++j) {
    if (!fits[j].delta_fixed) throw ConfigError("build_stat_matrix: fits must be constrained at delta*");
    const double d = *fits[j].delta_fixed;
    const auto res = residuals_under_null(fits[j], d, ds, j);
    const ClusterSolver* solver = ctx.solvers != nullptr ? &(*ctx.solvers)[j] : nullptr;
    prepared.emplace_back(scores_for(ds, res, fits[j].linear_predictor, ctx.kind, solver), ds.design);
    deltas.push_back(d);
  }
  return stat_matrix_from_prepared(ds.design, prepared, deltas, plan, ctx.kind, threads);
}

namespace detail {

inline void check_finite_row(std::span<const double> row) {
  for (double v : row) {
    if (!std::isfinite(v)) throw NumericalError("permutation_engine", "non-finite statistic in permutation row");
  }
}

inline double extremeness(double v, Sided sided) { return sided == Sided::two_sided ? std::abs(v) : v; }

inline std::size_t count_at_least(std::span<const double> row, double threshold, Sided sided) {
  std::size_t count = 0;
  for (std::size_t m = 1; m < row.size(); ++m) {
    if (extremeness(row[m], sided) >= threshold) ++count;
  }
  return count;
}

}  // namespace detail

/// Add-one Monte Carlo p-value (1 + #{m : T_m at least as extreme}) / (M + 1)
/// for a row laid out as [observed, T_1, ..., T_M].
inline double mc_p_value(std::span<const double> row, Sided sided = Sided::two_sided) {
  if (row.size() < 2) throw ConfigError("mc_p_value: at least one permuted statistic is required");
  detail::check_finite_row(row);
  const double obs = detail::extremeness(row[0], sided);
  const auto count = detail::count_at_least(row, obs, sided);
  return static_cast<double>(1 + count) / static_cast<double>(row.size());
}

/// Exact permutation p-value #{l : T_l at least as extreme} / L when columns
/// 1..L enumerate the whole allocation set (observed allocation included).
inline double exact_p_value(std::span<const double> row, Sided sided = Sided::two_sided) {
  if (row.size() < 2) throw ConfigError("exact_p_value: empty allocation set");
  detail::check_finite_row(row);
  const double obs = detail::extremeness(row[0], sided);
  const auto count = detail::count_at_least(row, obs, sided);
  return static_cast<double>(count) / static_cast<double>(row.size() - 1);
}

/// Unadjusted p-value of row j with the estimator matching the matrix type.
inline double row_p_value(const StatMatrix& m, std::size_t j, Sided sided = Sided::two_sided) {
  return m.exhaustive ? exact_p_value(m.row(j), sided) : mc_p_value(m.row(j), sided);
}

}  // namespace crtperm
