#pragma once

// Simultaneous confidence limits by Robbins-Monro search over single
// permutation draws. Each side (upper, lower) is an independent chain; at
// step q every outcome's hypothesis delta_j = current limit is tested on one
// shared permutation and the limits move by
//   rejected:     toward the point estimate by s_j alpha*_j / q
//   not rejected: away from it by s_j (1 - alpha*_j) / q
// with s_j = k(alpha*_j) |limit_j - estimate_j|.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <numbers>
#include <optional>
#include <ostream>
#include <span>
#include <string>
#include <vector>

#include "crtperm/core_data.hpp"
#include "crtperm/corrections.hpp"
#include "crtperm/error.hpp"
#include "crtperm/glm.hpp"
#include "crtperm/permutation.hpp"
#include "crtperm/rng.hpp"
#include "crtperm/statistics.hpp"

namespace crtperm {

/// k = 2 / (z phi(z)) with z the (1 - alpha*) standard normal quantile.
inline double step_constant(double alpha_star) {
  if (!(alpha_star > 0.0 && alpha_star < 0.5)) {
    throw ConfigError("step_constant: alpha* must lie in (0, 0.5), got " + std::to_string(alpha_star));
  }
  const double z = normal_quantile(1.0 - alpha_star);
  const double density = std::exp(-0.5 * z * z) / std::sqrt(2.0 * std::numbers::pi);
  return 2.0 / (z * density);
}

/// Per-hypothesis level used in the update: alpha for none and Romano-Wolf,
/// alpha/J for Bonferroni, alpha/(J - r) for the hypothesis at 0-based
/// step-down rank r under Holm.
inline double alpha_star_for(Method method, double alpha, std::size_t n_outcomes, std::size_t rank) {
  switch (method) {
    case Method::none:
    case Method::romano_wolf: return alpha;
    case Method::bonferroni: return alpha / static_cast<double>(n_outcomes);
    case Method::holm: return alpha / static_cast<double>(n_outcomes - rank);
  }
  return alpha;
}

/// Default first step index: min(50, ceil(0.3 (1 - alpha) / alpha)), at least 1.
inline std::size_t default_start_index(double alpha) {
  const double m = std::ceil(0.3 * (1.0 - alpha) / alpha);
  return static_cast<std::size_t>(std::clamp(m, 1.0, 50.0));
}

enum class Side { upper, lower };

inline std::string_view to_string(Side s) { return s == Side::upper ? "upper" : "lower"; }

/// One chain of the search: the current limits on one side.
struct SearchState {
  Side side = Side::upper;
  std::vector<double> limits;
  std::vector<double> point_estimates;
  std::size_t q = 1;  // index of the next step
  std::size_t clamped = 0;
};

struct StepRecord {
  Side side = Side::upper;
  std::size_t q = 0;
  std::size_t outcome = 0;
  double limit = 0.0;  // value after the update
  bool rejected = false;
  double step_length = 0.0;  // s_j
  double alpha_star = 0.0;
};

/// Applies one Robbins-Monro update with the per-outcome alpha* and advances q.
/// A limit that would cross its point estimate is clamped to
/// estimate +/- 1e-6 max(1, |estimate|). Records are appended to `trace` when given.
inline void rm_update(SearchState& state, const std::vector<bool>& reject, std::span<const double> alpha_star,
                      std::vector<StepRecord>* trace = nullptr) {
  const std::size_t J = state.limits.size();
  if (reject.size() != J || alpha_star.size() != J || state.point_estimates.size() != J) {
    throw ConfigError("rm_update: size mismatch");
  }
  const auto q = static_cast<double>(state.q);
  for (std::size_t j = 0; j < J; ++j) {
    const double est = state.point_estimates[j];
    const double a = alpha_star[j];
    const double k = step_constant(a);
    double& lim = state.limits[j];
    const double eps = 1e-6 * std::max(1.0, std::abs(est));
    if (state.side == Side::upper) {
      const double s = k * (lim - est);
      lim = reject[j] ? lim - s * a / q : lim + s * (1.0 - a) / q;
      if (lim <= est) {
        lim = est + eps;
        ++state.clamped;
      }
      if (trace != nullptr) trace->push_back({state.side, state.q, j, lim, reject[j], s, a});
    } else {
      const double s = k * (est - lim);
      lim = reject[j] ? lim + s * a / q : lim - s * (1.0 - a) / q;
      if (lim >= est) {
        lim = est - eps;
        ++state.clamped;
      }
      if (trace != nullptr) trace->push_back({state.side, state.q, j, lim, reject[j], s, a});
    }
  }
  ++state.q;
}

struct SearchOptions {
  Method method = Method::romano_wolf;
  StatisticKind kind = StatisticKind::unweighted;
  double alpha = 0.05;
  std::size_t steps = 2000;  // Q per side
  std::uint64_t seed = 0;
  std::size_t start_index = 0;  // 0 selects default_start_index(alpha)
  double initial_halfwidth = 2.0;  // in naive standard errors
  double refit_tolerance = 0.1;    // in naive standard errors
  bool record_trace = false;
};

struct ConfidenceSet {
  Method method = Method::romano_wolf;
  StatisticKind kind = StatisticKind::unweighted;
  double alpha = 0.05;
  std::size_t steps = 0;
  std::uint64_t seed = 0;
  std::vector<double> point_estimates;
  std::vector<double> lower;
  std::vector<double> upper;
  std::size_t clamped = 0;
  std::size_t warnings = 0;  // limits shrunk after a non-finite statistic
  std::size_t refits = 0;
  std::vector<StepRecord> trace;
};

/// Unconstrained fits and, for the weighted statistic, per-outcome solvers.
struct SearchInputs {
  std::vector<MeanModelDesign> designs;
  std::vector<FittedMeanModel> fits;
  const std::vector<ClusterSolver>* solvers = nullptr;
};

inline SearchInputs prepare_search_inputs(const TrialDataset& ds, const std::vector<ClusterSolver>* solvers = nullptr) {
  SearchInputs in;
  in.solvers = solvers;
  for (std::size_t j = 0; j < ds.n_outcomes(); ++j) {
    in.designs.emplace_back(ds, j);
    in.fits.push_back(in.designs.back().fit());
  }
  return in;
}

namespace detail {

/// State of one outcome within a chain: the constrained fit whose nuisance
/// estimates are currently in use.
struct NullModel {
  FittedMeanModel fit;
  double fitted_at = 0.0;
};

inline void run_chain(const TrialDataset& ds, const SearchInputs& in, const SearchOptions& opt, Side side,
                      ConfidenceSet& out) {
  const std::size_t J = ds.n_outcomes();
  SearchState state;
  state.side = side;
  state.q = opt.start_index > 0 ? opt.start_index : default_start_index(opt.alpha);
  std::vector<double> se(J);
  for (std::size_t j = 0; j < J; ++j) {
    const double est = in.fits[j].delta();
    se[j] = in.fits[j].naive_se > 0.0 ? in.fits[j].naive_se : 1e-3 * std::max(1.0, std::abs(est));
    state.point_estimates.push_back(est);
    const double h = opt.initial_halfwidth * se[j];
    state.limits.push_back(side == Side::upper ? est + h : est - h);
  }
  std::vector<NullModel> nulls(J);
  for (std::size_t j = 0; j < J; ++j) {
    nulls[j].fit = in.designs[j].fit_fixed(state.limits[j], &in.fits[j]);
    nulls[j].fitted_at = state.limits[j];
    ++out.refits;
  }

  const std::uint64_t key = derive_key(opt.seed, side == Side::upper ? StreamTag::search_upper : StreamTag::search_lower);
  const Assignment observed = observed_assignment(ds.design);
  std::vector<double> obs(J), perm(J), astar(J);
  std::vector<PreparedStatistic> prepared(J);

  std::size_t done = 0;
  std::size_t attempts = 0;
  while (done < opt.steps) {
    if (++attempts > 4 * opt.steps + 100) {
      throw NumericalError("confidence_search", "too many non-finite statistics during the search");
    }
    bool degenerate = false;
    for (std::size_t j = 0; j < J; ++j) {
      const double lim = state.limits[j];
      if (std::abs(lim - nulls[j].fitted_at) > opt.refit_tolerance * se[j]) {
        nulls[j].fit = in.designs[j].fit_fixed(lim, &nulls[j].fit);
        nulls[j].fitted_at = lim;
        ++out.refits;
      }
      const auto res = residuals_with_nuisance(nulls[j].fit, lim, ds, j);
      const ClusterSolver* solver = in.solvers != nullptr ? &(*in.solvers)[j] : nullptr;
      ClusterScores scores;
      if (opt.kind == StatisticKind::weighted) {
        const auto eta = shifted_linear_predictor(nulls[j].fit, lim, ds);
        scores = scores_for(ds, res, eta, opt.kind, solver);
      } else {
        scores = unweighted_scores(ds.layout, res);
      }
      prepared[j] = PreparedStatistic(scores, ds.design);
      obs[j] = prepared[j].evaluate(observed);
      if (!std::isfinite(obs[j])) {
        state.limits[j] = 0.5 * (lim + state.point_estimates[j]);
        ++out.warnings;
        degenerate = true;
      }
    }
    if (degenerate) continue;

    CounterRng rng(key, state.q);
    const Assignment draw = sample_assignment(ds.design, rng);
    for (std::size_t j = 0; j < J; ++j) {
      perm[j] = prepared[j].evaluate(draw);
      if (!std::isfinite(perm[j])) perm[j] = 0.0;  // all-zero contributions under this draw
    }
    const StepDecision d = single_step_decision(opt.method, obs, perm, Sided::two_sided);
    for (std::size_t r = 0; r < J; ++r) {
      astar[d.order[r]] = alpha_star_for(opt.method, opt.alpha, J, r);
    }
    rm_update(state, d.reject, astar, opt.record_trace ? &out.trace : nullptr);
    ++done;
  }
  out.clamped += state.clamped;
  if (side == Side::upper) {
    out.upper = state.limits;
  } else {
    out.lower = state.limits;
  }
}

}  // namespace detail

/// Searches for [L_j, U_j] with family-wise coverage 1 - alpha under
/// `opt.method`. Both chains are deterministic given (seed, steps).
inline ConfidenceSet rm_search(const TrialDataset& ds, const SearchInputs& in, const SearchOptions& opt) {
  if (opt.steps < 100) throw ConfigError("search: at least 100 steps are required");
  if (!(opt.alpha > 0.0 && opt.alpha < 0.5)) throw ConfigError("search: alpha must lie in (0, 0.5)");
  if (opt.kind == StatisticKind::weighted && in.solvers == nullptr) {
    throw ConfigError("search: weighted statistic requires covariance matrices");
  }
  ConfidenceSet out;
  out.method = opt.method;
  out.kind = opt.kind;
  out.alpha = opt.alpha;
  out.steps = opt.steps;
  out.seed = opt.seed;
  for (const auto& f : in.fits) out.point_estimates.push_back(f.delta());
  detail::run_chain(ds, in, opt, Side::upper, out);
  detail::run_chain(ds, in, opt, Side::lower, out);
  return out;
}

inline ConfidenceSet rm_search(const TrialDataset& ds, const SearchOptions& opt,
                               const std::vector<ClusterSolver>* solvers = nullptr) {
  const SearchInputs in = prepare_search_inputs(ds, solvers);
  return rm_search(ds, in, opt);
}

/// Trace as CSV: side,q,outcome,limit,rejected,s_j.
inline void write_trace(std::ostream& out, const std::vector<StepRecord>& trace) {
  out << "side,q,outcome,limit,rejected,s_j\n";
  for (const auto& r : trace) {
    out << to_string(r.side) << ',' << r.q << ',' << r.outcome << ',' << detail::format_number(r.limit) << ','
        << (r.rejected ? 1 : 0) << ',' << detail::format_number(r.step_length) << '\n';
  }
}

}  // namespace crtperm
