#pragma once

// Multiplicity-adjusted p-values from a statistic matrix, and the
// single-permutation accept/reject step used by the confidence-set search.

#include <algorithm>
#include <array>
#include <cmath>
#include <limits>
#include <numeric>
#include <span>
#include <string>
#include <vector>

#include "crtperm/error.hpp"
#include "crtperm/permutation.hpp"

namespace crtperm {

enum class Method { none, bonferroni, holm, romano_wolf };

/// Canonical output order.
inline constexpr std::array<Method, 4> kAllMethods{Method::none, Method::bonferroni, Method::holm,
                                                   Method::romano_wolf};

inline std::string_view to_string(Method m) {
  switch (m) {
    case Method::none: return "none";
    case Method::bonferroni: return "bonferroni";
    case Method::holm: return "holm";
    case Method::romano_wolf: return "romano_wolf";
  }
  return "?";
}

inline Method parse_method(std::string_view s) {
  if (s == "none") return Method::none;
  if (s == "bonferroni") return Method::bonferroni;
  if (s == "holm") return Method::holm;
  if (s == "romano_wolf") return Method::romano_wolf;
  throw ConfigError("unknown method: " + std::string(s));
}

struct AdjustedPValues {
  Method method = Method::none;
  std::vector<double> p_unadjusted;
  std::vector<double> p_adjusted;
  std::vector<std::size_t> rejection_order;  // decreasing observed extremeness
};

/// Outcome indices by decreasing extremeness; ties keep index order.
inline std::vector<std::size_t> order_by_extremeness(std::span<const double> stats, Sided sided) {
  std::vector<std::size_t> order(stats.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
    return detail::extremeness(stats[a], sided) > detail::extremeness(stats[b], sided);
  });
  return order;
}

namespace detail {

inline AdjustedPValues unadjusted(const StatMatrix& m, Method method, Sided sided) {
  AdjustedPValues out;
  out.method = method;
  std::vector<double> observed(m.n_outcomes);
  for (std::size_t j = 0; j < m.n_outcomes; ++j) {
    out.p_unadjusted.push_back(row_p_value(m, j, sided));
    observed[j] = m.at(j, 0);
  }
  out.rejection_order = order_by_extremeness(observed, sided);
  return out;
}

}  // namespace detail

inline AdjustedPValues adjust_none(const StatMatrix& m, Sided sided = Sided::two_sided) {
  auto out = detail::unadjusted(m, Method::none, sided);
  out.p_adjusted = out.p_unadjusted;
  return out;
}

/// min(J p_j, 1).
inline AdjustedPValues adjust_bonferroni(const StatMatrix& m, Sided sided = Sided::two_sided) {
  auto out = detail::unadjusted(m, Method::bonferroni, sided);
  const auto J = static_cast<double>(m.n_outcomes);
  for (double p : out.p_unadjusted) out.p_adjusted.push_back(std::min(1.0, J * p));
  return out;
}

/// Holm step-down: the r-th smallest p-value is multiplied by J - r + 1,
/// capped at 1, then made non-decreasing in r.
inline AdjustedPValues adjust_holm(const StatMatrix& m, Sided sided = Sided::two_sided) {
  auto out = detail::unadjusted(m, Method::holm, sided);
  const std::size_t J = m.n_outcomes;
  std::vector<std::size_t> by_p(J);
  std::iota(by_p.begin(), by_p.end(), std::size_t{0});
  std::stable_sort(by_p.begin(), by_p.end(),
                   [&](std::size_t a, std::size_t b) { return out.p_unadjusted[a] < out.p_unadjusted[b]; });
  out.p_adjusted.assign(J, 1.0);
  double running = 0.0;
  for (std::size_t r = 0; r < J; ++r) {
    const std::size_t j = by_p[r];
    running = std::max(running, std::min(1.0, static_cast<double>(J - r) * out.p_unadjusted[j]));
    out.p_adjusted[j] = running;
  }
  return out;
}

/// Romano-Wolf step-down with max statistics over the not-yet-processed set:
/// at step r, p_r counts columns whose max over K_r is at least the r-th most
/// extreme observed statistic; p-values are then made non-decreasing.
inline AdjustedPValues adjust_romano_wolf(const StatMatrix& m, Sided sided = Sided::two_sided) {
  auto out = detail::unadjusted(m, Method::romano_wolf, sided);
  const std::size_t J = m.n_outcomes;
  const std::size_t cols = m.n_columns;
  if (cols < 2) throw ConfigError("romano_wolf: at least one permuted statistic is required");
  const auto& order = out.rejection_order;

  // Suffix maxima over K_r = {order[r], ..., order[J-1]}.
  std::vector<std::vector<double>> suffix_max(J, std::vector<double>(cols));
  for (std::size_t r = J; r-- > 0;) {
    const std::size_t j = order[r];
    for (std::size_t c = 1; c < cols; ++c) {
      const double v = detail::extremeness(m.at(j, c), sided);
      suffix_max[r][c] = r + 1 < J ? std::max(v, suffix_max[r + 1][c]) : v;
    }
  }
  out.p_adjusted.assign(J, 1.0);
  double running = 0.0;
  for (std::size_t r = 0; r < J; ++r) {
    const std::size_t j = order[r];
    const double threshold = detail::extremeness(m.at(j, 0), sided);
    std::size_t count = 0;
    for (std::size_t c = 1; c < cols; ++c) {
      if (suffix_max[r][c] >= threshold) ++count;
    }
    const double p = m.exhaustive ? static_cast<double>(count) / static_cast<double>(cols - 1)
                                  : static_cast<double>(1 + count) / static_cast<double>(cols);
    running = std::max(running, p);
    out.p_adjusted[j] = running;
  }
  return out;
}

inline AdjustedPValues adjust(const StatMatrix& m, Method method, Sided sided = Sided::two_sided) {
  switch (method) {
    case Method::none: return adjust_none(m, sided);
    case Method::bonferroni: return adjust_bonferroni(m, sided);
    case Method::holm: return adjust_holm(m, sided);
    case Method::romano_wolf: return adjust_romano_wolf(m, sided);
  }
  throw ConfigError("unknown method");
}

/// Outcome of one single-draw test of all J hypotheses.
struct StepDecision {
  std::vector<bool> reject;
  std::vector<std::size_t> order;  // decreasing observed extremeness
};

/// Accept/reject on one permutation draw. A hypothesis is rejected when the
/// permuted statistic is strictly less extreme than the observed one:
///   none, bonferroni: each outcome compared on its own;
///   holm: per-outcome comparisons in step-down order;
///   romano_wolf: max over the remaining set compared with the r-th
///   observed statistic.
/// For the step-down methods the first failure stops the walk and every
/// later-ordered hypothesis is accepted.
inline StepDecision single_step_decision(Method method, std::span<const double> observed,
                                         std::span<const double> permuted, Sided sided = Sided::two_sided) {
  const std::size_t J = observed.size();
  if (permuted.size() != J) throw ConfigError("single_step_decision: size mismatch");
  for (std::size_t j = 0; j < J; ++j) {
    if (!std::isfinite(observed[j]) || !std::isfinite(permuted[j])) {
      throw NumericalError("corrections", "non-finite statistic in single-step decision");
    }
  }
  StepDecision d;
  d.reject.assign(J, false);
  d.order = order_by_extremeness(observed, sided);
  const auto ext = [sided](double v) { return detail::extremeness(v, sided); };
  switch (method) {
    case Method::none:
    case Method::bonferroni:
      for (std::size_t j = 0; j < J; ++j) d.reject[j] = ext(permuted[j]) < ext(observed[j]);
      break;
    case Method::holm:
      for (std::size_t r = 0; r < J; ++r) {
        const std::size_t j = d.order[r];
        if (!(ext(permuted[j]) < ext(observed[j]))) break;
        d.reject[j] = true;
      }
      break;
    case Method::romano_wolf:
      for (std::size_t r = 0; r < J; ++r) {
        double max_rest = -std::numeric_limits<double>::infinity();
        for (std::size_t s = r; s < J; ++s) max_rest = std::max(max_rest, ext(permuted[d.order[s]]));
        const std::size_t j = d.order[r];
        if (!(max_rest < ext(observed[j]))) break;
        d.reject[j] = true;
      }
      break;
  }
  return d;
}

}  // namespace crtperm
