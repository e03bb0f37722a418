#pragma once

// Studentized permutation statistics for H: delta = delta*.
//
// Both statistics reduce to per cluster-period contributions A_ct that do not
// depend on the allocation:
//   unweighted: A_ct = sum_{i in (c,t)} (Y - mu)_i
//   weighted:   A_ct = sum_{k in (c,t)} G_k [V_c^-1 (Y_c - mu_c)]_k
// and for signed indicators D*_ct the cluster contribution is
// w_c = sum_t D*_ct A_ct, with T = sum_c w_c / sqrt(sum_c w_c^2).

#include <Eigen/Cholesky>
#include <Eigen/Dense>

#include <cmath>
#include <cstdint>
#include <limits>
#include <span>
#include <string>
#include <vector>

#include "crtperm/core_data.hpp"
#include "crtperm/error.hpp"
#include "crtperm/glm.hpp"

namespace crtperm {

enum class StatisticKind { unweighted, weighted };

inline std::string_view to_string(StatisticKind k) { return k == StatisticKind::unweighted ? "unweighted" : "weighted"; }

inline StatisticKind parse_statistic_kind(std::string_view s) {
  if (s == "unweighted") return StatisticKind::unweighted;
  if (s == "weighted") return StatisticKind::weighted;
  throw ConfigError("unknown statistic: " + std::string(s));
}

/// Per-cluster treatment flags (1 = treated sequence); the permutable unit.
using Assignment = std::vector<std::uint8_t>;

inline Assignment observed_assignment(const DesignInfo& design) {
  Assignment a(design.n_clusters);
  for (std::size_t c = 0; c < design.n_clusters; ++c) a[c] = design.observed_treated[c] ? 1 : 0;
  return a;
}

/// Generalised residuals Y - h(eta) with delta* inside eta.
struct NullResiduals {
  std::vector<double> values;
  double delta_star = 0.0;
  std::size_t outcome_index = 0;
};

/// D*_ct = +1 where the allocation assigns treatment, -1 elsewhere.
struct SignedAllocation {
  std::size_t n_clusters = 0;
  std::size_t n_periods = 0;
  std::vector<std::int8_t> signs;  // row-major [cluster][period]

  int at(std::size_t c, std::size_t t) const { return signs[c * n_periods + t]; }

  SignedAllocation negated() const {
    SignedAllocation out = *this;
    for (auto& s : out.signs) s = static_cast<std::int8_t>(-s);
    return out;
  }
};

inline SignedAllocation signed_allocation(const DesignInfo& design, std::span<const std::uint8_t> treated) {
  SignedAllocation a{design.n_clusters, design.n_periods, std::vector<std::int8_t>(design.n_clusters * design.n_periods)};
  for (std::size_t c = 0; c < design.n_clusters; ++c) {
    for (std::size_t t = 0; t < design.n_periods; ++t) {
      const bool on = treated[c] != 0 && design.treated_sequence[t] == 1;
      a.signs[c * design.n_periods + t] = on ? 1 : -1;
    }
  }
  return a;
}

namespace detail {

inline bool same_delta(double a, double b) { return std::abs(a - b) <= 1e-12 * std::max(1.0, std::abs(a)); }

inline NullResiduals residuals_from_eta(const TrialDataset& ds, std::size_t outcome_index,
                                        std::span<const double> eta, double shift, double delta_star) {
  const Link link = ds.outcome_specs.at(outcome_index).link;
  NullResiduals r{std::vector<double>(ds.n_obs()), delta_star, outcome_index};
  for (std::size_t i = 0; i < ds.n_obs(); ++i) {
    const double e = eta[i] + shift * ds.observations[i].treatment;
    r.values[i] = ds.outcome(i, outcome_index) - inverse_link(link, e);
  }
  return r;
}

}  // namespace detail

/// Residuals from a fit whose treatment effect was fixed at `delta_star`.
inline NullResiduals residuals_under_null(const FittedMeanModel& fitted, double delta_star, const TrialDataset& ds,
                                          std::size_t outcome_index) {
  if (!fitted.delta_fixed || !detail::same_delta(*fitted.delta_fixed, delta_star)) {
    throw ConfigError("residuals_under_null: fit was not constrained at delta* = " + std::to_string(delta_star));
  }
  if (fitted.outcome_index != outcome_index) throw ConfigError("residuals_under_null: outcome index mismatch");
  return detail::residuals_from_eta(ds, outcome_index, fitted.linear_predictor, 0.0, delta_star);
}

/// Residuals at `delta_star` reusing the nuisance estimates of a nearby
/// constrained fit: eta is shifted by (delta_star - fitted delta) * D.
inline NullResiduals residuals_with_nuisance(const FittedMeanModel& fitted, double delta_star, const TrialDataset& ds,
                                             std::size_t outcome_index) {
  return detail::residuals_from_eta(ds, outcome_index, fitted.linear_predictor, delta_star - fitted.delta(),
                                    delta_star);
}

/// Linear predictor matching residuals_with_nuisance.
inline std::vector<double> shifted_linear_predictor(const FittedMeanModel& fitted, double delta_star,
                                                    const TrialDataset& ds) {
  std::vector<double> eta(fitted.linear_predictor);
  const double shift = delta_star - fitted.delta();
  for (std::size_t i = 0; i < eta.size(); ++i) eta[i] += shift * ds.observations[i].treatment;
  return eta;
}

/// Per cluster-period contributions A_ct, row-major [cluster][period].
struct ClusterScores {
  std::size_t n_clusters = 0;
  std::size_t n_periods = 0;
  std::vector<double> values;

  double at(std::size_t c, std::size_t t) const { return values[c * n_periods + t]; }
};

inline ClusterScores unweighted_scores(const ClusterLayout& layout, const NullResiduals& residuals) {
  ClusterScores s{layout.n_clusters, layout.n_periods, std::vector<double>(layout.n_clusters * layout.n_periods)};
  for (std::size_t c = 0; c < layout.n_clusters; ++c) {
    for (std::size_t t = 0; t < layout.n_periods; ++t) {
      double sum = 0.0;
      for (auto i : layout.rows[c][t]) sum += residuals.values[i];
      s.values[c * layout.n_periods + t] = sum;
    }
  }
  return s;
}

/// Cholesky factors of the per-cluster working covariances, computed once
/// and reused for every allocation and every null value.
class ClusterSolver {
 public:
  ClusterSolver() = default;

  ClusterSolver(const ClusterLayout& layout, const std::vector<Eigen::MatrixXd>& covariances,
                const std::vector<std::string>& cluster_labels = {}) {
    if (covariances.size() != layout.n_clusters) {
      throw ConfigError("weighted statistic: expected " + std::to_string(layout.n_clusters) +
                        " covariance matrices, got " + std::to_string(covariances.size()));
    }
    factors_.reserve(covariances.size());
    for (std::size_t c = 0; c < covariances.size(); ++c) {
      const auto name = c < cluster_labels.size() ? cluster_labels[c] : std::to_string(c);
      const auto n = static_cast<Eigen::Index>(layout.cluster_size(c));
      if (covariances[c].rows() != n || covariances[c].cols() != n) {
        throw ConfigError("weighted statistic: covariance dimension mismatch for cluster '" + name + "'");
      }
      Eigen::LLT<Eigen::MatrixXd> llt(covariances[c]);
      if (llt.info() != Eigen::Success || llt.matrixL().toDenseMatrix().diagonal().minCoeff() <= 1e-14) {
        throw NumericalError("test_statistics", "singular covariance matrix for cluster '" + name + "'");
      }
      factors_.push_back(std::move(llt));
    }
  }

  std::size_t size() const { return factors_.size(); }
  const Eigen::LLT<Eigen::MatrixXd>& factor(std::size_t c) const { return factors_[c]; }

 private:
  std::vector<Eigen::LLT<Eigen::MatrixXd>> factors_;
};

/// Weighted contributions: A_ct = sum_{k in (c,t)} G_k [V_c^-1 r_c]_k.
inline ClusterScores weighted_scores(const ClusterLayout& layout, const NullResiduals& residuals,
                                     const ClusterSolver& solver, std::span<const double> g) {
  if (g.size() != residuals.values.size()) throw ConfigError("weighted statistic: weight vector size mismatch");
  if (solver.size() != layout.n_clusters) throw ConfigError("weighted statistic: solver size mismatch");
  ClusterScores s{layout.n_clusters, layout.n_periods, std::vector<double>(layout.n_clusters * layout.n_periods)};
  Eigen::VectorXd r;
  for (std::size_t c = 0; c < layout.n_clusters; ++c) {
    r.resize(static_cast<Eigen::Index>(layout.cluster_size(c)));
    Eigen::Index k = 0;
    for (std::size_t t = 0; t < layout.n_periods; ++t) {
      for (auto i : layout.rows[c][t]) r(k++) = residuals.values[i];
    }
    const Eigen::VectorXd z = solver.factor(c).solve(r);
    k = 0;
    for (std::size_t t = 0; t < layout.n_periods; ++t) {
      double sum = 0.0;
      for (auto i : layout.rows[c][t]) sum += g[i] * z(k++);
      s.values[c * layout.n_periods + t] = sum;
    }
  }
  return s;
}

/// T = sum_c w_c / sqrt(sum_c w_c^2), w_c = sum_t D*_ct A_ct.
inline double studentized(const ClusterScores& scores, const SignedAllocation& alloc) {
  if (alloc.n_clusters != scores.n_clusters || alloc.n_periods != scores.n_periods) {
    throw ConfigError("statistic: allocation dimension mismatch");
  }
  double num = 0.0, den = 0.0;
  for (std::size_t c = 0; c < scores.n_clusters; ++c) {
    double w = 0.0;
    for (std::size_t t = 0; t < scores.n_periods; ++t) w += alloc.at(c, t) * scores.at(c, t);
    num += w;
    den += w * w;
  }
  if (!(den > 0.0)) throw NumericalError("test_statistics", "degenerate statistic (all cluster contributions zero)");
  return num / std::sqrt(den);
}

inline double unweighted_stat(const TrialDataset& ds, const NullResiduals& residuals, const SignedAllocation& alloc) {
  return studentized(unweighted_scores(ds.layout, residuals), alloc);
}

inline double weighted_stat(const TrialDataset& ds, const NullResiduals& residuals, const SignedAllocation& alloc,
                            const std::vector<Eigen::MatrixXd>& covariances, std::span<const double> g) {
  const ClusterSolver solver(ds.layout, covariances, ds.cluster_labels);
  return studentized(weighted_scores(ds.layout, residuals, solver, g), alloc);
}

/// Allocation-invariant form of a statistic for fast evaluation over many
/// allocations: each cluster contributes one of two precomputed values.
class PreparedStatistic {
 public:
  PreparedStatistic() = default;

  PreparedStatistic(const ClusterScores& scores, const DesignInfo& design)
      : if_treated_(scores.n_clusters), if_control_(scores.n_clusters) {
    for (std::size_t c = 0; c < scores.n_clusters; ++c) {
      double on = 0.0, off = 0.0;
      for (std::size_t t = 0; t < scores.n_periods; ++t) {
        const double a = scores.at(c, t);
        on += design.treated_sequence[t] == 1 ? a : -a;
        off -= a;
      }
      if_treated_[c] = on;
      if_control_[c] = off;
    }
  }

  /// Returns NaN when every cluster contribution is zero.
  double evaluate(std::span<const std::uint8_t> treated) const noexcept {
    double num = 0.0, den = 0.0;
    for (std::size_t c = 0; c < if_treated_.size(); ++c) {
      const double w = treated[c] != 0 ? if_treated_[c] : if_control_[c];
      num += w;
      den += w * w;
    }
    return den > 0.0 ? num / std::sqrt(den) : std::numeric_limits<double>::quiet_NaN();
  }

 private:
  std::vector<double> if_treated_;
  std::vector<double> if_control_;
};

}  // namespace crtperm
