#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "crtperm/crtperm.hpp"

namespace testing_support {

using namespace crtperm;

struct Row {
  std::size_t cluster;
  int period;
  int treatment;
  std::vector<double> outcomes;
  std::vector<double> covariates = {};
};

inline TrialDataset make_dataset(std::size_t n_clusters, std::vector<OutcomeSpec> specs, const std::vector<Row>& rows,
                                 std::vector<std::string> covariate_names = {}) {
  TrialDataset ds;
  for (std::size_t c = 0; c < n_clusters; ++c) ds.cluster_labels.push_back("k" + std::to_string(c));
  ds.outcome_specs = std::move(specs);
  ds.covariate_names = std::move(covariate_names);
  for (const auto& r : rows) ds.observations.push_back({r.cluster, r.period, r.treatment, r.outcomes, r.covariates});
  return finalize_dataset(std::move(ds));
}

inline OutcomeSpec gaussian(std::string name = "y") { return {std::move(name), Family::gaussian, Link::identity}; }
inline OutcomeSpec poisson(std::string name = "y") { return {std::move(name), Family::poisson, Link::log}; }
inline OutcomeSpec binomial(std::string name = "y") { return {std::move(name), Family::binomial, Link::logit}; }

/// Parallel single-period trial with gaussian outcomes drawn from a
/// random-intercept model; the first `treated` clusters are treated.
inline TrialDataset random_gaussian_trial(std::uint64_t seed, std::size_t clusters, std::size_t treated,
                                          std::size_t per_cluster, std::size_t outcomes = 1, double effect = 0.0,
                                          double tau = 0.3) {
  CounterRng rng(seed, 99);
  std::vector<OutcomeSpec> specs;
  for (std::size_t j = 0; j < outcomes; ++j) specs.push_back(gaussian("y" + std::to_string(j + 1)));
  std::vector<Row> rows;
  for (std::size_t c = 0; c < clusters; ++c) {
    const int d = c < treated ? 1 : 0;
    std::vector<double> theta(outcomes);
    for (auto& t : theta) t = tau * rng.normal();
    for (std::size_t i = 0; i < per_cluster; ++i) {
      Row r{c, 1, d, {}};
      for (std::size_t j = 0; j < outcomes; ++j) r.outcomes.push_back(1.0 + effect * d + theta[j] + rng.normal());
      rows.push_back(std::move(r));
    }
  }
  return make_dataset(clusters, std::move(specs), rows);
}

/// Residuals with the given values (bypassing a model fit).
inline NullResiduals residuals_of(std::vector<double> values, double delta_star = 0.0, std::size_t outcome = 0) {
  return {std::move(values), delta_star, outcome};
}

}  // namespace testing_support
