#pragma once

// Synthetic cluster randomised trials and the Monte Carlo study harness
// estimating family-wise error, family-wise coverage and interval width.

#include <Eigen/Cholesky>
#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <optional>
#include <ostream>
#include <string>
#include <vector>

#include "crtperm/confidence.hpp"
#include "crtperm/core_data.hpp"
#include "crtperm/corrections.hpp"
#include "crtperm/error.hpp"
#include "crtperm/glm.hpp"
#include "crtperm/parallel.hpp"
#include "crtperm/permutation.hpp"
#include "crtperm/rng.hpp"
#include "crtperm/statistics.hpp"

namespace crtperm {

// ---------------------------------------------------------------------------
// Multivariate normal sampling

/// Draws N(mean, covariance) using a pivoted LDL' factor of the covariance,
/// so positive semi-definite (including zero) covariances are accepted.
class MvnSampler {
 public:
  explicit MvnSampler(const Eigen::MatrixXd& covariance) : dim_(covariance.rows()) {
    if (covariance.rows() != covariance.cols()) throw DataError("covariance not square");
    if (!covariance.isApprox(covariance.transpose(), 1e-12)) throw DataError("covariance not symmetric");
    const double scale = std::max(1.0, covariance.cwiseAbs().maxCoeff());
    if (covariance.cwiseAbs().maxCoeff() == 0.0) {
      factor_ = Eigen::MatrixXd::Zero(dim_, dim_);
      return;
    }
    Eigen::LDLT<Eigen::MatrixXd> ldlt(covariance);
    if (ldlt.info() != Eigen::Success) throw DataError("covariance not PSD");
    Eigen::VectorXd d = ldlt.vectorD();
    if (d.minCoeff() < -1e-10 * scale) throw DataError("covariance not PSD");
    d = d.cwiseMax(0.0).cwiseSqrt();
    const Eigen::MatrixXd L = ldlt.matrixL();
    Eigen::MatrixXd LD = L * d.asDiagonal();
    factor_ = ldlt.transpositionsP().transpose() * LD;
    // Reject factors that do not reproduce the covariance (indefinite input).
    if (!(factor_ * factor_.transpose()).isApprox(covariance, 1e-8) &&
        ((factor_ * factor_.transpose()) - covariance).cwiseAbs().maxCoeff() > 1e-8 * scale) {
      throw DataError("covariance not PSD");
    }
  }

  Eigen::Index dim() const { return dim_; }

  Eigen::VectorXd sample(const Eigen::VectorXd& mean, CounterRng& rng) const {
    Eigen::VectorXd z(dim_);
    for (Eigen::Index i = 0; i < dim_; ++i) z(i) = rng.normal();
    return mean + factor_ * z;
  }

 private:
  Eigen::Index dim_;
  Eigen::MatrixXd factor_;
};

inline Eigen::VectorXd mvn_sample(const Eigen::VectorXd& mean, const Eigen::MatrixXd& covariance, CounterRng& rng) {
  if (mean.size() != covariance.rows()) throw DataError("mean/covariance dimension mismatch");
  return MvnSampler(covariance).sample(mean, rng);
}

// ---------------------------------------------------------------------------
// Data-generating processes

enum class Model { model1, model2, model3 };

inline std::string_view to_string(Model m) {
  switch (m) {
    case Model::model1: return "model1";
    case Model::model2: return "model2";
    case Model::model3: return "model3";
  }
  return "?";
}

inline Model parse_model(std::string_view s) {
  if (s == "model1") return Model::model1;
  if (s == "model2") return Model::model2;
  if (s == "model3") return Model::model3;
  throw ConfigError("unknown model: " + std::string(s));
}

/// Parameters of a synthetic trial. `sigma2` are individual-level variances
/// of the gaussian outcomes, `tau2` the cluster (or cluster-period) random
/// effect variances, `rho` / `pi` the individual / cluster cross-outcome
/// correlations. For model3, `n_per_cluster` individuals are sampled in each
/// of the two periods and `rho` correlates the cluster-period effects.
struct DgpSpec {
  Model model = Model::model1;
  std::size_t clusters_per_arm = 7;
  std::size_t n_per_cluster = 20;
  std::vector<double> delta;
  std::vector<double> mu;
  std::vector<double> sigma2;
  std::vector<double> tau2;
  double rho = 0.0;
  double pi = 0.0;
  double lambda = 0.7;
  std::vector<double> period_effect;

  std::size_t n_outcomes() const { return model == Model::model3 ? 3 : 2; }
};

/// Parameter values of the three reference scenarios.
inline DgpSpec default_dgp(Model model) {
  DgpSpec s;
  s.model = model;
  switch (model) {
    case Model::model1:
      s.delta = {0.0, 0.0};
      s.mu = {1.0, 1.0};
      s.sigma2 = {1.0, 1.0};
      s.tau2 = {0.05, 0.05};
      break;
    case Model::model2:
      s.delta = {0.0, 0.0};
      s.mu = {1.0, 1.0};
      s.sigma2 = {1.0, 1.0};
      s.tau2 = {0.05, 0.05};
      break;
    case Model::model3:
      s.delta = {0.0, 0.0, 0.0};
      s.mu = {-1.0, -1.0, -1.0};
      s.sigma2 = {1.0, 1.0, 1.0};
      s.tau2 = {0.05, 0.05, 0.05};
      s.lambda = 0.7;
      s.period_effect = {1.0, 1.0, 1.0};
      break;
  }
  return s;
}

inline void validate_dgp(const DgpSpec& s) {
  const std::size_t J = s.n_outcomes();
  const auto need = [&](const std::vector<double>& v, const char* name) {
    if (v.size() != J) throw ConfigError(std::string("dgp: ") + name + " must have " + std::to_string(J) + " entries");
  };
  need(s.delta, "delta");
  need(s.mu, "mu");
  need(s.sigma2, "sigma2");
  need(s.tau2, "tau2");
  if (s.model == Model::model3) need(s.period_effect, "period_effect");
  if (s.clusters_per_arm < 1 || s.n_per_cluster < 1) throw ConfigError("dgp: cluster sizes must be positive");
  if (std::abs(s.rho) > 1.0 || std::abs(s.pi) > 1.0) throw ConfigError("dgp: correlations must lie in [-1, 1]");
  for (std::size_t j = 0; j < J; ++j) {
    if (s.sigma2[j] < 0.0 || s.tau2[j] < 0.0) throw ConfigError("dgp: variances must be non-negative");
  }
  if (!(s.lambda >= 0.0 && s.lambda <= 1.0)) throw ConfigError("dgp: lambda must lie in [0, 1]");
}

inline Eigen::MatrixXd correlated_pair_covariance(double v1, double v2, double corr) {
  Eigen::MatrixXd m(2, 2);
  m << v1, corr * std::sqrt(v1 * v2), corr * std::sqrt(v1 * v2), v2;
  return m;
}

/// Covariance of the 3T cluster-period effects, ordered [outcome][period]:
/// Cov(theta_lt, theta_l't') = lambda^|t-t'| s_l s_l' (rho if l != l' else 1).
inline Eigen::MatrixXd model3_effect_covariance(const DgpSpec& s, std::size_t periods = 2) {
  const std::size_t L = s.tau2.size();
  const auto dim = static_cast<Eigen::Index>(L * periods);
  Eigen::MatrixXd m(dim, dim);
  for (std::size_t l = 0; l < L; ++l) {
    for (std::size_t t = 0; t < periods; ++t) {
      for (std::size_t l2 = 0; l2 < L; ++l2) {
        for (std::size_t t2 = 0; t2 < periods; ++t2) {
          const double lag = std::pow(s.lambda, std::abs(static_cast<int>(t) - static_cast<int>(t2)));
          const double corr = l == l2 ? 1.0 : s.rho;
          m(static_cast<Eigen::Index>(l * periods + t), static_cast<Eigen::Index>(l2 * periods + t2)) =
              lag * corr * std::sqrt(s.tau2[l] * s.tau2[l2]);
        }
      }
    }
  }
  return m;
}

namespace detail {

inline TrialDataset skeleton(std::size_t n_clusters, std::vector<OutcomeSpec> specs) {
  TrialDataset ds;
  for (std::size_t c = 0; c < n_clusters; ++c) ds.cluster_labels.push_back("c" + std::to_string(c + 1));
  ds.outcome_specs = std::move(specs);
  return ds;
}

}  // namespace detail

/// Two gaussian outcomes with correlated cluster effects and correlated
/// individual errors; the first `clusters_per_arm` clusters are treated.
inline TrialDataset gen_model1(const DgpSpec& s, CounterRng& rng) {
  if (s.model != Model::model1) throw ConfigError("gen_model1: spec is not model1");
  validate_dgp(s);
  const std::size_t C = 2 * s.clusters_per_arm;
  auto ds = detail::skeleton(C, {{"y1", Family::gaussian, Link::identity}, {"y2", Family::gaussian, Link::identity}});
  const MvnSampler cluster_effect(correlated_pair_covariance(s.tau2[0], s.tau2[1], s.pi));
  const MvnSampler individual(correlated_pair_covariance(s.sigma2[0], s.sigma2[1], s.rho));
  const Eigen::VectorXd zero = Eigen::VectorXd::Zero(2);
  ds.observations.reserve(C * s.n_per_cluster);
  for (std::size_t c = 0; c < C; ++c) {
    const int d = c < s.clusters_per_arm ? 1 : 0;
    const Eigen::VectorXd theta = cluster_effect.sample(zero, rng);
    for (std::size_t i = 0; i < s.n_per_cluster; ++i) {
      const Eigen::VectorXd e = individual.sample(zero, rng);
      Observation ob{c, 1, d, {}, {}};
      for (Eigen::Index j = 0; j < 2; ++j) {
        const auto ju = static_cast<std::size_t>(j);
        ob.outcomes.push_back(s.mu[ju] + s.delta[ju] * d + theta(j) + e(j));
      }
      ds.observations.push_back(std::move(ob));
    }
  }
  return finalize_dataset(std::move(ds));
}

/// Poisson-log first outcome and gaussian second outcome with cluster effects.
inline TrialDataset gen_model2(const DgpSpec& s, CounterRng& rng) {
  if (s.model != Model::model2) throw ConfigError("gen_model2: spec is not model2");
  validate_dgp(s);
  const std::size_t C = 2 * s.clusters_per_arm;
  auto ds = detail::skeleton(C, {{"y1", Family::poisson, Link::log}, {"y2", Family::gaussian, Link::identity}});
  const MvnSampler cluster_effect(correlated_pair_covariance(s.tau2[0], s.tau2[1], s.pi));
  const Eigen::VectorXd zero = Eigen::VectorXd::Zero(2);
  const double sd2 = std::sqrt(s.sigma2[1]);
  for (std::size_t c = 0; c < C; ++c) {
    const int d = c < s.clusters_per_arm ? 1 : 0;
    const Eigen::VectorXd theta = cluster_effect.sample(zero, rng);
    const double rate = std::exp(s.mu[0] + s.delta[0] * d + theta(0));
    const double mean2 = s.mu[1] + s.delta[1] * d + theta(1);
    for (std::size_t i = 0; i < s.n_per_cluster; ++i) {
      Observation ob{c, 1, d, {}, {}};
      ob.outcomes.push_back(static_cast<double>(rng.poisson(rate)));
      ob.outcomes.push_back(mean2 + sd2 * rng.normal());
      ds.observations.push_back(std::move(ob));
    }
  }
  return finalize_dataset(std::move(ds));
}

/// Two-period design with baseline: Poisson, gaussian and Bernoulli-logit
/// outcomes, period effects, and autoregressive cluster-period effects.
inline TrialDataset gen_model3(const DgpSpec& s, CounterRng& rng) {
  if (s.model != Model::model3) throw ConfigError("gen_model3: spec is not model3");
  validate_dgp(s);
  const std::size_t C = 2 * s.clusters_per_arm;
  constexpr std::size_t T = 2;
  auto ds = detail::skeleton(C, {{"y1", Family::poisson, Link::log},
                                 {"y2", Family::gaussian, Link::identity},
                                 {"y3", Family::binomial, Link::logit}});
  const MvnSampler effects(model3_effect_covariance(s, T));
  const Eigen::VectorXd zero = Eigen::VectorXd::Zero(effects.dim());
  const double sd2 = std::sqrt(s.sigma2[1]);
  for (std::size_t c = 0; c < C; ++c) {
    const bool treated_arm = c < s.clusters_per_arm;
    const Eigen::VectorXd theta = effects.sample(zero, rng);
    for (std::size_t t = 0; t < T; ++t) {
      const int d = treated_arm && t == 1 ? 1 : 0;
      double eta[3];
      for (std::size_t l = 0; l < 3; ++l) {
        eta[l] = s.mu[l] + s.delta[l] * d + (t == 1 ? s.period_effect[l] : 0.0) +
                 theta(static_cast<Eigen::Index>(l * T + t));
      }
      const double rate = std::exp(eta[0]);
      const double prob = inverse_link(Link::logit, eta[2]);
      for (std::size_t i = 0; i < s.n_per_cluster; ++i) {
        Observation ob{c, static_cast<int>(t + 1), d, {}, {}};
        ob.outcomes.push_back(static_cast<double>(rng.poisson(rate)));
        ob.outcomes.push_back(eta[1] + sd2 * rng.normal());
        ob.outcomes.push_back(rng.bernoulli(prob) ? 1.0 : 0.0);
        ds.observations.push_back(std::move(ob));
      }
    }
  }
  return finalize_dataset(std::move(ds));
}

inline TrialDataset generate(const DgpSpec& s, CounterRng& rng) {
  switch (s.model) {
    case Model::model1: return gen_model1(s, rng);
    case Model::model2: return gen_model2(s, rng);
    case Model::model3: return gen_model3(s, rng);
  }
  throw ConfigError("unknown model");
}

// ---------------------------------------------------------------------------
// Study harness

struct StudySettings {
  std::vector<Method> methods{kAllMethods.begin(), kAllMethods.end()};  // p-value corrections
  std::vector<Method> search_methods{kAllMethods.begin(), kAllMethods.end()};
  std::vector<StatisticKind> kinds{StatisticKind::unweighted};
  bool naive = true;
  double alpha = 0.05;
  std::size_t permutations = 200;  // M
  EnumerateMode enumerate = EnumerateMode::never;
  std::size_t steps = 1000;  // Q per side
  std::size_t replicates = 100;  // R
  std::uint64_t seed = 1;
  unsigned threads = 1;
};

/// Decisions of one (kind, method) analysis in one replicate.
struct MethodOutcome {
  std::vector<double> p_adjusted;
  std::vector<double> lower;  // empty when no search was run
  std::vector<double> upper;
};

struct ReplicateRecord {
  std::size_t index = 0;
  bool failed = false;
  std::string error;
  std::vector<double> point_estimates;
  std::vector<MethodOutcome> analyses;  // [kind][method], see SimulationReport::slot
  std::vector<NaiveInference> naive;
};

struct Proportion {
  double value = 0.0;
  double se = 0.0;
};

inline Proportion proportion(std::size_t hits, std::size_t n) {
  if (n == 0) return {};
  const double p = static_cast<double>(hits) / static_cast<double>(n);
  return {p, std::sqrt(p * (1.0 - p) / static_cast<double>(n))};
}

struct MethodSummary {
  std::string label;  // "romano_wolf", "naive", ...
  std::optional<Method> method;
  std::optional<StatisticKind> kind;
  Proportion fwer;
  bool has_intervals = false;
  Proportion coverage;
  std::vector<double> mean_width;
  std::vector<double> width_se;
};

struct SimulationReport {
  DgpSpec dgp;
  StudySettings settings;
  std::size_t replicates = 0;
  std::size_t failures = 0;
  std::vector<std::string> failure_messages;
  std::vector<MethodSummary> summaries;
  std::vector<ReplicateRecord> records;

  bool too_many_failures() const {
    return replicates > 0 && static_cast<double>(failures) > 0.02 * static_cast<double>(replicates);
  }

  static std::size_t slot(std::size_t kind_index, std::size_t method_index) {
    return kind_index * kAllMethods.size() + method_index;
  }
};

namespace detail {

inline std::size_t method_index(Method m) {
  for (std::size_t i = 0; i < kAllMethods.size(); ++i) {
    if (kAllMethods[i] == m) return i;
  }
  return 0;
}

inline bool contains(const std::vector<Method>& v, Method m) { return std::find(v.begin(), v.end(), m) != v.end(); }

/// Working covariance per outcome for the weighted statistic: the
/// generating covariance for model3, moment estimates otherwise.
inline std::vector<ClusterSolver> weighted_solvers(const TrialDataset& ds, const DgpSpec& dgp,
                                                   const std::vector<FittedMeanModel>& fits) {
  std::vector<ClusterSolver> solvers;
  for (std::size_t j = 0; j < ds.n_outcomes(); ++j) {
    CovarianceSpec cov;
    if (dgp.model == Model::model3) {
      cov.structure = CovarianceStructure::ar1_time;
      cov.sigma2 = ds.outcome_specs[j].family == Family::gaussian ? dgp.sigma2[j] : 1.0;
      cov.tau2 = dgp.tau2[j];
      cov.lambda = dgp.lambda;
    } else {
      const auto vc = estimate_variance_components(ds, j, fits[j]);
      cov.structure = CovarianceStructure::exchangeable;
      cov.sigma2 = std::max(vc.sigma2, 1e-8);
      cov.tau2 = vc.tau2;
    }
    solvers.emplace_back(ds.layout, build_cluster_covariance(cov, ds.layout), ds.cluster_labels);
  }
  return solvers;
}

inline ReplicateRecord run_replicate(const DgpSpec& dgp, const StudySettings& st, std::size_t index) {
  ReplicateRecord rec;
  rec.index = index;
  rec.analyses.resize(st.kinds.size() * kAllMethods.size());
  const std::uint64_t rep_seed = derive_key(st.seed, index);
  CounterRng gen(derive_key(rep_seed, StreamTag::generator), 0);
  const TrialDataset ds = generate(dgp, gen);
  const std::size_t J = ds.n_outcomes();

  SearchInputs inputs = prepare_search_inputs(ds);
  for (const auto& f : inputs.fits) rec.point_estimates.push_back(f.delta());

  std::vector<FittedMeanModel> null_fits;
  for (std::size_t j = 0; j < J; ++j) null_fits.push_back(inputs.designs[j].fit_fixed(0.0, &inputs.fits[j]));

  PermutationPlan plan;
  plan.draws = st.permutations;
  plan.seed = rep_seed;
  plan.enumerate = st.enumerate;

  for (std::size_t ki = 0; ki < st.kinds.size(); ++ki) {
    const StatisticKind kind = st.kinds[ki];
    std::vector<ClusterSolver> solvers;
    if (kind == StatisticKind::weighted) solvers = weighted_solvers(ds, dgp, inputs.fits);
    const StatisticContext ctx{kind, kind == StatisticKind::weighted ? &solvers : nullptr};
    const StatMatrix matrix = build_stat_matrix(ds, null_fits, plan, ctx);
    for (Method m : st.methods) {
      rec.analyses[SimulationReport::slot(ki, method_index(m))].p_adjusted = adjust(matrix, m).p_adjusted;
    }
    inputs.solvers = ctx.solvers;
    for (Method m : st.search_methods) {
      SearchOptions opt;
      opt.method = m;
      opt.kind = kind;
      opt.alpha = st.alpha;
      opt.steps = st.steps;
      opt.seed = rep_seed;
      const ConfidenceSet cs = rm_search(ds, inputs, opt);
      auto& slot = rec.analyses[SimulationReport::slot(ki, method_index(m))];
      slot.lower = cs.lower;
      slot.upper = cs.upper;
    }
    inputs.solvers = nullptr;
  }
  if (st.naive) {
    for (std::size_t j = 0; j < J; ++j) rec.naive.push_back(naive_inference(ds, j, st.alpha));
  }
  return rec;
}

struct Tally {
  std::size_t n = 0;
  std::size_t fwer_hits = 0;
  std::size_t covered = 0;
  std::size_t n_intervals = 0;
  std::vector<double> width_sum, width_sumsq;
};

inline MethodSummary summarize(std::string label, const Tally& t, std::size_t J) {
  MethodSummary s;
  s.label = std::move(label);
  s.fwer = proportion(t.fwer_hits, t.n);
  s.has_intervals = t.n_intervals > 0;
  if (s.has_intervals) {
    s.coverage = proportion(t.covered, t.n_intervals);
    const auto n = static_cast<double>(t.n_intervals);
    for (std::size_t j = 0; j < J; ++j) {
      const double mean = t.width_sum[j] / n;
      const double var = n > 1 ? std::max(0.0, (t.width_sumsq[j] - n * mean * mean) / (n - 1.0)) : 0.0;
      s.mean_width.push_back(mean);
      s.width_se.push_back(std::sqrt(var / n));
    }
  }
  return s;
}

inline void tally(Tally& t, const std::vector<double>& delta, double alpha, const std::vector<double>& p,
                  const std::vector<double>& lower, const std::vector<double>& upper) {
  const std::size_t J = delta.size();
  if (t.width_sum.empty()) {
    t.width_sum.assign(J, 0.0);
    t.width_sumsq.assign(J, 0.0);
  }
  if (!p.empty()) {
    ++t.n;
    bool any = false;
    for (std::size_t j = 0; j < J; ++j) {
      if (delta[j] == 0.0 && p[j] <= alpha) any = true;
    }
    if (any) ++t.fwer_hits;
  }
  if (!lower.empty()) {
    ++t.n_intervals;
    bool all = true;
    for (std::size_t j = 0; j < J; ++j) {
      if (!(lower[j] <= delta[j] && delta[j] <= upper[j])) all = false;
      const double w = upper[j] - lower[j];
      t.width_sum[j] += w;
      t.width_sumsq[j] += w * w;
    }
    if (all) ++t.covered;
  }
}

}  // namespace detail

/// Runs `settings.replicates` independent simulated trials. Replicate r uses
/// streams derived from (seed, r) only, so the report does not depend on the
/// worker count. Failed replicates are excluded and counted.
inline SimulationReport run_study(const DgpSpec& dgp, const StudySettings& settings) {
  validate_dgp(dgp);
  if (settings.replicates < 1) throw ConfigError("study: at least one replicate is required");
  if (!settings.search_methods.empty() && settings.steps < 100) {
    throw ConfigError("study: at least 100 search steps are required");
  }
  SimulationReport report;
  report.dgp = dgp;
  report.settings = settings;
  report.replicates = settings.replicates;
  report.records.resize(settings.replicates);
  parallel_for(settings.replicates, resolve_threads(settings.threads), [&](std::size_t r) {
    try {
      report.records[r] = detail::run_replicate(dgp, settings, r);
    } catch (const Error& e) {
      report.records[r] = ReplicateRecord{};
      report.records[r].index = r;
      report.records[r].failed = true;
      report.records[r].error = e.what();
    }
  });

  const std::size_t J = dgp.n_outcomes();
  std::vector<detail::Tally> tallies(settings.kinds.size() * kAllMethods.size());
  detail::Tally naive;
  for (const auto& rec : report.records) {
    if (rec.failed) {
      ++report.failures;
      if (report.failure_messages.size() < 20) {
        report.failure_messages.push_back("replicate " + std::to_string(rec.index) + ": " + rec.error);
      }
      continue;
    }
    for (std::size_t s = 0; s < tallies.size(); ++s) {
      const auto& a = rec.analyses[s];
      detail::tally(tallies[s], dgp.delta, settings.alpha, a.p_adjusted, a.lower, a.upper);
    }
    if (!rec.naive.empty()) {
      std::vector<double> p, lo, hi;
      for (const auto& n : rec.naive) {
        p.push_back(n.p_value);
        lo.push_back(n.lower);
        hi.push_back(n.upper);
      }
      detail::tally(naive, dgp.delta, settings.alpha, p, lo, hi);
    }
  }
  if (settings.naive) {
    auto s = detail::summarize("naive", naive, J);
    report.summaries.push_back(std::move(s));
  }
  for (std::size_t ki = 0; ki < settings.kinds.size(); ++ki) {
    for (std::size_t mi = 0; mi < kAllMethods.size(); ++mi) {
      const Method m = kAllMethods[mi];
      if (!detail::contains(settings.methods, m) && !detail::contains(settings.search_methods, m)) continue;
      auto s = detail::summarize(std::string(to_string(m)), tallies[SimulationReport::slot(ki, mi)], J);
      s.method = m;
      s.kind = settings.kinds[ki];
      report.summaries.push_back(std::move(s));
    }
  }
  return report;
}

/// Finds the summary for (method, kind); nullptr when absent.
inline const MethodSummary* find_summary(const SimulationReport& r, Method m, StatisticKind k = StatisticKind::unweighted) {
  for (const auto& s : r.summaries) {
    if (s.method == m && s.kind == k) return &s;
  }
  return nullptr;
}

inline const MethodSummary* find_naive(const SimulationReport& r) {
  for (const auto& s : r.summaries) {
    if (s.label == "naive") return &s;
  }
  return nullptr;
}

/// Per-replicate dump: replicate,kind,method,outcome,estimate,p_adjusted,lower,upper.
inline void write_replicates_csv(std::ostream& out, const SimulationReport& r) {
  out << "replicate,kind,method,outcome,estimate,p_adjusted,lower,upper\n";
  const auto num = [](const std::vector<double>& v, std::size_t j) {
    return j < v.size() ? detail::format_number(v[j]) : std::string{};
  };
  for (const auto& rec : r.records) {
    if (rec.failed) continue;
    for (std::size_t ki = 0; ki < r.settings.kinds.size(); ++ki) {
      for (std::size_t mi = 0; mi < kAllMethods.size(); ++mi) {
        const auto& a = rec.analyses[SimulationReport::slot(ki, mi)];
        if (a.p_adjusted.empty() && a.lower.empty()) continue;
        for (std::size_t j = 0; j < rec.point_estimates.size(); ++j) {
          out << rec.index << ',' << to_string(r.settings.kinds[ki]) << ',' << to_string(kAllMethods[mi]) << ','
              << j << ',' << detail::format_number(rec.point_estimates[j]) << ',' << num(a.p_adjusted, j) << ','
              << num(a.lower, j) << ',' << num(a.upper, j) << '\n';
        }
      }
    }
    for (std::size_t j = 0; j < rec.naive.size(); ++j) {
      out << rec.index << ",-,naive," << j << ',' << detail::format_number(rec.naive[j].estimate) << ','
          << detail::format_number(rec.naive[j].p_value) << ',' << detail::format_number(rec.naive[j].lower) << ','
          << detail::format_number(rec.naive[j].upper) << '\n';
    }
  }
}

}  // namespace crtperm
