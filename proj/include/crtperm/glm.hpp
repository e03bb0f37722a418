#pragma once

// Marginal GLM mean models fitted by IRLS, moment estimates of variance
// components, working covariance matrices and link-derivative weights.

#include <Eigen/Cholesky>
#include <Eigen/Dense>
#include <boost/math/distributions/normal.hpp>

#include <algorithm>
#include <cmath>
#include <limits>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "crtperm/core_data.hpp"
#include "crtperm/error.hpp"

namespace crtperm {

// ---------------------------------------------------------------------------
// Link and variance functions for the supported canonical pairs.

inline double inverse_link(Link link, double eta) {
  switch (link) {
    case Link::identity: return eta;
    case Link::log: return std::exp(eta);
    case Link::logit: return 1.0 / (1.0 + std::exp(-eta));
  }
  return eta;
}

inline double link_fn(Link link, double mu) {
  switch (link) {
    case Link::identity: return mu;
    case Link::log: return std::log(mu);
    case Link::logit: return std::log(mu / (1.0 - mu));
  }
  return mu;
}

/// d mu / d eta.
inline double mean_derivative(Link link, double eta) {
  switch (link) {
    case Link::identity: return 1.0;
    case Link::log: return std::exp(eta);
    case Link::logit: {
      const double p = inverse_link(Link::logit, eta);
      return p * (1.0 - p);
    }
  }
  return 1.0;
}

inline double variance_fn(Family family, double mu) {
  switch (family) {
    case Family::gaussian: return 1.0;
    case Family::poisson: return mu;
    case Family::binomial: return mu * (1.0 - mu);
  }
  return 1.0;
}

// ---------------------------------------------------------------------------

struct IrlsOptions {
  double tolerance = 1e-8;
  int max_iter = 100;
  double separation_bound = 30.0;
};

/// Marginal mean fit for one outcome. Nuisance coefficients are ordered as
/// period effects (periods 2..T) followed by covariates.
struct FittedMeanModel {
  std::size_t outcome_index = 0;
  Family family = Family::gaussian;
  Link link = Link::identity;
  double intercept = 0.0;
  std::vector<double> covariate_coefs;
  std::optional<double> treatment_effect;  // set when delta was estimated
  std::optional<double> delta_fixed;       // set when delta entered as an offset
  double naive_se = 0.0;
  double dispersion = 1.0;
  std::vector<double> linear_predictor;
  bool converged = false;
  int n_iter = 0;

  double delta() const { return treatment_effect ? *treatment_effect : delta_fixed.value_or(0.0); }
};

/// Design matrix and response for one outcome, built once and reused for
/// repeated constrained fits at different null values.
class MeanModelDesign {
 public:
  MeanModelDesign(const TrialDataset& ds, std::size_t outcome_index)
      : outcome_index_(outcome_index), spec_(ds.outcome_specs.at(outcome_index)) {
    if (outcome_index >= ds.n_outcomes()) throw ConfigError("outcome index out of range");
    const std::size_t n = ds.n_obs();
    const std::size_t T = ds.n_periods();
    const std::size_t P = ds.n_covariates();
    n_nuisance_ = 1 + (T > 1 ? T - 1 : 0) + P;
    nuisance_ = Eigen::MatrixXd::Zero(static_cast<Eigen::Index>(n), static_cast<Eigen::Index>(n_nuisance_));
    treatment_.resize(static_cast<Eigen::Index>(n));
    y_.resize(static_cast<Eigen::Index>(n));
    for (std::size_t i = 0; i < n; ++i) {
      const auto& ob = ds.observations[i];
      const auto r = static_cast<Eigen::Index>(i);
      nuisance_(r, 0) = 1.0;
      if (T > 1 && ds.period_index[i] > 0) {
        nuisance_(r, static_cast<Eigen::Index>(ds.period_index[i])) = 1.0;
      }
      for (std::size_t k = 0; k < P; ++k) {
        nuisance_(r, static_cast<Eigen::Index>(1 + (T > 1 ? T - 1 : 0) + k)) = ob.covariates[k];
      }
      treatment_(r) = ob.treatment;
      y_(r) = ob.outcomes[outcome_index];
    }
  }

  std::size_t outcome_index() const { return outcome_index_; }
  const OutcomeSpec& spec() const { return spec_; }
  const Eigen::MatrixXd& nuisance_matrix() const { return nuisance_; }
  const Eigen::VectorXd& treatment() const { return treatment_; }
  const Eigen::VectorXd& response() const { return y_; }

  /// Fit with delta free: columns [1, D, periods, covariates].
  FittedMeanModel fit(const IrlsOptions& opt = {}) const {
    const Eigen::Index n = nuisance_.rows();
    Eigen::MatrixXd X(n, nuisance_.cols() + 1);
    X.col(0) = nuisance_.col(0);
    X.col(1) = treatment_;
    X.rightCols(nuisance_.cols() - 1) = nuisance_.rightCols(nuisance_.cols() - 1);
    const Eigen::VectorXd offset = Eigen::VectorXd::Zero(n);
    auto raw = run_irls(X, offset, nullptr, opt);
    FittedMeanModel m = package(raw, /*treatment_col=*/1);
    m.treatment_effect = raw.beta(1);
    const double var = raw.info_inverse(1, 1) * m.dispersion;
    m.naive_se = std::sqrt(std::max(var, 0.0));
    return m;
  }

  /// Fit with delta fixed at `delta_star` as an offset. `warm_start`, when
  /// given, supplies starting nuisance coefficients (from a nearby fit).
  FittedMeanModel fit_fixed(double delta_star, const FittedMeanModel* warm_start = nullptr,
                            const IrlsOptions& opt = {}) const {
    const Eigen::VectorXd offset = delta_star * treatment_;
    Eigen::VectorXd start;
    const Eigen::VectorXd* start_ptr = nullptr;
    if (warm_start != nullptr) {
      start.resize(nuisance_.cols());
      start(0) = warm_start->intercept;
      for (std::size_t k = 0; k < warm_start->covariate_coefs.size(); ++k) {
        start(static_cast<Eigen::Index>(k + 1)) = warm_start->covariate_coefs[k];
      }
      start_ptr = &start;
    }
    auto raw = run_irls(nuisance_, offset, start_ptr, opt);
    FittedMeanModel m = package(raw, /*treatment_col=*/-1);
    m.delta_fixed = delta_star;
    return m;
  }

 private:
  struct RawFit {
    Eigen::VectorXd beta;
    Eigen::VectorXd eta;
    Eigen::MatrixXd info_inverse;
    double dispersion = 1.0;
    bool converged = false;
    int n_iter = 0;
  };

  RawFit run_irls(const Eigen::MatrixXd& X, const Eigen::VectorXd& offset, const Eigen::VectorXd* start,
                  const IrlsOptions& opt) const {
    const Eigen::Index n = X.rows();
    const Eigen::Index p = X.cols();
    const Family family = spec_.family;
    const Link link = spec_.link;
    Eigen::VectorXd eta(n);
    if (start != nullptr) {
      eta = X * (*start) + offset;
    } else {
      for (Eigen::Index i = 0; i < n; ++i) {
        double mu0 = y_(i);
        if (family == Family::poisson) mu0 = y_(i) + 0.1;
        if (family == Family::binomial) mu0 = (y_(i) + 0.5) / 2.0;
        eta(i) = link_fn(link, mu0);
      }
    }
    RawFit out;
    Eigen::VectorXd beta_old = start != nullptr ? *start : Eigen::VectorXd::Constant(p, std::numeric_limits<double>::quiet_NaN());
    Eigen::VectorXd w(n), z(n);
    Eigen::LDLT<Eigen::MatrixXd> ldlt;
    for (int iter = 1; iter <= opt.max_iter; ++iter) {
      for (Eigen::Index i = 0; i < n; ++i) {
        const double mu = inverse_link(link, eta(i));
        const double dmu = mean_derivative(link, eta(i));
        const double var = variance_fn(family, mu);
        w(i) = dmu * dmu / var;
        z(i) = eta(i) - offset(i) + (y_(i) - mu) / dmu;
      }
      const Eigen::MatrixXd XtW = X.transpose() * w.asDiagonal();
      const Eigen::MatrixXd info = XtW * X;
      ldlt.compute(info);
      if (ldlt.info() != Eigen::Success || !ldlt.isPositive() ||
          ldlt.vectorD().minCoeff() <= 1e-12 * std::max(1.0, ldlt.vectorD().maxCoeff())) {
        throw NumericalError("glm_engine", "outcome '" + spec_.name + "': singular weighted information matrix");
      }
      const Eigen::VectorXd beta = ldlt.solve(XtW * z);
      if (!beta.allFinite()) {
        throw NumericalError("glm_engine", "outcome '" + spec_.name + "': non-finite IRLS iterate");
      }
      if (family != Family::gaussian && beta.cwiseAbs().maxCoeff() > opt.separation_bound) {
        throw NumericalError("glm_engine", "outcome '" + spec_.name + "': separation (diverging coefficients)");
      }
      eta = X * beta + offset;
      out.n_iter = iter;
      const bool exact_step = family == Family::gaussian;
      const double change = (beta - beta_old).cwiseAbs().maxCoeff();
      beta_old = beta;
      if (exact_step || change < opt.tolerance) {
        out.converged = true;
        break;
      }
    }
    if (!out.converged) {
      throw NumericalError("glm_engine", "outcome '" + spec_.name + "': IRLS did not converge after " +
                                             std::to_string(opt.max_iter) + " iterations (last max coefficient " +
                                             std::to_string(beta_old.cwiseAbs().maxCoeff()) + ")");
    }
    out.beta = beta_old;
    out.eta = eta;
    // Information at the final iterate, for model-based standard errors.
    for (Eigen::Index i = 0; i < n; ++i) {
      const double mu = inverse_link(link, eta(i));
      const double dmu = mean_derivative(link, eta(i));
      w(i) = dmu * dmu / variance_fn(family, mu);
    }
    const Eigen::MatrixXd info = X.transpose() * w.asDiagonal() * X;
    out.info_inverse = info.ldlt().solve(Eigen::MatrixXd::Identity(p, p));
    if (family == Family::gaussian) {
      const double rss = (y_ - eta).squaredNorm();
      out.dispersion = n > p ? rss / static_cast<double>(n - p) : 0.0;
    }
    return out;
  }

  FittedMeanModel package(const RawFit& raw, int treatment_col) const {
    FittedMeanModel m;
    m.outcome_index = outcome_index_;
    m.family = spec_.family;
    m.link = spec_.link;
    m.intercept = raw.beta(0);
    for (Eigen::Index k = 1; k < raw.beta.size(); ++k) {
      if (k == treatment_col) continue;
      m.covariate_coefs.push_back(raw.beta(k));
    }
    m.linear_predictor.assign(raw.eta.data(), raw.eta.data() + raw.eta.size());
    m.dispersion = raw.dispersion;
    m.converged = raw.converged;
    m.n_iter = raw.n_iter;
    return m;
  }

  std::size_t outcome_index_;
  OutcomeSpec spec_;
  std::size_t n_nuisance_ = 0;
  Eigen::MatrixXd nuisance_;
  Eigen::VectorXd treatment_;
  Eigen::VectorXd y_;
};

/// Fits outcome `outcome_index`; with `delta_fixed` the treatment term enters
/// as the offset delta_fixed * D and only nuisance parameters are estimated.
inline FittedMeanModel irls_fit(const TrialDataset& ds, std::size_t outcome_index,
                                std::optional<double> delta_fixed = std::nullopt, const IrlsOptions& opt = {}) {
  const MeanModelDesign design(ds, outcome_index);
  return delta_fixed ? design.fit_fixed(*delta_fixed, nullptr, opt) : design.fit(opt);
}

/// Recomputes the linear predictor of `fit` from its coefficients.
inline std::vector<double> recompute_linear_predictor(const TrialDataset& ds, const FittedMeanModel& fit) {
  const std::size_t T = ds.n_periods();
  std::vector<double> eta(ds.n_obs());
  for (std::size_t i = 0; i < ds.n_obs(); ++i) {
    const auto& ob = ds.observations[i];
    double e = fit.intercept + fit.delta() * ob.treatment;
    if (T > 1 && ds.period_index[i] > 0) e += fit.covariate_coefs[ds.period_index[i] - 1];
    const std::size_t base = T > 1 ? T - 1 : 0;
    for (std::size_t k = 0; k < ob.covariates.size(); ++k) e += fit.covariate_coefs[base + k] * ob.covariates[k];
    eta[i] = e;
  }
  return eta;
}

// ---------------------------------------------------------------------------
// Variance components

struct VarianceComponents {
  double sigma2 = 0.0;  // within-cluster mean square of Pearson residuals
  double tau2 = 0.0;    // between-cluster component, truncated at zero
  bool single_observation_clusters = false;
};

/// Moment estimates from Pearson residuals e of `fitted`:
///   tau2   = sum_c sum_{i != i'} e_i e_i' / sum_c n_c (n_c - 1), truncated at 0
///   sigma2 = sum_c sum_i (e_i - ebar_c)^2 / (N - C)
/// When every cluster has one observation, tau2 is 0 and the flag is set.
inline VarianceComponents estimate_variance_components(const TrialDataset& ds, std::size_t outcome_index,
                                                       const FittedMeanModel& fitted) {
  const std::size_t C = ds.n_clusters();
  if (C < 2) throw DataError("variance components need at least 2 clusters");
  if (!fitted.converged) throw NumericalError("glm_engine", "variance components need a converged fit");
  const auto& spec = ds.outcome_specs.at(outcome_index);
  std::vector<double> e(ds.n_obs());
  for (std::size_t i = 0; i < ds.n_obs(); ++i) {
    const double mu = inverse_link(spec.link, fitted.linear_predictor[i]);
    const double v = variance_fn(spec.family, mu);
    e[i] = (ds.outcome(i, outcome_index) - mu) / std::sqrt(v);
  }
  double cross = 0.0, pairs = 0.0, ssw = 0.0;
  std::size_t N = 0;
  for (std::size_t c = 0; c < C; ++c) {
    const auto rows = ds.layout.cluster_rows(c);
    double sum = 0.0, sumsq = 0.0;
    for (auto i : rows) {
      sum += e[i];
      sumsq += e[i] * e[i];
    }
    const auto n = static_cast<double>(rows.size());
    cross += sum * sum - sumsq;
    pairs += n * (n - 1.0);
    ssw += sumsq - sum * sum / n;
    N += rows.size();
  }
  VarianceComponents vc;
  if (pairs == 0.0) {
    double ss = 0.0;
    for (double x : e) ss += x * x;
    vc.sigma2 = ss / static_cast<double>(N);
    vc.tau2 = 0.0;
    vc.single_observation_clusters = true;
    return vc;
  }
  vc.sigma2 = std::max(ssw, 0.0) / static_cast<double>(N - C);
  vc.tau2 = std::max(0.0, cross / pairs);
  return vc;
}

// ---------------------------------------------------------------------------
// Working covariance

enum class CovarianceStructure { independent, exchangeable, ar1_time };

inline std::string_view to_string(CovarianceStructure s) {
  switch (s) {
    case CovarianceStructure::independent: return "independent";
    case CovarianceStructure::exchangeable: return "exchangeable";
    case CovarianceStructure::ar1_time: return "ar1_time";
  }
  return "?";
}

inline CovarianceStructure parse_covariance_structure(std::string_view s) {
  if (s == "independent") return CovarianceStructure::independent;
  if (s == "exchangeable") return CovarianceStructure::exchangeable;
  if (s == "ar1_time") return CovarianceStructure::ar1_time;
  throw ConfigError("unknown covariance structure: " + std::string(s));
}

/// Within-cluster working covariance.
///   exchangeable: Cov(a, b) = tau2 + sigma2 [a == b]
///   ar1_time:     Cov(a, b) = tau2 lambda^|t_a - t_b| + sigma2 [a == b]
///   independent:  sigma2 I
struct CovarianceSpec {
  CovarianceStructure structure = CovarianceStructure::exchangeable;
  double sigma2 = 1.0;
  double tau2 = 0.0;
  double lambda = 0.0;
};

inline void check_covariance_spec(const CovarianceSpec& spec) {
  if (!(spec.sigma2 > 0.0) || !std::isfinite(spec.sigma2)) {
    throw ConfigError("covariance sigma2 must be positive");
  }
  if (!(spec.tau2 >= 0.0) || !std::isfinite(spec.tau2)) {
    throw ConfigError("covariance tau2 must be non-negative");
  }
  if (spec.structure == CovarianceStructure::ar1_time && !(spec.lambda >= 0.0 && spec.lambda < 1.0)) {
    throw ConfigError("covariance lambda must lie in [0, 1)");
  }
}

/// Per-cluster covariance matrices over that cluster's observations in
/// period order (the order of ClusterLayout::cluster_rows).
inline std::vector<Eigen::MatrixXd> build_cluster_covariance(const CovarianceSpec& spec, const ClusterLayout& layout) {
  check_covariance_spec(spec);
  std::vector<Eigen::MatrixXd> out;
  out.reserve(layout.n_clusters);
  for (std::size_t c = 0; c < layout.n_clusters; ++c) {
    std::vector<std::size_t> period_of;
    for (std::size_t t = 0; t < layout.n_periods; ++t) period_of.insert(period_of.end(), layout.size(c, t), t);
    const auto n = static_cast<Eigen::Index>(period_of.size());
    Eigen::MatrixXd V(n, n);
    for (Eigen::Index a = 0; a < n; ++a) {
      for (Eigen::Index b = 0; b < n; ++b) {
        double v = 0.0;
        switch (spec.structure) {
          case CovarianceStructure::independent: break;
          case CovarianceStructure::exchangeable: v = spec.tau2; break;
          case CovarianceStructure::ar1_time: {
            const auto lag = static_cast<int>(period_of[static_cast<std::size_t>(a)]) -
                             static_cast<int>(period_of[static_cast<std::size_t>(b)]);
            v = spec.tau2 * std::pow(spec.lambda, std::abs(lag));
            break;
          }
        }
        if (a == b) v += spec.sigma2;
        V(a, b) = v;
      }
    }
    out.push_back(std::move(V));
  }
  return out;
}

/// Elementwise (d mu / d eta)^-1 at the fitted linear predictor.
inline std::vector<double> g_weights(std::span<const double> linear_predictor, Link link) {
  std::vector<double> g(linear_predictor.size());
  std::transform(linear_predictor.begin(), linear_predictor.end(), g.begin(),
                 [link](double eta) { return 1.0 / mean_derivative(link, eta); });
  return g;
}

inline std::vector<double> g_weights(const FittedMeanModel& fitted, Link link) {
  return g_weights(fitted.linear_predictor, link);
}

// ---------------------------------------------------------------------------
// Naive model-based comparator

inline double normal_quantile(double p) {
  return boost::math::quantile(boost::math::normal_distribution<double>(), p);
}

inline double normal_upper_tail(double z) { return 0.5 * std::erfc(z / std::sqrt(2.0)); }

struct NaiveInference {
  double estimate = 0.0;
  double se = 0.0;
  double p_value = 1.0;
  double lower = 0.0;
  double upper = 0.0;
};

/// Wald inference without small-sample or multiplicity correction:
/// feasible GLS under an exchangeable working covariance for gaussian
/// outcomes, IRLS model-based standard errors otherwise.
inline NaiveInference naive_inference(const TrialDataset& ds, std::size_t outcome_index, double alpha = 0.05) {
  const MeanModelDesign design(ds, outcome_index);
  const FittedMeanModel fit = design.fit();
  NaiveInference out;
  if (design.spec().family == Family::gaussian) {
    const auto vc = estimate_variance_components(ds, outcome_index, fit);
    const double sigma2 = std::max(vc.sigma2, 1e-12);
    const Eigen::MatrixXd& N = design.nuisance_matrix();
    const Eigen::Index p = N.cols() + 1;
    Eigen::MatrixXd A = Eigen::MatrixXd::Zero(p, p);
    Eigen::VectorXd b = Eigen::VectorXd::Zero(p);
    for (std::size_t c = 0; c < ds.n_clusters(); ++c) {
      const auto rows = ds.layout.cluster_rows(c);
      const auto n = static_cast<Eigen::Index>(rows.size());
      Eigen::MatrixXd Xc(n, p);
      Eigen::VectorXd yc(n);
      for (Eigen::Index r = 0; r < n; ++r) {
        const auto i = static_cast<Eigen::Index>(rows[static_cast<std::size_t>(r)]);
        Xc(r, 0) = N(i, 0);
        Xc(r, 1) = design.treatment()(i);
        for (Eigen::Index k = 1; k < N.cols(); ++k) Xc(r, k + 1) = N(i, k);
        yc(r) = design.response()(i);
      }
      // V^-1 = (I - tau2 / (sigma2 + n tau2) 11') / sigma2
      const double shrink = vc.tau2 / (sigma2 + static_cast<double>(n) * vc.tau2);
      const Eigen::RowVectorXd colsum = Xc.colwise().sum();
      A += (Xc.transpose() * Xc - shrink * colsum.transpose() * colsum) / sigma2;
      b += (Xc.transpose() * yc - shrink * colsum.transpose() * yc.sum()) / sigma2;
    }
    const Eigen::LDLT<Eigen::MatrixXd> ldlt(A);
    const Eigen::VectorXd beta = ldlt.solve(b);
    const Eigen::MatrixXd cov = ldlt.solve(Eigen::MatrixXd::Identity(p, p));
    out.estimate = beta(1);
    out.se = std::sqrt(std::max(cov(1, 1), 0.0));
  } else {
    out.estimate = fit.delta();
    out.se = fit.naive_se;
  }
  const double z = normal_quantile(1.0 - alpha / 2.0);
  out.lower = out.estimate - z * out.se;
  out.upper = out.estimate + z * out.se;
  out.p_value = out.se > 0.0 ? std::min(1.0, 2.0 * normal_upper_tail(std::abs(out.estimate / out.se))) : 1.0;
  return out;
}

}  // namespace crtperm
