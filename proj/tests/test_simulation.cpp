#include <gtest/gtest.h>

#include <cmath>
#include <sstream>

#include "helpers.hpp"

using namespace crtperm;

namespace {

struct Moments {
  double mean = 0.0;
  double var = 0.0;
};

Moments moments_of(const std::vector<double>& v) {
  double s = 0.0, ss = 0.0;
  for (double x : v) s += x;
  const double m = s / static_cast<double>(v.size());
  for (double x : v) ss += (x - m) * (x - m);
  return {m, ss / static_cast<double>(v.size() - 1)};
}

double correlation(const std::vector<double>& a, const std::vector<double>& b) {
  const auto ma = moments_of(a), mb = moments_of(b);
  double c = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) c += (a[i] - ma.mean) * (b[i] - mb.mean);
  return c / static_cast<double>(a.size() - 1) / std::sqrt(ma.var * mb.var);
}

std::vector<double> column(const TrialDataset& ds, std::size_t j, int period = 0) {
  std::vector<double> out;
  for (const auto& ob : ds.observations) {
    if (period == 0 || ob.period == period) out.push_back(ob.outcomes[j]);
  }
  return out;
}

/// One-way ANOVA intraclass correlation for a balanced single-period design.
double anova_icc(const TrialDataset& ds, std::size_t j) {
  const std::size_t C = ds.n_clusters();
  std::vector<double> sum(C, 0.0);
  std::vector<std::size_t> n(C, 0);
  for (const auto& ob : ds.observations) {
    sum[ob.cluster] += ob.outcomes[j];
    ++n[ob.cluster];
  }
  double grand = 0.0;
  for (std::size_t c = 0; c < C; ++c) grand += sum[c];
  grand /= static_cast<double>(ds.n_obs());
  double ssb = 0.0, ssw = 0.0;
  for (std::size_t c = 0; c < C; ++c) {
    const double m = sum[c] / static_cast<double>(n[c]);
    ssb += static_cast<double>(n[c]) * (m - grand) * (m - grand);
  }
  for (const auto& ob : ds.observations) {
    const double m = sum[ob.cluster] / static_cast<double>(n[ob.cluster]);
    ssw += (ob.outcomes[j] - m) * (ob.outcomes[j] - m);
  }
  const double msb = ssb / static_cast<double>(C - 1);
  const double msw = ssw / static_cast<double>(ds.n_obs() - C);
  const double k = static_cast<double>(n[0]);
  const double between = (msb - msw) / k;
  return between / (between + msw);
}

}  // namespace

TEST(Mvn, ZeroCovarianceReturnsMean) {
  CounterRng rng(1, 0);
  Eigen::VectorXd mean(3);
  mean << 1.5, -2.0, 0.25;
  EXPECT_EQ(mvn_sample(mean, Eigen::MatrixXd::Zero(3, 3), rng), mean);
}

TEST(Mvn, IdentityCovariance) {
  CounterRng rng(2, 0);
  const MvnSampler sampler(Eigen::MatrixXd::Identity(3, 3));
  Eigen::MatrixXd acc = Eigen::MatrixXd::Zero(3, 3);
  Eigen::VectorXd mean = Eigen::VectorXd::Zero(3);
  constexpr int n = 100000;
  for (int i = 0; i < n; ++i) {
    const auto x = sampler.sample(Eigen::VectorXd::Zero(3), rng);
    acc += x * x.transpose();
    mean += x;
  }
  mean /= n;
  const Eigen::MatrixXd cov = acc / n - mean * mean.transpose();
  EXPECT_LT((cov - Eigen::MatrixXd::Identity(3, 3)).cwiseAbs().maxCoeff(), 0.05);
}

TEST(Mvn, CorrelatedPair) {
  CounterRng rng(3, 0);
  const MvnSampler sampler(correlated_pair_covariance(1.0, 1.0, 0.8));
  std::vector<double> a, b;
  for (int i = 0; i < 100000; ++i) {
    const auto x = sampler.sample(Eigen::VectorXd::Zero(2), rng);
    a.push_back(x(0));
    b.push_back(x(1));
  }
  EXPECT_NEAR(correlation(a, b), 0.8, 0.02);
}

TEST(Mvn, RejectsIndefinite) {
  Eigen::MatrixXd m(2, 2);
  m << 1.0, 2.0, 2.0, 1.0;
  try {
    MvnSampler sampler(m);
    FAIL();
  } catch (const DataError& e) {
    EXPECT_NE(std::string(e.what()).find("covariance not PSD"), std::string::npos);
  }
  EXPECT_NO_THROW(MvnSampler(correlated_pair_covariance(1.0, 1.0, 1.0)));
}

TEST(Model1, VarianceWithoutClusterEffects) {
  auto s = default_dgp(Model::model1);
  s.tau2 = {0.0, 0.0};
  s.sigma2 = {1.0, 2.0};
  s.clusters_per_arm = 2500;
  CounterRng rng(4, 0);
  const auto ds = gen_model1(s, rng);
  ASSERT_EQ(ds.n_obs(), 100000u);
  EXPECT_NEAR(moments_of(column(ds, 0)).var, 1.0, 0.02);
  EXPECT_NEAR(moments_of(column(ds, 1)).var, 2.0, 0.04);
}

TEST(Model1, IntraclassCorrelation) {
  auto s = default_dgp(Model::model1);
  s.clusters_per_arm = 250;
  CounterRng rng(5, 0);
  const auto ds = gen_model1(s, rng);
  ASSERT_EQ(ds.n_clusters(), 500u);
  EXPECT_NEAR(anova_icc(ds, 0), 0.05 / 1.05, 0.01);
  EXPECT_NEAR(anova_icc(ds, 1), 0.05 / 1.05, 0.01);
}

TEST(Model1, CrossOutcomeCorrelation) {
  auto s = default_dgp(Model::model1);
  s.rho = s.pi = 0.8;
  s.clusters_per_arm = 2500;
  CounterRng rng(6, 0);
  const auto ds = gen_model1(s, rng);
  EXPECT_NEAR(correlation(column(ds, 0), column(ds, 1)), 0.8, 0.02);
}

TEST(Model1, LayoutAndTreatment) {
  const auto s = default_dgp(Model::model1);
  CounterRng rng(7, 0);
  const auto ds = gen_model1(s, rng);
  EXPECT_EQ(ds.n_clusters(), 14u);
  EXPECT_EQ(ds.n_obs(), 280u);
  EXPECT_EQ(ds.design.n_treated, 7u);
  EXPECT_EQ(ds.cluster_labels.front(), "c1");
}

TEST(Model2, PoissonMean) {
  auto s = default_dgp(Model::model2);
  s.tau2 = {0.0, 0.0};
  s.clusters_per_arm = 2500;
  CounterRng rng(8, 0);
  const auto ds = gen_model2(s, rng);
  EXPECT_NEAR(moments_of(column(ds, 0)).mean, std::exp(1.0), 0.01 * std::exp(1.0));
  EXPECT_NEAR(moments_of(column(ds, 1)).var, 1.0, 0.02);
  EXPECT_EQ(ds.outcome_specs[0].family, Family::poisson);
}

TEST(Model2, LognormalMixing) {
  auto s = default_dgp(Model::model2);
  s.clusters_per_arm = 2500;
  CounterRng rng(9, 0);
  const auto ds = gen_model2(s, rng);
  const double expected = std::exp(1.0 + 0.05 / 2);
  EXPECT_NEAR(moments_of(column(ds, 0)).mean, expected, 0.01 * expected);
}

TEST(Model3, EffectCovarianceStructure) {
  const auto s = default_dgp(Model::model3);
  const MvnSampler sampler(model3_effect_covariance(s));
  ASSERT_EQ(sampler.dim(), 6);
  CounterRng rng(10, 0);
  std::vector<std::vector<double>> draws(6);
  for (int i = 0; i < 10000; ++i) {
    const auto x = sampler.sample(Eigen::VectorXd::Zero(6), rng);
    for (int k = 0; k < 6; ++k) draws[k].push_back(x(k));
  }
  // ordered [outcome][period]
  for (int l = 0; l < 3; ++l) EXPECT_NEAR(correlation(draws[2 * l], draws[2 * l + 1]), 0.7, 0.02);
  EXPECT_NEAR(correlation(draws[0], draws[2]), 0.0, 0.02);
  EXPECT_NEAR(correlation(draws[1], draws[4]), 0.0, 0.02);
  EXPECT_NEAR(moments_of(draws[3]).var, 0.05, 0.005);
}

TEST(Model3, BernoulliMeanSecondPeriod) {
  auto s = default_dgp(Model::model3);
  s.clusters_per_arm = 500;
  CounterRng rng(11, 0);
  const auto ds = gen_model3(s, rng);
  EXPECT_EQ(ds.design.scheme, DesignScheme::parallel_with_baseline);
  EXPECT_EQ(ds.n_obs(), 1000u * 2u * 20u);
  const double m = moments_of(column(ds, 2, 2)).mean;
  EXPECT_GE(m, 0.47);
  EXPECT_LE(m, 0.53);
}

TEST(Dgp, Validation) {
  auto s = default_dgp(Model::model1);
  s.delta = {0.0};
  EXPECT_THROW(validate_dgp(s), ConfigError);
  s = default_dgp(Model::model1);
  s.rho = 1.5;
  EXPECT_THROW(validate_dgp(s), ConfigError);
  s = default_dgp(Model::model3);
  s.period_effect.clear();
  EXPECT_THROW(validate_dgp(s), ConfigError);
  EXPECT_EQ(parse_model("model2"), Model::model2);
  EXPECT_THROW(parse_model("model4"), ConfigError);
}

TEST(RunStudy, SingleReplicate) {
  StudySettings st;
  st.replicates = 1;
  st.permutations = 100;
  st.steps = 200;
  const auto r = run_study(default_dgp(Model::model1), st);
  EXPECT_EQ(r.replicates, 1u);
  EXPECT_EQ(r.failures, 0u);
  for (const auto& s : r.summaries) {
    EXPECT_TRUE(s.fwer.value == 0.0 || s.fwer.value == 1.0) << s.label;
    EXPECT_EQ(s.fwer.se, 0.0);
  }
  ASSERT_NE(find_summary(r, Method::romano_wolf), nullptr);
  ASSERT_NE(find_naive(r), nullptr);
  EXPECT_EQ(r.summaries.front().label, "naive");
}

TEST(RunStudy, ThreadCountDoesNotChangeReport) {
  StudySettings st;
  st.replicates = 12;
  st.permutations = 100;
  st.steps = 200;
  st.seed = 77;
  auto a_settings = st, b_settings = st;
  a_settings.threads = 1;
  b_settings.threads = 3;
  const auto dgp = default_dgp(Model::model2);
  const auto a = run_study(dgp, a_settings);
  const auto b = run_study(dgp, b_settings);
  std::ostringstream ca, cb;
  write_replicates_csv(ca, a);
  write_replicates_csv(cb, b);
  EXPECT_EQ(ca.str(), cb.str());
  ASSERT_EQ(a.summaries.size(), b.summaries.size());
  for (std::size_t i = 0; i < a.summaries.size(); ++i) {
    EXPECT_EQ(a.summaries[i].fwer.value, b.summaries[i].fwer.value);
    EXPECT_EQ(a.summaries[i].mean_width, b.summaries[i].mean_width);
  }
}

TEST(RunStudy, WeightedModel3Runs) {
  StudySettings st;
  st.replicates = 3;
  st.permutations = 50;
  st.steps = 100;
  st.kinds = {StatisticKind::unweighted, StatisticKind::weighted};
  st.search_methods = {Method::romano_wolf};
  const auto r = run_study(default_dgp(Model::model3), st);
  EXPECT_EQ(r.failures, 0u);
  ASSERT_NE(find_summary(r, Method::romano_wolf, StatisticKind::weighted), nullptr);
  EXPECT_TRUE(find_summary(r, Method::romano_wolf, StatisticKind::weighted)->has_intervals);
  EXPECT_FALSE(find_summary(r, Method::holm, StatisticKind::weighted)->has_intervals);
}

TEST(RunStudy, CoverageFwerDuality) {
  StudySettings st;
  st.replicates = 100;
  st.permutations = 1000;
  st.steps = 1000;
  st.seed = 2024;
  st.methods = {Method::none};
  st.search_methods = {Method::none};
  st.naive = false;
  auto dgp = default_dgp(Model::model1);
  dgp.delta = {0.0, 0.6};
  const auto r = run_study(dgp, st);
  ASSERT_EQ(r.failures, 0u);
  std::size_t eligible = 0, agree = 0;
  const auto slot = SimulationReport::slot(0, 0);
  for (const auto& rec : r.records) {
    const auto& a = rec.analyses[slot];
    for (std::size_t j = 0; j < 2; ++j) {
      if (std::abs(a.p_adjusted[j] - st.alpha) <= 0.02) continue;
      ++eligible;
      const bool rejected = a.p_adjusted[j] <= st.alpha;
      const bool excludes_zero = a.lower[j] > 0.0 || a.upper[j] < 0.0;
      agree += rejected == excludes_zero ? 1 : 0;
    }
  }
  ASSERT_GT(eligible, 100u);
  EXPECT_GE(static_cast<double>(agree) / static_cast<double>(eligible), 0.95);
}

TEST(RunStudy, ReplicateCsvHeader) {
  StudySettings st;
  st.replicates = 1;
  st.permutations = 20;
  st.search_methods = {};
  st.naive = false;
  const auto r = run_study(default_dgp(Model::model1), st);
  std::ostringstream out;
  write_replicates_csv(out, r);
  std::istringstream in(out.str());
  std::string header;
  std::getline(in, header);
  EXPECT_EQ(header, "replicate,kind,method,outcome,estimate,p_adjusted,lower,upper");
  std::size_t lines = 0;
  for (std::string line; std::getline(in, line);) ++lines;
  EXPECT_EQ(lines, 4u * 2u);
  st.search_methods = {Method::none};
  st.steps = 50;
  EXPECT_THROW(run_study(default_dgp(Model::model1), st), ConfigError);
}
