#include <gtest/gtest.h>

#include <sstream>
#include <string>

#include "helpers.hpp"

using namespace crtperm;
using testing_support::gaussian;

namespace {

ColumnMapping one_gaussian(std::string time = "") {
  ColumnMapping m;
  m.time = std::move(time);
  m.outcomes = {gaussian("y")};
  return m;
}

TrialDataset parse(const std::string& csv, const ColumnMapping& m) {
  std::istringstream in(csv);
  return read_dataset(in, m);
}

template <class E>
std::string error_of(const std::string& csv, const ColumnMapping& m) {
  try {
    parse(csv, m);
  } catch (const E& e) {
    return e.what();
  }
  return "<no error>";
}

std::string contains(const std::string& haystack, const std::string& needle) {
  return haystack.find(needle) != std::string::npos ? needle : haystack;
}

}  // namespace

TEST(LoadDataset, MinimalInput) {
  const auto ds = parse("cluster,treatment,y\nA,1,0.5\nA,1,1.5\nB,0,2\nB,0,-1\n", one_gaussian());
  EXPECT_EQ(ds.n_clusters(), 2u);
  EXPECT_EQ(ds.n_periods(), 1u);
  EXPECT_EQ(ds.n_outcomes(), 1u);
  EXPECT_EQ(ds.n_obs(), 4u);
  EXPECT_EQ(ds.design.scheme, DesignScheme::parallel);
  EXPECT_EQ(ds.cluster_labels, (std::vector<std::string>{"A", "B"}));
}

TEST(LoadDataset, FirstAppearanceOrder) {
  const auto ds = parse("cluster,treatment,y\nzeta,0,1\nalpha,1,2\nzeta,0,3\nalpha,1,4\n", one_gaussian());
  EXPECT_EQ(ds.cluster_labels, (std::vector<std::string>{"zeta", "alpha"}));
  EXPECT_EQ(ds.observations[1].cluster, 1u);
  EXPECT_EQ(ds.observations[2].cluster, 0u);
}

TEST(LoadDataset, ColumnsInAnyOrderWithQuotes) {
  ColumnMapping m = one_gaussian("period");
  m.covariates = {"age"};
  const auto ds = parse(
      "y,\"age\",period,cluster,treatment\n1,30,1,\"c,1\",0\n2,31,2,\"c,1\",1\n3,40,1,c2,0\n4,41,2,c2,0\n", m);
  EXPECT_EQ(ds.cluster_labels[0], "c,1");
  EXPECT_EQ(ds.n_periods(), 2u);
  EXPECT_EQ(ds.design.scheme, DesignScheme::parallel_with_baseline);
  EXPECT_DOUBLE_EQ(ds.observations[3].covariates[0], 41.0);
}

TEST(LoadDataset, TreatmentVariesWithinClusterPeriod) {
  const auto msg = error_of<DataError>("cluster,treatment,y\nA,0,1\nA,1,2\nB,0,3\nB,0,4\n", one_gaussian());
  EXPECT_EQ(contains(msg, "treatment varies within cluster-period"), "treatment varies within cluster-period");
}

TEST(LoadDataset, BinomialDomainNamesRowAndColumn) {
  ColumnMapping m;
  m.outcomes = {{"smoke", Family::binomial, Link::logit}};
  const auto msg = error_of<DataError>("cluster,treatment,smoke\nA,1,0\nA,1,2\nB,0,1\nB,0,0\n", m);
  EXPECT_EQ(contains(msg, "row 2"), "row 2");  // data rows counted from 1
  EXPECT_EQ(contains(msg, "smoke"), "smoke");
}

TEST(LoadDataset, PoissonDomain) {
  ColumnMapping m;
  m.outcomes = {{"n", Family::poisson, Link::log}};
  EXPECT_THROW(parse("cluster,treatment,n\nA,1,1.5\nB,0,1\n", m), DataError);
  EXPECT_THROW(parse("cluster,treatment,n\nA,1,-1\nB,0,1\n", m), DataError);
}

TEST(LoadDataset, Errors) {
  EXPECT_EQ(contains(error_of<DataError>("cluster,y\nA,1\n", one_gaussian()), "missing column: treatment"),
            "missing column: treatment");
  EXPECT_EQ(contains(error_of<DataError>("", one_gaussian()), "empty file"), "empty file");
  EXPECT_EQ(contains(error_of<DataError>("cluster,treatment,y\nA,1,\nB,0,1\n", one_gaussian()), "missing value"),
            "missing value");
  EXPECT_THROW(parse("cluster,treatment,y\nA,2,1\nB,0,1\n", one_gaussian()), DataError);
  EXPECT_THROW(parse("cluster,treatment,y\nA,1,abc\nB,0,1\n", one_gaussian()), DataError);
  EXPECT_THROW(parse("cluster,treatment,y\nA,1,1,4\nB,0,1\n", one_gaussian()), DataError);
  ColumnMapping none;
  EXPECT_EQ(contains(error_of<ConfigError>("cluster,treatment,y\nA,1,1\n", none), "missing field: outcomes"),
            "missing field: outcomes");
}

TEST(LoadDataset, UnsupportedFamilyLink) {
  ColumnMapping m;
  m.outcomes = {{"y", Family::poisson, Link::identity}};
  EXPECT_THROW(parse("cluster,treatment,y\nA,1,1\nB,0,1\n", m), ConfigError);
}

TEST(LoadDataset, MissingPeriodForCluster) {
  EXPECT_THROW(parse("cluster,period,treatment,y\nA,1,0,1\nA,2,1,1\nB,1,0,1\n", one_gaussian("period")), DataError);
}

TEST(ValidateDesign, ParallelSevenPerArm) {
  std::vector<testing_support::Row> rows;
  for (std::size_t c = 0; c < 14; ++c) rows.push_back({c, 1, c < 7 ? 1 : 0, {0.0}});
  const auto ds = testing_support::make_dataset(14, {gaussian()}, rows);
  EXPECT_EQ(ds.design.scheme, DesignScheme::parallel);
  EXPECT_EQ(ds.design.n_treated, 7u);
  EXPECT_EQ(ds.design.n_control, 7u);
}

TEST(ValidateDesign, ParallelWithBaseline) {
  std::vector<testing_support::Row> rows;
  for (std::size_t c = 0; c < 14; ++c) {
    rows.push_back({c, 1, 0, {0.0}});
    rows.push_back({c, 2, c % 2 == 0 ? 1 : 0, {0.0}});
  }
  const auto ds = testing_support::make_dataset(14, {gaussian()}, rows);
  EXPECT_EQ(ds.design.scheme, DesignScheme::parallel_with_baseline);
  EXPECT_EQ(ds.design.n_periods, 2u);
  EXPECT_EQ(ds.design.n_treated, 7u);
  EXPECT_EQ(ds.design.n_treated + ds.design.n_control, 14u);
}

TEST(ValidateDesign, SwitchOffRejected) {
  std::vector<testing_support::Row> rows{{0, 1, 1, {0.0}}, {0, 2, 0, {0.0}}, {1, 1, 0, {0.0}}, {1, 2, 0, {0.0}}};
  try {
    testing_support::make_dataset(2, {gaussian()}, rows);
    FAIL() << "expected an error";
  } catch (const DataError& e) {
    EXPECT_EQ(contains(e.what(), "unsupported design"), "unsupported design");
  }
}

TEST(ValidateDesign, RejectsSingleArmAndSingleCluster) {
  EXPECT_THROW(testing_support::make_dataset(2, {gaussian()}, {{0, 1, 1, {0.0}}, {1, 1, 1, {0.0}}}), DataError);
  EXPECT_THROW(testing_support::make_dataset(1, {gaussian()}, {{0, 1, 1, {0.0}}}), DataError);
}

TEST(ValidateDesign, IdempotentAndPure) {
  const auto ds = testing_support::random_gaussian_trial(3, 8, 4, 3);
  const auto a = validate_design(ds);
  const auto b = validate_design(ds);
  EXPECT_EQ(a.n_treated, b.n_treated);
  EXPECT_EQ(a.observed_treated, b.observed_treated);
  EXPECT_EQ(a.treated_sequence, b.treated_sequence);
  EXPECT_EQ(a.scheme, ds.design.scheme);
}

TEST(RoundTrip, WriteThenReadIsIdentical) {
  auto ds = testing_support::random_gaussian_trial(9, 6, 3, 4, 2, 0.7);
  std::ostringstream out;
  write_dataset(out, ds);
  std::istringstream in(out.str());
  const auto back = read_dataset(in, mapping_of(ds));
  EXPECT_EQ(back.cluster_labels, ds.cluster_labels);
  ASSERT_EQ(back.n_obs(), ds.n_obs());
  for (std::size_t i = 0; i < ds.n_obs(); ++i) EXPECT_EQ(back.observations[i], ds.observations[i]);
  EXPECT_EQ(back.design.observed_treated, ds.design.observed_treated);
}

TEST(RoundTrip, MultiPeriodWithCovariates) {
  std::vector<testing_support::Row> rows;
  for (std::size_t c = 0; c < 4; ++c) {
    for (int t = 1; t <= 2; ++t) {
      rows.push_back({c, t, (c < 2 && t == 2) ? 1 : 0, {0.1 * c + t, static_cast<double>(c % 2)}, {1.0 / 3.0 + c}});
    }
  }
  const auto ds = testing_support::make_dataset(
      4, {gaussian("a"), {"b", Family::binomial, Link::logit}}, rows, {"x"});
  std::ostringstream out;
  write_dataset(out, ds);
  std::istringstream in(out.str());
  const auto back = read_dataset(in, mapping_of(ds));
  for (std::size_t i = 0; i < ds.n_obs(); ++i) EXPECT_EQ(back.observations[i], ds.observations[i]);
  EXPECT_EQ(back.design.scheme, DesignScheme::parallel_with_baseline);
}
