#include <gtest/gtest.h>

#include <sstream>

#include "crtperm/crtperm.hpp"

using namespace crtperm;
using nlohmann::json;

namespace {

json minimal_config() {
  return json::parse(R"({
    "schema_version": 1,
    "outcomes": [{"name": "y", "family": "gaussian"}]
  })");
}

json minimal_study() {
  return json::parse(R"({"schema_version": 1, "model": "model1", "R": 5, "M": 20, "Q": 100})");
}

std::string config_error(const json& j) {
  try {
    parse_analysis_config(j);
  } catch (const ConfigError& e) {
    return e.what();
  }
  return "<no error>";
}

}  // namespace

TEST(AnalysisConfig, Defaults) {
  const auto cfg = parse_analysis_config(minimal_config());
  EXPECT_DOUBLE_EQ(cfg.alpha, 0.05);
  EXPECT_EQ(cfg.permutations, 1000u);
  EXPECT_EQ(cfg.steps, 2000u);
  EXPECT_EQ(cfg.methods.size(), 4u);
  EXPECT_EQ(cfg.statistic, StatisticKind::unweighted);
  EXPECT_EQ(cfg.sided, Sided::two_sided);
  EXPECT_EQ(cfg.columns.cluster, "cluster");
  EXPECT_EQ(cfg.columns.outcomes[0].link, Link::identity);
}

TEST(AnalysisConfig, FullDocument) {
  const auto cfg = parse_analysis_config(json::parse(R"({
    "schema_version": 1,
    "columns": {"cluster": "site", "time": "period", "treatment": "arm", "covariates": ["age"]},
    "outcomes": [{"name": "n", "family": "poisson"}, {"name": "b", "family": "binomial", "link": "logit"}],
    "alpha": 0.1, "methods": ["romano_wolf", "none"], "statistic": "weighted", "sided": "one_sided",
    "M": 50, "Q": 300, "seed": 9, "enumerate": "never",
    "covariance": {"source": "fixed", "structure": "ar1_time",
                   "values": [{"sigma2": 1, "tau2": 0.1, "lambda": 0.5}, {"sigma2": 1, "tau2": 0.2, "lambda": 0.7}]}
  })"));
  EXPECT_EQ(cfg.columns.time, "period");
  EXPECT_EQ(cfg.columns.outcomes[0].link, Link::log);
  EXPECT_EQ(cfg.methods, (std::vector<Method>{Method::romano_wolf, Method::none}));
  EXPECT_EQ(cfg.statistic, StatisticKind::weighted);
  EXPECT_EQ(cfg.sided, Sided::one_sided);
  EXPECT_EQ(cfg.seed, 9u);
  EXPECT_EQ(cfg.enumerate, EnumerateMode::never);
  ASSERT_EQ(cfg.covariance.fixed.size(), 2u);
  EXPECT_DOUBLE_EQ(cfg.covariance.fixed[1].lambda, 0.7);
  EXPECT_EQ(cfg.covariance.fixed[0].structure, CovarianceStructure::ar1_time);
}

TEST(AnalysisConfig, RoundTrip) {
  auto j = minimal_config();
  j["M"] = 123;
  j["methods"] = {"holm"};
  const auto cfg = parse_analysis_config(j);
  const auto again = parse_analysis_config(analysis_config_json(cfg));
  EXPECT_EQ(again.permutations, 123u);
  EXPECT_EQ(again.methods, cfg.methods);
  EXPECT_EQ(analysis_config_json(again), analysis_config_json(cfg));
}

TEST(AnalysisConfig, Errors) {
  auto j = minimal_config();
  j.erase("outcomes");
  EXPECT_EQ(config_error(j), "missing field: outcomes");
  j = minimal_config();
  j["bogus"] = 1;
  EXPECT_NE(config_error(j).find("unknown field: bogus"), std::string::npos);
  j = minimal_config();
  j["schema_version"] = 2;
  EXPECT_NE(config_error(j).find("schema_version"), std::string::npos);
  j = minimal_config();
  j["alpha"] = 0.7;
  EXPECT_NE(config_error(j), "<no error>");
  j = minimal_config();
  j["M"] = -3;
  EXPECT_NE(config_error(j), "<no error>");
  j = minimal_config();
  j["Q"] = 20;
  EXPECT_NE(config_error(j).find("Q"), std::string::npos);
  j = minimal_config();
  j["methods"] = {"sidak"};
  EXPECT_NE(config_error(j).find("unknown method"), std::string::npos);
  j = minimal_config();
  j["outcomes"][0]["family"] = "gamma";
  EXPECT_NE(config_error(j), "<no error>");
  j = minimal_config();
  j["outcomes"][0]["link"] = "log";
  EXPECT_NE(config_error(j), "<no error>");
  j = minimal_config();
  j["covariance"] = {{"structure", "ar1_time"}};
  EXPECT_NE(config_error(j).find("ar1_time"), std::string::npos);
  j = minimal_config();
  j["covariance"] = {{"source", "fixed"}, {"values", {{{"sigma2", 0.0}}}}};
  EXPECT_NE(config_error(j), "<no error>");
}

TEST(AnalysisConfig, InvalidJson) {
  std::istringstream in("{ not json");
  EXPECT_THROW(read_analysis_config(in), ConfigError);
  EXPECT_THROW(load_analysis_config("/nonexistent/config.json"), ConfigError);
}

TEST(StudyConfig, DefaultsAndOverrides) {
  auto j = minimal_study();
  j["parameters"] = {{"delta", {0.0, 1.0}}, {"rho", 0.3}, {"pi", 0.3}};
  j["search_methods"] = {"romano_wolf"};
  j["statistics"] = {"unweighted", "weighted"};
  j["seed"] = 12;
  const auto s = parse_study_config(j);
  EXPECT_EQ(s.dgp.model, Model::model1);
  EXPECT_EQ(s.dgp.delta, (std::vector<double>{0.0, 1.0}));
  EXPECT_DOUBLE_EQ(s.dgp.tau2[0], 0.05);
  EXPECT_DOUBLE_EQ(s.dgp.rho, 0.3);
  EXPECT_EQ(s.settings.search_methods, (std::vector<Method>{Method::romano_wolf}));
  EXPECT_EQ(s.settings.kinds.size(), 2u);
  EXPECT_EQ(s.settings.replicates, 5u);
  EXPECT_EQ(s.settings.seed, 12u);
}

TEST(StudyConfig, Errors) {
  for (const char* key : {"R", "M", "Q", "model"}) {
    auto j = minimal_study();
    j.erase(key);
    try {
      parse_study_config(j);
      FAIL() << key;
    } catch (const ConfigError& e) {
      EXPECT_EQ(std::string(e.what()), std::string("missing field: ") + key);
    }
  }
  auto j = minimal_study();
  j["parameters"] = {{"delta", {0.0}}};
  EXPECT_THROW(parse_study_config(j), ConfigError);
  j = minimal_study();
  j["parameters"] = {{"kappa", 1}};
  EXPECT_THROW(parse_study_config(j), ConfigError);
  j = minimal_study();
  j["model"] = "model9";
  EXPECT_THROW(parse_study_config(j), ConfigError);
  j = minimal_study();
  j["R"] = 0;
  EXPECT_THROW(parse_study_config(j), ConfigError);
}

TEST(StudyConfig, ShippedStudiesParse) {
  for (const char* name : {"model1_null", "model1_one_false", "model1_correlated", "model3_baseline", "smoke"}) {
    EXPECT_NO_THROW(load_study_config(std::string(CRTPERM_STUDIES) + "/" + name + ".json")) << name;
  }
}

TEST(ReportJson, StableLayout) {
  StudySettings st;
  st.replicates = 2;
  st.permutations = 20;
  st.steps = 100;
  st.search_methods = {Method::romano_wolf};
  const auto r = run_study(default_dgp(Model::model1), st);
  const auto j = simulation_report_json(r);
  EXPECT_EQ(j["schema_version"], 1);
  EXPECT_EQ(j["kind"], "simulation_report");
  EXPECT_EQ(j["replicates"], 2);
  ASSERT_TRUE(j["methods"].is_array());
  EXPECT_EQ(j["methods"][0]["method"], "naive");
  for (const auto& m : j["methods"]) {
    EXPECT_TRUE(m.contains("fwer"));
    EXPECT_TRUE(m["fwer"].contains("se"));
    EXPECT_TRUE(m.contains("coverage"));
    EXPECT_TRUE(m.contains("mean_ci_width"));
  }
  EXPECT_EQ(j.dump(), simulation_report_json(run_study(default_dgp(Model::model1), st)).dump());
}
