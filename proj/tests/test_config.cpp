#include <gtest/gtest.h>

#include "ccl/config.hpp"

using ccl::json;

namespace {

json minimal() { return json{{"method", "ccl"}, {"lambda1", 0.9}, {"lambda2", 0.1}, {"lambda3", 0.1}}; }

std::string config_error(const json& j) {
  try {
    ccl::parse_config(j);
  } catch (const ccl::ConfigError& e) {
    return e.what();
  }
  return "";
}

}  // namespace

TEST(Config, MinimalUsesDefaults) {
  const auto c = ccl::parse_config(minimal());
  EXPECT_EQ(c.method, ccl::Method::kCcl);
  EXPECT_EQ(c.t_steps, 5);
  EXPECT_EQ(c.esq_size, 128u);
  EXPECT_EQ(c.sampler.n_per_cluster, 20u);
  EXPECT_EQ(c.sampler.views, 6u);
  EXPECT_EQ(c.momentum_teacher, 0.996);
  EXPECT_EQ(c.tau, 0.2);
  EXPECT_EQ(c.tau_kd, 0.1);
  EXPECT_EQ(c.esq_rows, ccl::EsqRows::kAll);
  EXPECT_TRUE(c.components.kd);
  EXPECT_TRUE(c.components.esq);
  EXPECT_EQ(c.components.sampler, ccl::SamplerKind::kVariance);
}

TEST(Config, MethodsSetComponents) {
  json j = minimal();
  j["method"] = "finetune";
  const auto ft = ccl::parse_config(j);
  EXPECT_EQ(ft.components.sampler, ccl::SamplerKind::kNone);
  EXPECT_EQ(ft.effective_lambda2(), 0.0);
  EXPECT_EQ(ft.effective_lambda3(), 0.0);
  j["method"] = "simple_rehearsal";
  EXPECT_EQ(ccl::parse_config(j).components.sampler, ccl::SamplerKind::kRandom);
}

TEST(Config, FieldLevelErrors) {
  json j = minimal();
  j.erase("lambda1");
  EXPECT_NE(config_error(j).find("lambda1"), std::string::npos);

  j = minimal();
  j["lambda2"] = "high";
  EXPECT_NE(config_error(j).find("lambda2"), std::string::npos);

  j = minimal();
  j["data"] = {{"per_clas", 3}};
  EXPECT_NE(config_error(j).find("data.per_clas"), std::string::npos);

  j = minimal();
  j["lambda3"] = -1.0;
  EXPECT_NE(config_error(j).find("lambda3"), std::string::npos);

  j = minimal();
  j["method"] = "magic";
  EXPECT_NE(config_error(j), "");

  j = minimal();
  j["augment"] = {{"drop_prob", 1.0}};
  EXPECT_NE(config_error(j), "");
}

TEST(Config, ResolvedJsonRoundTrips) {
  json j = minimal();
  j["seed"] = 17;
  j["sampler"] = {{"memory_mode", "fixed_total"}, {"kmeans_k", 3}};
  j["data"] = {{"within_spread", 0.25}};
  const auto c = ccl::parse_config(j);
  const json resolved = ccl::to_json(c);
  EXPECT_EQ(ccl::to_json(ccl::parse_config(resolved)), resolved);
  EXPECT_EQ(resolved.at("seed"), 17);
  EXPECT_EQ(resolved.at("sampler").at("memory_mode"), "fixed_total");
}
