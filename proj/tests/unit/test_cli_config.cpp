#include <gtest/gtest.h>

#include <filesystem>
#include <functional>
#include <fstream>

#include "config.hpp"
#include "epopr/error.hpp"

using namespace epopr;
using nlohmann::json;

namespace {

Errc code_of(const std::function<void()>& f) {
  try {
    f();
  } catch (const Error& e) {
    return e.code();
  }
  ADD_FAILURE() << "no error raised";
  return Errc::kInvalidConfig;
}

}  // namespace

TEST(RunConfig, JsonRoundTrip) {
  cli::RunConfig c;
  c.seed = 7;
  c.alpha = 0.8;
  c.method = conformal::Method::kCQR;
  c.env.depot = Point{1.5, -2.0};
  c.training.d_limit = 6.0;
  c.training.optimizer = agent::OptimizerKind::kSgd;
  c.evaluation.seeds = {3, 4};
  c.apply_seed();
  const auto j = cli::to_json(c);
  EXPECT_EQ(cli::to_json(cli::from_json(j)), j);
  EXPECT_TRUE(j["env"]["prune_max_km"].is_null());  // unbounded radius

  const auto path = std::filesystem::temp_directory_path() / "epopr_cfg.json";
  cli::write_config(c, path);
  EXPECT_EQ(cli::to_json(cli::load_config(path)), j);
}

TEST(RunConfig, ApplySeedReachesEveryComponent) {
  cli::RunConfig c;
  c.seed = 99;
  c.apply_seed();
  EXPECT_EQ(c.generator.seed, 99u);
  EXPECT_EQ(c.qrf.seed, 99u);
  EXPECT_EQ(c.training.seed, 99u);
}

TEST(RunConfig, MissingKeysKeepDefaults) {
  const auto c = cli::from_json(json::parse(R"({"calibration": {"alpha": 0.85}})"));
  EXPECT_EQ(c.alpha, 0.85);
  EXPECT_EQ(c.generator.n_regions, cli::RunConfig{}.generator.n_regions);
}

TEST(RunConfig, RejectsUnknownKeysAndBadValues) {
  EXPECT_EQ(code_of([] { cli::from_json(json::parse(R"({"alpah": 0.9})")); }),
            Errc::kInvalidConfig);
  EXPECT_EQ(code_of([] { cli::from_json(json::parse(R"({"training": {"lr": 1}})")); }),
            Errc::kInvalidConfig);
  EXPECT_EQ(code_of([] { cli::from_json(json::parse(R"({"calibration": {"method": "XYZ"}})")); }),
            Errc::kInvalidConfig);
  cli::RunConfig c;
  c.alpha = 1.5;
  try {
    c.validate();
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), Errc::kAlphaOutOfRange);
    EXPECT_NE(std::string(e.what()).find("(0,1)"), std::string::npos);
  }
  c.alpha = 0.9;
  c.evaluation.seeds.clear();
  EXPECT_EQ(code_of([&] { c.validate(); }), Errc::kInvalidConfig);
}

TEST(RunConfig, MalformedFileIsAConfigError) {
  const auto path = std::filesystem::temp_directory_path() / "epopr_bad.json";
  std::ofstream(path) << "{ not json";
  EXPECT_EQ(code_of([&] { cli::load_config(path); }), Errc::kInvalidConfig);
}
