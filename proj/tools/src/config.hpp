#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "json.hpp"

#include "epopr/eval.hpp"
#include "epopr/stasac.hpp"

namespace epopr::cli {

struct EvaluationConfig {
  std::size_t n_episodes = 100;
  std::vector<std::uint64_t> seeds = {0, 1, 2, 3, 4, 5, 6, 7, 8, 9};
  agent::SelectMode agent_mode = agent::SelectMode::kGreedy;
};

// Everything a run depends on. `seed` feeds the generator, the split, the
// forest and the agent.
struct RunConfig {
  std::uint64_t seed = 0;
  datagen::GeneratorConfig generator{};
  datagen::SplitFractions split{};
  forest::QrfParams qrf{};
  conformal::Method method = conformal::Method::kECQR;
  double alpha = 0.9;
  eval::EnvOptions env{};
  agent::TrainingConfig training{};
  EvaluationConfig evaluation{};
  std::size_t jobs = 1;

  // Pushes `seed` into every component seed.
  void apply_seed();
  // Throws Error(kInvalidConfig / kAlphaOutOfRange).
  void validate() const;
};

// Keys absent from `j` keep their defaults; unknown keys are rejected.
RunConfig from_json(const nlohmann::json& j);
nlohmann::json to_json(const RunConfig& c);

RunConfig load_config(const std::filesystem::path& path);
void write_config(const RunConfig& c, const std::filesystem::path& path);

}  // namespace epopr::cli
