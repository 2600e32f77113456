#pragma once

#include <filesystem>
#include <string>

#include "mmkp/config.hpp"
#include "mmkp/trainer.hpp"

namespace mmkp::cli {

struct DataConfig {
  std::string train, val;
  std::size_t gen_cap = 45000;
  std::size_t min_count = 1;
  std::size_t min_keyphrase_count = 1;  // keyphrases rarer than this are dropped from training
  bool normalize = true;
  std::string embeddings;               // optional word-vector file
};

struct InferenceConfig {
  std::size_t beam = 10;
  std::size_t top_k = 10;
  double a = 0.5, b = 0.5;
};

struct RunConfig {
  std::uint64_t seed = 7;
  ModelConfig model;
  TrainConfig train;
  DataConfig data;
  InferenceConfig inference;
};

// YAML document with top-level `seed` and sections model, attention, train,
// data, inference. Unknown keys and malformed values are ConfigError.
RunConfig parse_config(const std::string& yaml_text);
RunConfig load_config(const std::filesystem::path& path);

// "section.key=value" (or "seed=value"), value parsed as YAML.
void apply_override(RunConfig& config, const std::string& assignment);

// Full resolved configuration, every key spelled out.
std::string dump_config(const RunConfig& config);

}  // namespace mmkp::cli
