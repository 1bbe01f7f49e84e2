#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "ctta/adaptation_engine.hpp"
#include "ctta/backbone.hpp"
#include "ctta/corruption_stream.hpp"
#include "ctta/dataset.hpp"

namespace ctta {

struct SweepConfig {
  std::string param = "lambda_cdm";
  std::vector<double> values;  // empty -> default grid
  double spread_threshold = 3.0;
};

struct PretrainConfig {
  std::size_t epochs = 30;
  PretrainOptions options{};
};

/// Typed view of a run configuration document. Built by load_config / parse_config.
struct RunConfig {
  std::uint64_t seed = 0;
  std::vector<std::uint64_t> seeds;  // multi-seed runs; empty -> {seed}
  std::filesystem::path output_dir;

  ToyDatasetOptions source_data{};
  ToyDatasetOptions eval_data{};
  std::uint64_t stream_clean_seed = 100;  // clean test draw uses stream_clean_seed + run seed
  StreamConfig stream{};

  std::string arch = "small_cnn";
  std::filesystem::path checkpoint;
  BackboneOptions backbone{};

  PretrainConfig pretrain{};
  EngineConfig engine{};
  SweepConfig sweep{};

  std::string document;  // merged configuration, pretty-printed JSON

  std::vector<std::uint64_t> run_seeds() const { return seeds.empty() ? std::vector<std::uint64_t>{seed} : seeds; }
};

/// Built-in defaults as a JSON document.
std::string default_config_json();

/// `key.path=value` assignments applied to the document before validation. The value is parsed as JSON
/// when possible and taken as a string otherwise.
struct Override {
  std::string path;
  std::string value;
  bool literal = false;  // take value as a string without JSON parsing
};
Override parse_override(const std::string& assignment);

/// Merges the document over the defaults. Unknown keys and missing required keys raise ConfigError naming
/// the key. Required: output_dir, model.checkpoint.
RunConfig parse_config(const std::string& json_text, const std::vector<Override>& overrides = {});
RunConfig load_config(const std::filesystem::path& path, const std::vector<Override>& overrides = {});

}  // namespace ctta
