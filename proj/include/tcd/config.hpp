#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "tcd/datasets.hpp"
#include "tcd/detector.hpp"
#include "tcd/model.hpp"
#include "tcd/trainer.hpp"

namespace tcd {

/// Where the series come from: a generator, or CSV files on disk.
struct DataConfig {
  GeneratorSpec generator;
  std::string csv;    // when set, overrides the generator
  std::string truth;  // ground-truth CSV for `csv`; optional
  bool standardize = true;

  bool operator==(const DataConfig&) const = default;
};

struct EvalConfig {
  bool include_self_loops = true;

  bool operator==(const EvalConfig&) const = default;
};

struct BenchConfig {
  std::vector<std::string> structures;  // one report row each; empty uses data.structure

  bool operator==(const BenchConfig&) const = default;
};

struct RunConfig {
  std::string profile;
  DataConfig data;
  ModelConfig model;
  TrainConfig train;
  DetectorConfig detector;
  EvalConfig eval;
  BenchConfig bench;
  std::string output = "out";
  std::vector<std::uint64_t> seeds = {0, 1, 2, 3, 4};

  bool operator==(const RunConfig&) const = default;
};

/// Every violation found while building a config, reported together.
class ConfigError : public std::invalid_argument {
 public:
  explicit ConfigError(std::vector<std::string> problems);
  const std::vector<std::string>& problems() const noexcept { return problems_; }

 private:
  std::vector<std::string> problems_;
};

const std::vector<std::string>& profile_names();

/// Settings of a named profile as a partial config document.
nlohmann::json profile_json(const std::string& name);

/// Parses `--section.key=value` (or `section.key=value`) into a JSON patch.
/// Values are read as JSON when they parse, else as strings.
nlohmann::json parse_override(const std::string& text);

/// Layers defaults, the profile named in `doc` (or `profile`), `doc` and
/// the overrides, then validates. Throws ConfigError listing every problem.
RunConfig build_config(const nlohmann::json& doc, const std::vector<std::string>& overrides = {},
                       const std::string& profile = "");

/// Reads a JSON file (may be empty path for none) and calls `build_config`.
RunConfig load_config(const std::filesystem::path& path,
                      const std::vector<std::string>& overrides = {},
                      const std::string& profile = "");

nlohmann::json config_to_json(const RunConfig& config);

}  // namespace tcd
