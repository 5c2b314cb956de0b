#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <string_view>

#include "optalloc/model.hpp"
#include "optalloc/scenario.hpp"
#include "optalloc/simulate.hpp"

namespace optalloc::cli {

struct EstimateInputs {
  Estimand estimand = Estimand::trial;
  OutcomeFamily family = OutcomeFamily::normal;  // working outcome model
  std::filesystem::path trial;
  std::filesystem::path target;
  std::filesystem::path cohort;
  std::filesystem::path weights;  // optional override of the post-stratification weights
};

// Everything a run needs. Sections absent from the file keep the reference
// setting, so an empty document describes the bundled study.
struct RunConfig {
  Scenario scenario = reference_scenario();
  LinkFunction link;
  sim::StudyConfig study = sim::reference_study();
  bool dump_datasets = false;
  std::size_t grid_points = 81;
  std::optional<EstimateInputs> estimate;
  std::filesystem::path out_dir = "out";
  int verbosity = 1;

  // study.scenario and study.link mirror scenario and link
  void sync();
};

// Throws ConfigError naming the offending key on unknown keys, wrong types
// or invalid values. Relative paths resolve against `base_dir`.
RunConfig parse_config(std::string_view toml_text, const std::filesystem::path& base_dir = {});
RunConfig load_config(const std::filesystem::path& path);

// Canonical TOML for the configuration; parse_config(to_toml(c)) == c.
std::string to_toml(const RunConfig& config);

// 64-bit FNV-1a over the canonical TOML, ignoring the output directory
// and verbosity.
std::uint64_t config_hash(const RunConfig& config);
std::string hash_hex(std::uint64_t hash);

}  // namespace optalloc::cli
