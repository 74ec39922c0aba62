#pragma once

#include <filesystem>
#include <string>

#include "steal_lab/extraction.hpp"

namespace steal_lab {

inline constexpr const char* kInProcessOracle = "in_process";

struct ExperimentConfig {
  ExperimentPlan plan;
  std::filesystem::path out;
  std::string oracle = kInProcessOracle;  // or an http://host:port endpoint
};

/// Parses a YAML experiment file. Missing sections take the defaults: all
/// three target sizes, every family on trunks arch_A (the large target's
/// hidden widths) and arch_B, M = [50, 6], 30 epochs (50 for bnn), 6 ensemble
/// members. Errors throw ConfigError naming the offending key and line.
ExperimentConfig parse_config(const std::filesystem::path& path);
ExperimentConfig parse_config_text(const std::string& text);

}  // namespace steal_lab
