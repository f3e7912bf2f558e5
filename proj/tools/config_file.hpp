#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "msmil/harness.hpp"

namespace msmil::cli {

/// Settings readable from a flat `key = value` file. Lines starting with '#'
/// and blank lines are ignored; unknown keys raise ConfigError.
struct Settings {
  ExperimentConfig experiment;
  std::optional<std::string> cache;
  std::optional<std::string> preset;
  std::size_t slides_per_class = 20;
  bool resample = false;
  /// True once `np` was assigned by the file or a flag.
  bool np_set = false;
};

/// Every accepted key, in the order they are documented.
const std::vector<std::string>& config_keys();

void apply_config_file(const std::filesystem::path& path, Settings& settings);

/// One `key=value` assignment; throws ConfigError naming the key.
void apply_setting(Settings& settings, const std::string& key, const std::string& value);

}  // namespace msmil::cli
