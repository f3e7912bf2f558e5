#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

namespace msmil::cli {

/// Provenance of one subcommand run. The hash covers the deterministic
/// fields only, so identical runs share it.
struct RunManifest {
  std::string command;
  std::vector<std::string> arguments;
  std::string config_path;
  std::vector<std::string> inputs;
  std::vector<std::string> outputs;
  std::uint64_t seed = 0;
  std::string started_at;

  std::string hash() const;
  /// Writes `<output>.run.json` next to every output file.
  void write_sidecars() const;
};

std::string utc_timestamp();

/// First 8 bytes of SHA-256(text), big-endian.
std::uint64_t stable_hash64(const std::string& text);

inline constexpr const char* kToolVersion = "0.1.0";

}  // namespace msmil::cli
