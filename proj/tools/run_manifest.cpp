#include "run_manifest.hpp"

#include <openssl/evp.h>

#include <array>
#include <chrono>
#include <cstdio>
#include <ctime>
#include <fstream>

#include "json.hpp"
#include "msmil/error.hpp"

namespace msmil::cli {

namespace {

std::array<unsigned char, 32> sha256(const std::string& text) {
  std::array<unsigned char, 32> digest{};
  unsigned int len = 0;
  if (EVP_Digest(text.data(), text.size(), digest.data(), &len, EVP_sha256(), nullptr) != 1)
    throw DataError("SHA-256 computation failed");
  return digest;
}

nlohmann::ordered_json deterministic_fields(const RunManifest& m) {
  nlohmann::ordered_json j;
  j["tool_version"] = kToolVersion;
  j["command"] = m.command;
  j["arguments"] = m.arguments;
  j["config"] = m.config_path;
  j["inputs"] = m.inputs;
  j["outputs"] = m.outputs;
  j["seed"] = m.seed;
  return j;
}

}  // namespace

std::uint64_t stable_hash64(const std::string& text) {
  const auto d = sha256(text);
  std::uint64_t v = 0;
  for (int i = 0; i < 8; ++i) v = (v << 8) | d[static_cast<std::size_t>(i)];
  return v;
}

std::string RunManifest::hash() const {
  const auto d = sha256(deterministic_fields(*this).dump());
  std::string hex;
  char buf[3];
  for (unsigned char b : d) {
    std::snprintf(buf, sizeof buf, "%02x", b);
    hex += buf;
  }
  return hex;
}

void RunManifest::write_sidecars() const {
  nlohmann::ordered_json j = deterministic_fields(*this);
  j["manifest_hash"] = hash();
  j["started_at"] = started_at;
  j["finished_at"] = utc_timestamp();
  for (const std::string& out : outputs) {
    const std::string path = out + ".run.json";
    std::ofstream f(path);
    if (!f) throw DataError("cannot write '" + path + "'");
    f << j.dump(2) << '\n';
  }
}

std::string utc_timestamp() {
  const std::time_t now = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
  std::tm tm{};
  gmtime_r(&now, &tm);
  char buf[32];
  std::strftime(buf, sizeof buf, "%Y-%m-%dT%H:%M:%SZ", &tm);
  return buf;
}

}  // namespace msmil::cli
