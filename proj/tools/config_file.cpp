#include "config_file.hpp"

#include <charconv>
#include <fstream>

#include "msmil/error.hpp"

namespace msmil::cli {

namespace {

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return {};
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

template <typename T>
T parse_number(const std::string& key, const std::string& value) {
  T out{};
  const auto [end, ec] = std::from_chars(value.data(), value.data() + value.size(), out);
  if (ec != std::errc() || end != value.data() + value.size())
    throw ConfigError("config key '" + key + "': cannot parse '" + value + "'");
  return out;
}

bool parse_bool(const std::string& key, const std::string& value) {
  if (value == "true" || value == "1" || value == "yes") return true;
  if (value == "false" || value == "0" || value == "no") return false;
  throw ConfigError("config key '" + key + "': expected true or false, got '" + value + "'");
}

}  // namespace

const std::vector<std::string>& config_keys() {
  static const std::vector<std::string> keys = {
      "method",         "k",           "classifier",      "rbf_gamma",        "C",
      "np",             "repetitions", "train_fraction",  "aug1",             "seed",
      "kmeans_restarts", "kmeans_max_iters", "kmeans_tol", "threads",         "record_time",
      "cache",          "preset",      "slides_per_class", "resample"};
  return keys;
}

void apply_setting(Settings& s, const std::string& key, const std::string& value) {
  ExperimentConfig& c = s.experiment;
  if (key == "method") {
    const auto m = parse_method(value);
    if (!m) throw ConfigError("config key 'method': unknown method '" + value + "'");
    c.method = *m;
  } else if (key == "k") {
    c.k = parse_number<std::size_t>(key, value);
  } else if (key == "classifier") {
    const auto cl = parse_classifier(value);
    if (!cl) throw ConfigError("config key 'classifier': unknown classifier '" + value + "'");
    c.classifier = *cl;
  } else if (key == "rbf_gamma") {
    c.rbf_gamma = parse_number<double>(key, value);
  } else if (key == "C") {
    c.C = parse_number<double>(key, value);
  } else if (key == "np") {
    c.n_patches = parse_number<std::size_t>(key, value);
    s.np_set = true;
  } else if (key == "repetitions") {
    c.repetitions = parse_number<std::size_t>(key, value);
  } else if (key == "train_fraction") {
    c.train_fraction = parse_number<double>(key, value);
  } else if (key == "aug1") {
    c.aug1 = parse_bool(key, value);
  } else if (key == "seed") {
    c.seed = parse_number<std::uint64_t>(key, value);
  } else if (key == "kmeans_restarts") {
    c.kmeans_restarts = parse_number<std::size_t>(key, value);
  } else if (key == "kmeans_max_iters") {
    c.kmeans_max_iters = parse_number<std::size_t>(key, value);
  } else if (key == "kmeans_tol") {
    c.kmeans_tol = parse_number<double>(key, value);
  } else if (key == "threads") {
    c.threads = parse_number<std::size_t>(key, value);
  } else if (key == "record_time") {
    c.record_time = parse_bool(key, value);
  } else if (key == "cache") {
    s.cache = value;
  } else if (key == "preset") {
    s.preset = value;
  } else if (key == "slides_per_class") {
    s.slides_per_class = parse_number<std::size_t>(key, value);
  } else if (key == "resample") {
    s.resample = parse_bool(key, value);
  } else {
    throw ConfigError("unknown config key '" + key + "'");
  }
}

void apply_config_file(const std::filesystem::path& path, Settings& settings) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot read config file '" + path.string() + "'");
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    const std::string t = trim(line);
    if (t.empty() || t[0] == '#') continue;
    const auto eq = t.find('=');
    if (eq == std::string::npos)
      throw ConfigError(path.string() + ":" + std::to_string(line_no) + ": expected key = value");
    apply_setting(settings, trim(t.substr(0, eq)), trim(t.substr(eq + 1)));
  }
}

}  // namespace msmil::cli
