#include "catreg/config.hpp"

#include <charconv>
#include <fstream>
#include <sstream>

#include "catreg/errors.hpp"

namespace catreg {

namespace {

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return {};
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

}  // namespace

ConfigMap parse_config(const std::string& text) {
  ConfigMap map;
  std::istringstream in(text);
  std::string line;
  int line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (const auto hash = line.find('#'); hash != std::string::npos) line.erase(hash);
    line = trim(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos) throw ConfigError("line " + std::to_string(line_no) + ": expected key=value");
    const std::string key = trim(line.substr(0, eq)), value = trim(line.substr(eq + 1));
    if (key.empty()) throw ConfigError("line " + std::to_string(line_no) + ": empty key");
    if (!map.emplace(key, value).second) throw ConfigError(key + ": duplicate key");
  }
  return map;
}

ConfigMap read_config_file(const std::filesystem::path& path) {
  std::ifstream f(path);
  if (!f) throw ConfigError("cannot read config file " + path.string());
  std::stringstream ss;
  ss << f.rdbuf();
  return parse_config(ss.str());
}

std::string format_config(const ConfigMap& map) {
  std::string out;
  for (const auto& [k, v] : map) out += k + " = " + v + "\n";
  return out;
}

void write_config_file(const std::filesystem::path& path, const ConfigMap& map) {
  std::ofstream f(path);
  if (!f) throw DataError("cannot write " + path.string());
  f << format_config(map);
}

std::string format_double(double v) {
  char buf[64];
  const auto res = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, res.ptr);
}

std::string ConfigReader::get_string(const std::string& key, const std::string& fallback) {
  used_.insert(key);
  const auto it = map_.find(key);
  return it == map_.end() ? fallback : it->second;
}

double ConfigReader::get_double(const std::string& key, double fallback) {
  used_.insert(key);
  const auto it = map_.find(key);
  if (it == map_.end()) return fallback;
  double v = 0;
  const auto& s = it->second;
  const auto res = std::from_chars(s.data(), s.data() + s.size(), v);
  if (res.ec != std::errc() || res.ptr != s.data() + s.size())
    throw ConfigError(key + ": expected a number, got '" + s + "'");
  return v;
}

int ConfigReader::get_int(const std::string& key, int fallback) {
  used_.insert(key);
  const auto it = map_.find(key);
  if (it == map_.end()) return fallback;
  int v = 0;
  const auto& s = it->second;
  const auto res = std::from_chars(s.data(), s.data() + s.size(), v);
  if (res.ec != std::errc() || res.ptr != s.data() + s.size())
    throw ConfigError(key + ": expected an integer, got '" + s + "'");
  return v;
}

std::uint64_t ConfigReader::get_u64(const std::string& key, std::uint64_t fallback) {
  used_.insert(key);
  const auto it = map_.find(key);
  if (it == map_.end()) return fallback;
  std::uint64_t v = 0;
  const auto& s = it->second;
  const auto res = std::from_chars(s.data(), s.data() + s.size(), v);
  if (res.ec != std::errc() || res.ptr != s.data() + s.size())
    throw ConfigError(key + ": expected an unsigned integer, got '" + s + "'");
  return v;
}

bool ConfigReader::get_bool(const std::string& key, bool fallback) {
  used_.insert(key);
  const auto it = map_.find(key);
  if (it == map_.end()) return fallback;
  const auto& s = it->second;
  if (s == "true" || s == "on" || s == "1") return true;
  if (s == "false" || s == "off" || s == "0") return false;
  throw ConfigError(key + ": expected true/false, got '" + s + "'");
}

void ConfigReader::reject_unknown() const {
  for (const auto& [k, v] : map_)
    if (!used_.count(k)) throw ConfigError(k + ": unknown configuration key");
}

DatasetSpec dataset_spec_from_config(const ConfigMap& map) {
  ConfigReader r(map);
  DatasetSpec s;
  s.num_classes = r.get_int("num_classes", s.num_classes);
  s.image_size = r.get_int("image_size", s.image_size);
  s.samples_per_domain = r.get_int("samples_per_domain", s.samples_per_domain);
  s.val_samples_per_domain = r.get_int("val_samples_per_domain", s.val_samples_per_domain);
  s.shift_kind = parse_shift_kind(r.get_string("shift_kind", std::string(to_string(s.shift_kind))));
  s.shift_strength = r.get_double("shift_strength", s.shift_strength);
  s.rng_seed = r.get_u64("rng_seed", s.rng_seed);
  r.reject_unknown();
  s.validate();
  return s;
}

ConfigMap dataset_spec_to_config(const DatasetSpec& s) {
  return {{"num_classes", std::to_string(s.num_classes)},
          {"image_size", std::to_string(s.image_size)},
          {"samples_per_domain", std::to_string(s.samples_per_domain)},
          {"val_samples_per_domain", std::to_string(s.val_samples_per_domain)},
          {"shift_kind", std::string(to_string(s.shift_kind))},
          {"shift_strength", format_double(s.shift_strength)},
          {"rng_seed", std::to_string(s.rng_seed)}};
}

}  // namespace catreg
