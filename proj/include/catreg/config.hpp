#pragma once

// Flat key=value configuration files. '#' starts a comment; blank lines are
// ignored; keys are unique. Unknown keys are configuration errors.

#include <cstdint>
#include <filesystem>
#include <map>
#include <set>
#include <string>

#include "catreg/dataset.hpp"

namespace catreg {

using ConfigMap = std::map<std::string, std::string>;

ConfigMap parse_config(const std::string& text);
ConfigMap read_config_file(const std::filesystem::path& path);
std::string format_config(const ConfigMap& map);
void write_config_file(const std::filesystem::path& path, const ConfigMap& map);

// Typed reads that remember which keys were consumed.
class ConfigReader {
 public:
  explicit ConfigReader(ConfigMap map) : map_(std::move(map)) {}

  bool has(const std::string& key) const { return map_.count(key) != 0; }
  std::string get_string(const std::string& key, const std::string& fallback);
  double get_double(const std::string& key, double fallback);
  int get_int(const std::string& key, int fallback);
  std::uint64_t get_u64(const std::string& key, std::uint64_t fallback);
  bool get_bool(const std::string& key, bool fallback);

  // Throws ConfigError naming the first key that was never read.
  void reject_unknown() const;

 private:
  ConfigMap map_;
  std::set<std::string> used_;
};

std::string format_double(double v);

DatasetSpec dataset_spec_from_config(const ConfigMap& map);
ConfigMap dataset_spec_to_config(const DatasetSpec& spec);

}  // namespace catreg
