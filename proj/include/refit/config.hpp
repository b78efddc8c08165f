#pragma once

#include <map>
#include <string>
#include <vector>

#include <nlohmann/json_fwd.hpp>

namespace refit {

// Flat key/value configuration. Every key lives in a registry with a default
// and a one-line description; unknown keys are rejected. Files are plain
// `key = value` lines ('#' comments), and the CLI mirrors each key as a
// --key=value flag.
class Config {
 public:
  struct KeySpec {
    std::string key;
    std::string def;
    std::string help;
  };

  Config();

  static const std::vector<KeySpec>& registry();

  void set(const std::string& key, const std::string& value);
  bool has_default(const std::string& key) const;

  std::string get_str(const std::string& key) const;
  double get_double(const std::string& key) const;
  int64_t get_int(const std::string& key) const;
  bool get_bool(const std::string& key) const;

  void load_file(const std::string& path);

  nlohmann::json to_json() const;
  void apply_json(const nlohmann::json& j);

  // Keys that differ from their defaults, in registry order.
  std::vector<std::pair<std::string, std::string>> overrides() const;

 private:
  std::map<std::string, std::string> values_;
};

}  // namespace refit
