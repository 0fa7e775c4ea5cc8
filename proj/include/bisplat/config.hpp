#pragma once
// Layered run configuration: defaults < config file < BISPLAT_* environment
// variables < command-line flags. Keys are dotted lowercase words; unknown
// keys are rejected by name.

#include <map>
#include <optional>
#include <string>
#include <vector>

#include "bisplat/common.hpp"

namespace bisplat {

enum class ConfigSource : uint8_t { fallback = 0, file = 1, env = 2, flag = 3 };

class RunConfig {
 public:
  RunConfig();

  // Parses a flat key=value file ('#' comments allowed).
  void load_file(const std::string& path);
  // Applies BISPLAT_<KEY> variables ('.' maps to '_', uppercased).
  void load_env();
  // Flag-level override; wins over everything.
  void set_flag(const std::string& key, const std::string& value);

  bool is_set(const std::string& key) const;  // set beyond the default?
  ConfigSource source(const std::string& key) const;

  std::string get_string(const std::string& key) const;
  int64_t get_int(const std::string& key) const;
  double get_double(const std::string& key) const;
  bool get_bool(const std::string& key) const;

  // env var name a key maps to, e.g. "train.steps" -> "BISPLAT_TRAIN_STEPS"
  static std::string env_name(const std::string& key);

  std::vector<std::string> keys() const;
  std::string describe(const std::string& key) const;

 private:
  struct Entry {
    std::string value;
    std::string description;
    ConfigSource source = ConfigSource::fallback;
  };
  void set(const std::string& key, const std::string& value, ConfigSource src);
  const Entry& entry(const std::string& key) const;

  std::map<std::string, Entry> entries_;
};

}  // namespace bisplat
