#pragma once

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <map>
#include <string>
#include <vector>

#include "transukan/model.hpp"
#include "transukan/profiler.hpp"
#include "transukan/train.hpp"

namespace tukan {

using KeyValues = std::map<std::string, std::string>;

/// Flat `key = value` lines; '#' starts a comment, blank lines are skipped.
/// Throws ConfigError (with source and line) on a malformed line or a
/// duplicate key.
KeyValues parse_key_values(std::istream& in, const std::string& source);
KeyValues read_config_file(const std::filesystem::path& path);

struct KeySpec {
  std::string key;
  std::string default_value;
  std::string help;
};

/// Every key understood by config files and `--key value` flags.
const std::vector<KeySpec>& config_schema();

/// Effective settings with precedence flag > file > TRANSUKAN_SEED
/// (seed only) > built-in default.
class RunConfig {
 public:
  RunConfig();

  /// Throws ConfigError on a key outside the schema.
  void apply_file(const KeyValues& kv);
  void apply_flags(const KeyValues& kv);
  void apply_env_seed(const char* value);

  const std::string& get(const std::string& key) const;
  std::string source(const std::string& key) const;
  double get_double(const std::string& key) const;
  std::size_t get_size(const std::string& key) const;
  std::uint64_t get_u64(const std::string& key) const;
  bool get_bool(const std::string& key) const;

  /// One `key = value  [source]` line per key.
  void echo(std::ostream& out, const std::vector<std::string>& keys) const;

 private:
  struct Entry {
    std::string value;
    int rank = 0;  // 0 default, 1 env, 2 file, 3 flag
  };
  void set(const std::string& key, const std::string& value, int rank);
  std::map<std::string, Entry> values_;
};

ModelConfig model_config_from(const RunConfig& rc);
TrainConfig train_config_from(const RunConfig& rc);
ArchConfig arch_config_from(const RunConfig& rc);

}  // namespace tukan
