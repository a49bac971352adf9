#include "transukan/config.hpp"

#include <algorithm>
#include <cctype>
#include <charconv>
#include <fstream>
#include <istream>
#include <ostream>

#include "transukan/error.hpp"

namespace tukan {

namespace {

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return "";
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

bool valid_key(const std::string& k) {
  return !k.empty() && std::all_of(k.begin(), k.end(), [](char c) {
    return std::islower(static_cast<unsigned char>(c)) || std::isdigit(static_cast<unsigned char>(c)) || c == '_';
  });
}

const char* kRankNames[] = {"default", "env", "file", "flag"};

BlockOrder block_order_from(const RunConfig& rc) {
  const std::string& order = rc.get("block_order");
  if (order == "as-written") return BlockOrder::kAsWritten;
  if (order == "pre-norm") return BlockOrder::kPreNorm;
  throw ConfigError("config key 'block_order': expected as-written or pre-norm, got '" + order + "'");
}

}  // namespace

KeyValues parse_key_values(std::istream& in, const std::string& source) {
  KeyValues kv;
  std::string line;
  for (std::size_t lineno = 1; std::getline(in, line); ++lineno) {
    const auto hash = line.find('#');
    if (hash != std::string::npos) line.erase(hash);
    line = trim(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    const std::string where = source + ":" + std::to_string(lineno);
    if (eq == std::string::npos) throw ConfigError(where + ": expected key = value");
    const std::string key = trim(line.substr(0, eq)), value = trim(line.substr(eq + 1));
    if (!valid_key(key)) throw ConfigError(where + ": bad key '" + key + "'");
    if (value.empty()) throw ConfigError(where + ": empty value for '" + key + "'");
    if (!kv.emplace(key, value).second) throw ConfigError(where + ": duplicate key '" + key + "'");
  }
  return kv;
}

KeyValues read_config_file(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError(path.string() + ": cannot open config file");
  return parse_key_values(in, path.string());
}

const std::vector<KeySpec>& config_schema() {
  static const std::vector<KeySpec> schema = {
      {"seed", "0", "seed for initialization, shuffling, augmentation and synthesis"},
      // model
      {"in_channels", "1", "image channels"},
      {"n_classes", "2", "segmentation classes including background"},
      {"image_size", "64", "square input side, multiple of 8"},
      {"d_model", "64", "token width"},
      {"depth", "4", "transformer blocks"},
      {"heads", "4", "attention heads"},
      {"grid_size", "5", "KAN grid intervals G"},
      {"order", "3", "KAN basis order K"},
      {"range_lo", "-1", "lower end of the KAN grid"},
      {"range_hi", "1", "upper end of the KAN grid"},
      {"block_order", "as-written", "as-written or pre-norm"},
      // training
      {"lr", "1e-4", "peak learning rate"},
      {"epochs", "200", "training epochs"},
      {"warmup_epochs", "10", "linear warmup epochs"},
      {"batch_size", "8", "samples per step"},
      {"w_ce", "0.5", "cross-entropy weight"},
      {"w_dice", "0.5", "dice weight (binary tasks)"},
      {"weight_decay", "1e-4", "decoupled weight decay"},
      {"augment", "true", "random flips and quarter turns"},
      // data
      {"dataset", "", "dataset directory (images/ and masks/); empty for synthetic data"},
      {"synth_task", "binary-blob", "binary-blob or two-class-shapes"},
      {"synth_samples", "200", "synthetic dataset size"},
      // outputs
      {"history", "history.csv", "per-epoch history file"},
      {"checkpoint", "model.tukn", "final checkpoint file"},
      // profiler
      {"tokens", "64", "tokens per sequence for the profiler"},
      {"profile_batch", "8", "batch size for the profiler"},
      {"mlp_ratio", "4", "hidden expansion of the MLP baseline"},
  };
  return schema;
}

RunConfig::RunConfig() {
  for (const KeySpec& k : config_schema()) values_[k.key] = {k.default_value, 0};
}

void RunConfig::set(const std::string& key, const std::string& value, int rank) {
  auto it = values_.find(key);
  if (it == values_.end()) throw ConfigError("unknown config key '" + key + "'");
  if (rank >= it->second.rank) it->second = {value, rank};
}

void RunConfig::apply_file(const KeyValues& kv) {
  for (const auto& [k, v] : kv) set(k, v, 2);
}

void RunConfig::apply_flags(const KeyValues& kv) {
  for (const auto& [k, v] : kv) set(k, v, 3);
}

void RunConfig::apply_env_seed(const char* value) {
  if (value && *value) set("seed", value, 1);
}

const std::string& RunConfig::get(const std::string& key) const {
  auto it = values_.find(key);
  if (it == values_.end()) throw ConfigError("unknown config key '" + key + "'");
  return it->second.value;
}

std::string RunConfig::source(const std::string& key) const {
  get(key);
  return kRankNames[values_.at(key).rank];
}

double RunConfig::get_double(const std::string& key) const {
  const std::string& v = get(key);
  try {
    std::size_t used = 0;
    const double d = std::stod(v, &used);
    if (used == v.size()) return d;
  } catch (const std::exception&) {
  }
  throw ConfigError("config key '" + key + "': '" + v + "' is not a number");
}

std::uint64_t RunConfig::get_u64(const std::string& key) const {
  const std::string& v = get(key);
  std::uint64_t out = 0;
  const auto [ptr, ec] = std::from_chars(v.data(), v.data() + v.size(), out);
  if (ec != std::errc() || ptr != v.data() + v.size()) {
    throw ConfigError("config key '" + key + "': '" + v + "' is not a non-negative integer");
  }
  return out;
}

std::size_t RunConfig::get_size(const std::string& key) const { return static_cast<std::size_t>(get_u64(key)); }

bool RunConfig::get_bool(const std::string& key) const {
  const std::string& v = get(key);
  if (v == "true" || v == "1" || v == "yes") return true;
  if (v == "false" || v == "0" || v == "no") return false;
  throw ConfigError("config key '" + key + "': '" + v + "' is not a boolean");
}

void RunConfig::echo(std::ostream& out, const std::vector<std::string>& keys) const {
  for (const std::string& k : keys) out << k << " = " << get(k) << "  [" << source(k) << "]\n";
}

ModelConfig model_config_from(const RunConfig& rc) {
  ModelConfig c;
  c.in_channels = rc.get_size("in_channels");
  c.n_classes = rc.get_size("n_classes");
  c.image_height = c.image_width = rc.get_size("image_size");
  c.d_model = rc.get_size("d_model");
  c.depth = rc.get_size("depth");
  c.n_heads = rc.get_size("heads");
  c.grid = KanGrid::make(rc.get_size("grid_size"), rc.get_size("order"), rc.get_double("range_lo"),
                         rc.get_double("range_hi"));
  c.block_order = block_order_from(rc);
  c.validate();
  return c;
}

TrainConfig train_config_from(const RunConfig& rc) {
  TrainConfig t;
  t.lr_base = rc.get_double("lr");
  t.epochs = rc.get_size("epochs");
  t.warmup_epochs = rc.get_size("warmup_epochs");
  t.batch_size = rc.get_size("batch_size");
  t.loss.ce = rc.get_double("w_ce");
  t.loss.dice = rc.get_double("w_dice");
  t.adam.weight_decay = rc.get_double("weight_decay");
  t.seed = rc.get_u64("seed");
  t.n_classes = rc.get_size("n_classes");
  t.augment = rc.get_bool("augment");
  t.validate();
  return t;
}

ArchConfig arch_config_from(const RunConfig& rc) {
  ArchConfig a;
  a.d_model = rc.get_size("d_model");
  a.depth = rc.get_size("depth");
  a.n_heads = rc.get_size("heads");
  a.n_tokens = rc.get_size("tokens");
  a.batch = rc.get_size("profile_batch");
  a.grid_size = rc.get_size("grid_size");
  a.order = rc.get_size("order");
  a.mlp_ratio = rc.get_size("mlp_ratio");
  a.block_order = block_order_from(rc);
  a.validate();
  return a;
}

}  // namespace tukan
