#pragma once

// Layered plain-text configuration.
//
//   # comment
//   [model]
//   channels = 64
//   [train]
//   lr0 = 1e-3
//
// Keys inside a section are prefixed with the section name ("model.channels").
// Layers are merged left to right, later values winning.

#include <filesystem>
#include <stdexcept>
#include <string>
#include <vector>

#include "eformer/model.hpp"
#include "eformer/train.hpp"

namespace eformer::config {

struct ConfigError : std::invalid_argument {
  using std::invalid_argument::invalid_argument;
};

KeyValues parse(const std::string& text);
KeyValues load(const std::filesystem::path& path);
// Sectioned text that parse() maps back to the same KeyValues.
std::string format(const KeyValues& kv);
KeyValues merge(const std::vector<KeyValues>& layers);

// Shortest decimal that round-trips the double.
std::string format_double(double v);
double parse_double(const std::string& key, const std::string& v);
std::size_t parse_size(const std::string& key, const std::string& v);
bool parse_bool(const std::string& key, const std::string& v);

struct DataConfig {
  std::string manifest;        // empty selects synthetic data
  std::size_t synthetic = 8;   // training samples in synthetic mode
  std::size_t eval_synthetic = 0;  // 0 evaluates on the training samples
  std::uint64_t synth_seed = 7;

  KeyValues to_kv() const;
  void apply(const KeyValues& kv);
  static std::vector<std::string> keys();
};

struct RunConfig {
  ModelConfig model = ModelConfig::desk();
  train::TrainConfig train;
  DataConfig data;

  // Throws ConfigError on keys outside model.*, train.*, data.* or values
  // that fail to parse.
  static RunConfig resolve(const std::vector<KeyValues>& layers);
  KeyValues to_kv() const;
  std::string to_text() const { return format(to_kv()); }
};

std::vector<std::string> known_keys();

}  // namespace eformer::config
