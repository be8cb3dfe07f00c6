#pragma once

#include <cstdint>
#include <map>
#include <stdexcept>
#include <string>
#include <vector>

#include "eformer/encoder.hpp"
#include "eformer/param_store.hpp"
#include "eformer/predictor.hpp"
#include "eformer/scd_block.hpp"

namespace eformer {

using KeyValues = std::map<std::string, std::string>;

struct ModelConfig {
  encoder::EncoderConfig encoder;
  decoder::BlockConfig decoder;
  int hr_level = 8;
  int lr_level = 16;
  // Training resolution; EFormer sizes the PE grid to (res_h / 8, res_w / 8).
  std::size_t res_h = 64;
  std::size_t res_w = 64;
  Activation head_activation = Activation::Relu;

  void validate() const;
  // Reduced decoder (C=64, M=8, 2 blocks) at 64x64 for single-core runs.
  static ModelConfig desk();
  // Flat "model.*" keys; round-trips through from_kv exactly.
  KeyValues to_kv() const;
  static ModelConfig from_kv(const KeyValues& kv);
  // Applies recognised "model.*" keys onto this config; throws on bad values.
  void apply(const KeyValues& kv);
  static std::vector<std::string> keys();
};

// Raised when a stored parameter set does not fit a configuration.
struct ArchitectureMismatch : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct ForwardTrace {
  encoder::FeaturePyramid pyramid;
  decoder::EmbeddingPair pair;
  decoder::BlockOutput output;
  std::vector<decoder::BlockTaps> taps;
  Tensor fused;
};

class EFormer {
 public:
  EFormer(const ModelConfig& cfg, std::uint64_t seed);
  // Adopts `params`; throws ArchitectureMismatch naming the first missing,
  // extra or mis-shaped tensor.
  EFormer(const ModelConfig& cfg, ParamStore params);

  // image [B, 3, H, W], H and W multiples of 16.
  predictor::MattePrediction forward(const Tensor& image, ForwardTrace* trace = nullptr) const;

  static decoder::TokenGrid token_grid(std::size_t h, std::size_t w) { return {h / 8, w / 8}; }

  const ModelConfig& config() const { return cfg_; }
  ParamStore& params() { return params_; }
  const ParamStore& params() const { return params_; }

  // Deterministic architecture summary with per-block CA/SA/CEEB/SEB flags.
  std::string summary() const;

 private:
  static ParamStore build_params(const ModelConfig& cfg, std::uint64_t seed);

  ModelConfig cfg_;
  ParamStore params_;
};

}  // namespace eformer
