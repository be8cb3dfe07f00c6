#pragma once

// Convolutional backbone producing the 1/4, 1/8, 1/16 feature pyramid.
//
// Four stages, each
//   reflect-pad 1 -> conv3x3 stride 2 -> group norm -> act
//   -> reflect-pad 1 -> conv3x3 stride 1 -> act
// so stage k halves the resolution; stages 2..4 emit f4, f8, f16. Input
// pixels are expected in [0, 1] with no mean/std whitening.

#include <array>
#include <stdexcept>
#include <string>

#include "eformer/param_store.hpp"
#include "eformer/tensor.hpp"

namespace eformer::encoder {

struct ResolutionError : std::invalid_argument {
  using std::invalid_argument::invalid_argument;
};

struct EncoderConfig {
  std::array<std::size_t, 4> channels{16, 32, 64, 128};
  std::size_t groups = 4;
  Activation activation = Activation::Relu;
};

struct FeaturePyramid {
  Tensor f4;
  Tensor f8;
  Tensor f16;

  // level in {4, 8, 16}
  const Tensor& level(int level) const;
};

struct LevelPair {
  Tensor hr;
  Tensor lr;
};

bool valid_level(int level);
// Channel count of pyramid level 4, 8 or 16.
std::size_t level_channels(const EncoderConfig& cfg, int level);

void init_params(ParamStore& store, const EncoderConfig& cfg, Initializer& init);

// image [B, 3, H, W] with H, W multiples of 16.
FeaturePyramid encode(const ParamStore& store, const EncoderConfig& cfg, const Tensor& image);

// hr_level must be strictly shallower (smaller divisor) than lr_level.
LevelPair select_levels(const FeaturePyramid& pyramid, int hr_level, int lr_level);
void validate_levels(int hr_level, int lr_level);

}  // namespace eformer::encoder
