#include "eformer/encoder.hpp"

namespace eformer::encoder {

namespace {
std::string stage_prefix(std::size_t stage) { return "encoder/stage" + std::to_string(stage + 1) + "/"; }
}  // namespace

const Tensor& FeaturePyramid::level(int level) const {
  switch (level) {
    case 4: return f4;
    case 8: return f8;
    case 16: return f16;
    default: throw std::invalid_argument("pyramid level must be 4, 8 or 16, got " + std::to_string(level));
  }
}

bool valid_level(int level) { return level == 4 || level == 8 || level == 16; }

std::size_t level_channels(const EncoderConfig& cfg, int level) {
  switch (level) {
    case 4: return cfg.channels[1];
    case 8: return cfg.channels[2];
    case 16: return cfg.channels[3];
    default: throw std::invalid_argument("pyramid level must be 4, 8 or 16, got " + std::to_string(level));
  }
}

void init_params(ParamStore& store, const EncoderConfig& cfg, Initializer& init) {
  for (std::size_t i = 1; i < cfg.channels.size(); ++i) {
    if (cfg.channels[i] < cfg.channels[i - 1]) {
      throw std::invalid_argument("encoder channels must be non-decreasing");
    }
  }
  std::size_t in = 3;
  for (std::size_t s = 0; s < cfg.channels.size(); ++s) {
    const std::size_t out = cfg.channels[s];
    if (out % cfg.groups != 0) {
      throw std::invalid_argument("encoder stage " + std::to_string(s + 1) + " channels " + std::to_string(out) +
                                  " not divisible by " + std::to_string(cfg.groups) + " groups");
    }
    const std::string p = stage_prefix(s);
    store.add(p + "conv1/weight", init.he_normal({out, in, 3, 3}, in * 9));
    store.add(p + "conv1/bias", Tensor::zeros({out}));
    store.add(p + "gn/gamma", Tensor::full({out}, 1.0));
    store.add(p + "gn/beta", Tensor::zeros({out}));
    store.add(p + "conv2/weight", init.he_normal({out, out, 3, 3}, out * 9));
    store.add(p + "conv2/bias", Tensor::zeros({out}));
    in = out;
  }
}

FeaturePyramid encode(const ParamStore& store, const EncoderConfig& cfg, const Tensor& image) {
  if (image.dim() != 4 || image.shape()[1] != 3) {
    throw ShapeError("encoder expects [B,3,H,W], got " + shape_str(image.shape()));
  }
  const std::size_t h = image.shape()[2];
  const std::size_t w = image.shape()[3];
  if (h % 16 != 0 || w % 16 != 0) {
    throw ResolutionError("input resolution " + std::to_string(h) + "x" + std::to_string(w) +
                          " is not a multiple of 16");
  }
  FeaturePyramid out;
  Tensor x = image;
  for (std::size_t s = 0; s < cfg.channels.size(); ++s) {
    const std::string p = stage_prefix(s);
    x = conv2d(reflect_pad2d(x, 1), store.get(p + "conv1/weight"), store.get(p + "conv1/bias"), {.stride = 2});
    x = group_norm(x, cfg.groups, store.get(p + "gn/gamma"), store.get(p + "gn/beta"));
    x = activate(x, cfg.activation);
    x = conv2d(reflect_pad2d(x, 1), store.get(p + "conv2/weight"), store.get(p + "conv2/bias"), {.stride = 1});
    x = activate(x, cfg.activation);
    if (s == 1) out.f4 = x;
    if (s == 2) out.f8 = x;
    if (s == 3) out.f16 = x;
  }
  return out;
}

void validate_levels(int hr_level, int lr_level) {
  if (!valid_level(hr_level) || !valid_level(lr_level)) {
    throw std::invalid_argument("levels must be in {4, 8, 16}, got hr=" + std::to_string(hr_level) +
                                " lr=" + std::to_string(lr_level));
  }
  if (hr_level >= lr_level) {
    throw std::invalid_argument("hr level (1/" + std::to_string(hr_level) +
                                ") must be strictly higher resolution than lr level (1/" +
                                std::to_string(lr_level) + ")");
  }
}

LevelPair select_levels(const FeaturePyramid& pyramid, int hr_level, int lr_level) {
  validate_levels(hr_level, lr_level);
  return {pyramid.level(hr_level), pyramid.level(lr_level)};
}

}  // namespace eformer::encoder
