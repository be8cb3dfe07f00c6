#pragma once

// Token-activation heatmaps for decoder taps.

#include <array>
#include <optional>
#include <string>
#include <vector>

#include "eformer/model.hpp"

namespace eformer::viz {

enum class Tap { CrossAttention, SelfAttention, ContourBranch, SemanticBranch, Detector };

// "CA", "SA", "CEEB", "SEB", "detector" (case-insensitive).
Tap parse_tap(const std::string& name);
std::string tap_name(Tap t);
std::vector<Tap> parse_taps(const std::string& comma_list);

// Token activations [N, B, C] recorded for `tap`, undefined when the block
// has no such stage (e.g. SA in a CA-only model).
Tensor tap_tokens(const decoder::BlockTaps& taps, Tap tap);

// Per-token score [h*w]: channel-mean |activation| of batch item `b`.
std::vector<double> activation_energy(const Tensor& tokens, std::size_t b = 0);

// Min-max normalization into [0, 1]; a constant input maps to all zeros.
std::vector<double> min_max_normalize(const std::vector<double>& v);

// Normalized per-token scores on the grid, bilinearly upsampled to
// [1, H, W]; values stay in [0, 1].
Tensor heatmap(const std::vector<double>& token_scores, decoder::TokenGrid grid, std::size_t h, std::size_t w);

// 0.55 * image + 0.45 * color-ramp(heat): [3, H, W].
Tensor overlay(const Tensor& image, const Tensor& heat);

struct Box {
  std::size_t y0 = 0, x0 = 0, y1 = 0, x1 = 0;  // half-open
};

struct HeatmapResult {
  Tap tap;
  std::size_t block = 0;
  bool available = false;
  Tensor heat;     // [1, H, W] in [0, 1]
  Tensor overlay;  // [3, H, W]
};

// image [1, 3, H, W]. With `gradcam_box`, channel weights are the token-mean
// gradient of the box-mean matte and the score is relu(sum_c w_c a_c);
// otherwise the score is the activation energy.
std::vector<HeatmapResult> compute_heatmaps(const EFormer& model, const Tensor& image, const std::vector<Tap>& taps,
                                            std::size_t block, const std::optional<Box>& gradcam_box = std::nullopt);

}  // namespace eformer::viz
