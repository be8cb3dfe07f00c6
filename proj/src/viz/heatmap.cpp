#include "eformer/visualize.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <sstream>
#include <stdexcept>

namespace eformer::viz {

Tap parse_tap(const std::string& name) {
  std::string n = name;
  std::transform(n.begin(), n.end(), n.begin(), [](unsigned char c) { return std::tolower(c); });
  if (n == "ca") return Tap::CrossAttention;
  if (n == "sa") return Tap::SelfAttention;
  if (n == "ceeb") return Tap::ContourBranch;
  if (n == "seb") return Tap::SemanticBranch;
  if (n == "detector") return Tap::Detector;
  throw std::invalid_argument("unknown tap '" + name + "' (expected CA, SA, CEEB, SEB or detector)");
}

std::string tap_name(Tap t) {
  switch (t) {
    case Tap::CrossAttention: return "CA";
    case Tap::SelfAttention: return "SA";
    case Tap::ContourBranch: return "CEEB";
    case Tap::SemanticBranch: return "SEB";
    case Tap::Detector: return "detector";
  }
  return "CA";
}

std::vector<Tap> parse_taps(const std::string& comma_list) {
  std::vector<Tap> out;
  std::stringstream ss(comma_list);
  std::string item;
  while (std::getline(ss, item, ',')) {
    if (!item.empty()) out.push_back(parse_tap(item));
  }
  if (out.empty()) throw std::invalid_argument("no taps requested");
  return out;
}

Tensor tap_tokens(const decoder::BlockTaps& taps, Tap tap) {
  switch (tap) {
    case Tap::CrossAttention: return taps.contour_edge;
    case Tap::SelfAttention: return taps.sa_attended;
    case Tap::ContourBranch: return taps.contour;
    case Tap::SemanticBranch: return taps.semantic;
    case Tap::Detector: return taps.detector;
  }
  return {};
}

std::vector<double> activation_energy(const Tensor& tokens, std::size_t b) {
  if (tokens.dim() != 3 || b >= tokens.shape()[1]) {
    throw ShapeError("activation_energy expects [N, B, C], got " + shape_str(tokens.shape()));
  }
  const std::size_t n = tokens.shape()[0], bs = tokens.shape()[1], c = tokens.shape()[2];
  const auto d = tokens.data();
  std::vector<double> out(n, 0.0);
  for (std::size_t i = 0; i < n; ++i) {
    double acc = 0.0;
    for (std::size_t k = 0; k < c; ++k) acc += std::abs(d[(i * bs + b) * c + k]);
    out[i] = acc / static_cast<double>(c);
  }
  return out;
}

std::vector<double> min_max_normalize(const std::vector<double>& v) {
  if (v.empty()) return v;
  const auto [lo, hi] = std::minmax_element(v.begin(), v.end());
  const double range = *hi - *lo;
  std::vector<double> out(v.size(), 0.0);
  if (!(range > 0.0)) return out;
  for (std::size_t i = 0; i < v.size(); ++i) out[i] = std::clamp((v[i] - *lo) / range, 0.0, 1.0);
  return out;
}

Tensor heatmap(const std::vector<double>& token_scores, decoder::TokenGrid grid, std::size_t h, std::size_t w) {
  if (token_scores.size() != grid.tokens()) {
    throw ShapeError("heatmap got " + std::to_string(token_scores.size()) + " scores for a " + std::to_string(grid.h) +
                     "x" + std::to_string(grid.w) + " grid");
  }
  NoGradGuard guard;
  const Tensor small = Tensor::from({1, 1, grid.h, grid.w}, min_max_normalize(token_scores));
  const Tensor up = bilinear_resize(small, h, w, false);
  std::vector<double> v(up.data().begin(), up.data().end());
  for (auto& x : v) x = std::clamp(x, 0.0, 1.0);
  return Tensor::from({1, h, w}, std::move(v));
}

Tensor overlay(const Tensor& image, const Tensor& heat) {
  if (image.dim() != 3 || image.shape()[0] != 3 || heat.dim() != 3 || heat.shape()[1] != image.shape()[1] ||
      heat.shape()[2] != image.shape()[2]) {
    throw ShapeError("overlay expects [3,H,W] and [1,H,W], got " + shape_str(image.shape()) + " and " +
                     shape_str(heat.shape()));
  }
  const std::size_t hw = heat.numel();
  const auto im = image.data();
  const auto ht = heat.data();
  std::vector<double> out(3 * hw);
  for (std::size_t i = 0; i < hw; ++i) {
    const double t = ht[i];
    const double ramp[3] = {std::clamp(1.5 - std::abs(4.0 * t - 3.0), 0.0, 1.0),
                            std::clamp(1.5 - std::abs(4.0 * t - 2.0), 0.0, 1.0),
                            std::clamp(1.5 - std::abs(4.0 * t - 1.0), 0.0, 1.0)};
    for (std::size_t c = 0; c < 3; ++c) out[c * hw + i] = 0.55 * im[c * hw + i] + 0.45 * ramp[c];
  }
  return Tensor::from(image.shape(), std::move(out));
}

std::vector<HeatmapResult> compute_heatmaps(const EFormer& model, const Tensor& image, const std::vector<Tap>& taps,
                                            std::size_t block, const std::optional<Box>& gradcam_box) {
  if (image.dim() != 4 || image.shape()[0] != 1 || image.shape()[1] != 3) {
    throw ShapeError("visualization expects one [1, 3, H, W] image, got " + shape_str(image.shape()));
  }
  if (block >= model.config().decoder.blocks) {
    throw std::invalid_argument("block index " + std::to_string(block) + " >= block count " +
                                std::to_string(model.config().decoder.blocks));
  }
  const std::size_t h = image.shape()[2], w = image.shape()[3];
  const decoder::TokenGrid grid = EFormer::token_grid(h, w);

  ForwardTrace trace;
  predictor::MattePrediction pred;
  if (gradcam_box) {
    const Box& bx = *gradcam_box;
    if (bx.y0 >= bx.y1 || bx.x0 >= bx.x1 || bx.y1 > h || bx.x1 > w) {
      throw std::invalid_argument("grad-cam box is empty or outside the image");
    }
    pred = model.forward(image, &trace);
    const Tensor region = narrow(narrow(pred.matte, 2, bx.y0, bx.y1 - bx.y0), 3, bx.x0, bx.x1 - bx.x0);
    mean(region).backward();
  } else {
    NoGradGuard guard;
    pred = model.forward(image, &trace);
  }
  const Tensor img3 = reshape(image.detach(), {3, h, w});

  std::vector<HeatmapResult> out;
  for (Tap tap : taps) {
    HeatmapResult r{tap, block, false, {}, {}};
    const Tensor tokens = tap_tokens(trace.taps[block], tap);
    if (tokens.defined()) {
      std::vector<double> scores;
      if (gradcam_box && tokens.has_grad()) {
        const std::size_t n = tokens.shape()[0], c = tokens.shape()[2];
        const auto a = tokens.data();
        const auto g = tokens.grad();
        std::vector<double> weight(c, 0.0);
        for (std::size_t i = 0; i < n; ++i) {
          for (std::size_t k = 0; k < c; ++k) weight[k] += g[i * c + k] / static_cast<double>(n);
        }
        scores.assign(n, 0.0);
        for (std::size_t i = 0; i < n; ++i) {
          double acc = 0.0;
          for (std::size_t k = 0; k < c; ++k) acc += weight[k] * a[i * c + k];
          scores[i] = std::max(acc, 0.0);
        }
      } else {
        scores = activation_energy(tokens);
      }
      r.available = true;
      r.heat = heatmap(scores, grid, h, w);
      r.overlay = overlay(img3, r.heat);
    }
    out.push_back(std::move(r));
  }
  return out;
}

}  // namespace eformer::viz
