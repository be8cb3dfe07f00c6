#include <string>

#include "eformer/data.hpp"

namespace eformer::data {

namespace {

void require_unit_range(const Tensor& t, const char* name) {
  const auto d = t.data();
  for (std::size_t i = 0; i < d.size(); ++i) {
    if (!(d[i] >= 0.0 && d[i] <= 1.0)) {
      throw InputError(std::string(name) + " value " + std::to_string(d[i]) + " at flat index " + std::to_string(i) +
                       " is outside [0, 1]");
    }
  }
}

}  // namespace

Tensor composite(const Tensor& fg, const Tensor& alpha, const Tensor& bg) {
  if (fg.dim() != 3 || fg.shape()[0] != 3 || fg.shape() != bg.shape()) {
    throw InputError("composite expects fg and bg [3, H, W], got " + shape_str(fg.shape()) + " and " +
                     shape_str(bg.shape()));
  }
  if (alpha.dim() != 3 || alpha.shape()[0] != 1 || alpha.shape()[1] != fg.shape()[1] ||
      alpha.shape()[2] != fg.shape()[2]) {
    throw InputError("composite alpha " + shape_str(alpha.shape()) + " does not match fg " + shape_str(fg.shape()));
  }
  require_unit_range(fg, "foreground");
  require_unit_range(alpha, "alpha");
  require_unit_range(bg, "background");

  const std::size_t hw = alpha.numel();
  const auto f = fg.data();
  const auto a = alpha.data();
  const auto b = bg.data();
  std::vector<double> out(3 * hw);
  for (std::size_t c = 0; c < 3; ++c) {
    for (std::size_t i = 0; i < hw; ++i) {
      out[c * hw + i] = a[i] * f[c * hw + i] + (1.0 - a[i]) * b[c * hw + i];
    }
  }
  return Tensor::from(fg.shape(), std::move(out));
}

Tensor hflip(const Tensor& t) {
  if (t.dim() == 0) return t.clone();
  const std::size_t w = t.shape().back();
  const std::size_t rows = w == 0 ? 0 : t.numel() / w;
  const auto d = t.data();
  std::vector<double> out(d.size());
  for (std::size_t r = 0; r < rows; ++r) {
    for (std::size_t c = 0; c < w; ++c) out[r * w + c] = d[r * w + (w - 1 - c)];
  }
  return Tensor::from(t.shape(), std::move(out));
}

Sample hflip(const Sample& s) {
  Sample out{hflip(s.image), hflip(s.alpha_gt), s.meta};
  out.meta.flipped = !s.meta.flipped;
  return out;
}

Tensor resize_image(const Tensor& img, std::size_t h, std::size_t w) {
  if (img.dim() != 3) throw InputError("resize_image expects [C, H, W], got " + shape_str(img.shape()));
  if (img.shape()[1] == h && img.shape()[2] == w) return img;
  NoGradGuard guard;
  const Tensor batched = reshape(img, {1, img.shape()[0], img.shape()[1], img.shape()[2]});
  return reshape(bilinear_resize(batched, h, w, false), {img.shape()[0], h, w});
}

Tensor stack(const std::vector<Tensor>& items) {
  if (items.empty()) throw InputError("stack of zero tensors");
  Shape shape = items.front().shape();
  std::vector<double> values;
  values.reserve(items.size() * items.front().numel());
  for (const Tensor& t : items) {
    if (t.shape() != shape) throw InputError("stack shape mismatch: " + shape_str(t.shape()) + " vs " + shape_str(shape));
    values.insert(values.end(), t.data().begin(), t.data().end());
  }
  shape.insert(shape.begin(), items.size());
  return Tensor::from(shape, std::move(values));
}

}  // namespace eformer::data
