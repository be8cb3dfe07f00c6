#include <algorithm>
#include <cmath>

#include "eformer/simd/kernels.hpp"
#include "tensor_impl.hpp"

namespace eformer {

using detail::grad_of;
using detail::make_result;
using detail::needs_grad;
using detail::require;

Tensor matmul(const Tensor& a, const Tensor& b) {
  require(a.dim() >= 2 && b.dim() >= 2,
          "matmul needs rank >= 2 operands, got " + shape_str(a.shape()) + " x " + shape_str(b.shape()));
  const std::size_t m = a.shape()[a.dim() - 2];
  const std::size_t k = a.shape()[a.dim() - 1];
  const std::size_t kb = b.shape()[b.dim() - 2];
  const std::size_t n = b.shape()[b.dim() - 1];
  if (k != kb) {
    throw ShapeError("matmul inner extents disagree: " + shape_str(a.shape()) + " x " + shape_str(b.shape()));
  }
  const Shape a_batch(a.shape().begin(), a.shape().end() - 2);
  const Shape b_batch(b.shape().begin(), b.shape().end() - 2);
  Shape batch;
  try {
    batch = detail::broadcast_shapes(a_batch, b_batch);
  } catch (const ShapeError&) {
    throw ShapeError("matmul batch extents not broadcastable: " + shape_str(a.shape()) + " x " +
                     shape_str(b.shape()));
  }
  std::vector<std::size_t> amap{0};
  std::vector<std::size_t> bmap{0};
  if (!batch.empty()) {
    amap = detail::broadcast_map(batch, a_batch.empty() ? Shape{1} : a_batch);
    bmap = detail::broadcast_map(batch, b_batch.empty() ? Shape{1} : b_batch);
  }
  Shape out_shape = batch;
  out_shape.push_back(m);
  out_shape.push_back(n);
  const std::size_t nb = amap.size();
  std::vector<double> out(nb * m * n);
  const double* pa = a.data().data();
  const double* pb = b.data().data();
  for (std::size_t i = 0; i < nb; ++i) {
    simd::gemm(false, false, m, n, k, pa + amap[i] * m * k, pb + bmap[i] * k * n, out.data() + i * m * n, false);
  }
  return make_result(out_shape, std::move(out), {a, b}, [a, b, amap, bmap, m, n, k](TensorImpl& self) {
    const double* go = self.grad.data();
    for (std::size_t i = 0; i < amap.size(); ++i) {
      if (needs_grad(a)) {
        simd::gemm(false, true, m, k, n, go + i * m * n, b.data().data() + bmap[i] * k * n,
                   grad_of(a).data() + amap[i] * m * k, true);
      }
      if (needs_grad(b)) {
        simd::gemm(true, false, k, n, m, a.data().data() + amap[i] * m * k, go + i * m * n,
                   grad_of(b).data() + bmap[i] * k * n, true);
      }
    }
  });
}

Tensor linear(const Tensor& x, const Tensor& weight, const Tensor& bias) {
  require(weight.dim() == 2, "linear weight must be rank 2, got " + shape_str(weight.shape()));
  const std::size_t in = weight.shape()[0];
  const std::size_t outc = weight.shape()[1];
  require(x.shape().back() == in,
          "linear input " + shape_str(x.shape()) + " does not match weight " + shape_str(weight.shape()));
  const std::size_t rows = x.numel() / in;
  Tensor y = matmul(reshape(x, {rows, in}), weight);
  if (bias.defined()) {
    require(bias.shape() == Shape{outc}, "linear bias shape " + shape_str(bias.shape()));
    y = add(y, bias);
  }
  Shape out_shape = x.shape();
  out_shape.back() = outc;
  return reshape(y, out_shape);
}

Tensor softmax(const Tensor& x, std::size_t axis) {
  require(axis < x.dim(), "softmax axis out of range for " + shape_str(x.shape()));
  std::size_t outer = 1;
  for (std::size_t ax = 0; ax < axis; ++ax) outer *= x.shape()[ax];
  const std::size_t len = x.shape()[axis];
  std::size_t inner = 1;
  for (std::size_t ax = axis + 1; ax < x.dim(); ++ax) inner *= x.shape()[ax];

  const auto in = x.data();
  std::vector<double> out(in.size());
  for (std::size_t o = 0; o < outer; ++o) {
    for (std::size_t i = 0; i < inner; ++i) {
      const std::size_t base = o * len * inner + i;
      double mx = in[base];
      for (std::size_t l = 1; l < len; ++l) mx = std::max(mx, in[base + l * inner]);
      double s = 0.0;
      for (std::size_t l = 0; l < len; ++l) {
        const double e = std::exp(in[base + l * inner] - mx);
        out[base + l * inner] = e;
        s += e;
      }
      const double inv = 1.0 / s;
      for (std::size_t l = 0; l < len; ++l) out[base + l * inner] *= inv;
    }
  }
  return make_result(x.shape(), std::move(out), {x}, [x, outer, len, inner](TensorImpl& self) {
    auto& g = grad_of(x);
    const auto& y = self.data;
    const auto& gy = self.grad;
    for (std::size_t o = 0; o < outer; ++o) {
      for (std::size_t i = 0; i < inner; ++i) {
        const std::size_t base = o * len * inner + i;
        double dot = 0.0;
        for (std::size_t l = 0; l < len; ++l) dot += gy[base + l * inner] * y[base + l * inner];
        for (std::size_t l = 0; l < len; ++l) {
          const std::size_t idx = base + l * inner;
          g[idx] += y[idx] * (gy[idx] - dot);
        }
      }
    }
  });
}

Tensor normalize_last(const Tensor& x, double eps) {
  const std::size_t width = x.shape().back();
  const std::size_t rows = x.numel() / width;
  const auto in = x.data();
  std::vector<double> out(in.size());
  std::vector<double> inv_std(rows);
  for (std::size_t r = 0; r < rows; ++r) {
    const double* row = in.data() + r * width;
    double mu = 0.0;
    for (std::size_t c = 0; c < width; ++c) mu += row[c];
    mu /= static_cast<double>(width);
    double var = 0.0;
    for (std::size_t c = 0; c < width; ++c) var += (row[c] - mu) * (row[c] - mu);
    var /= static_cast<double>(width);
    const double inv = 1.0 / std::sqrt(var + eps);
    inv_std[r] = inv;
    for (std::size_t c = 0; c < width; ++c) out[r * width + c] = (row[c] - mu) * inv;
  }
  return make_result(x.shape(), std::move(out), {x}, [x, rows, width, inv_std = std::move(inv_std)](TensorImpl& self) {
    auto& g = grad_of(x);
    const double inv_w = 1.0 / static_cast<double>(width);
    for (std::size_t r = 0; r < rows; ++r) {
      const double* y = self.data.data() + r * width;
      const double* gy = self.grad.data() + r * width;
      double mean_g = 0.0;
      double mean_gy = 0.0;
      for (std::size_t c = 0; c < width; ++c) {
        mean_g += gy[c];
        mean_gy += gy[c] * y[c];
      }
      mean_g *= inv_w;
      mean_gy *= inv_w;
      for (std::size_t c = 0; c < width; ++c) {
        g[r * width + c] += inv_std[r] * (gy[c] - mean_g - y[c] * mean_gy);
      }
    }
  });
}

Tensor layer_norm(const Tensor& x, const Tensor& gamma, const Tensor& beta, double eps) {
  const std::size_t c = x.shape().back();
  if (gamma.shape() != Shape{c} || beta.shape() != Shape{c}) {
    throw ShapeError("layer_norm channel mismatch: input " + shape_str(x.shape()) + ", gamma " +
                     shape_str(gamma.shape()) + ", beta " + shape_str(beta.shape()));
  }
  return add(mul(normalize_last(x, eps), gamma), beta);
}

Tensor group_norm(const Tensor& x, std::size_t groups, const Tensor& gamma, const Tensor& beta, double eps) {
  require(x.dim() >= 2, "group_norm needs [B, C, ...], got " + shape_str(x.shape()));
  const std::size_t batch = x.shape()[0];
  const std::size_t channels = x.shape()[1];
  require(groups >= 1 && channels % groups == 0,
          "group_norm: " + std::to_string(channels) + " channels not divisible into " + std::to_string(groups) + " groups");
  if (gamma.shape() != Shape{channels} || beta.shape() != Shape{channels}) {
    throw ShapeError("group_norm affine shape mismatch for " + shape_str(x.shape()));
  }
  Tensor y = reshape(x, {batch, groups, x.numel() / (batch * groups)});
  y = reshape(normalize_last(y, eps), x.shape());
  Shape affine(x.dim() - 1, 1);
  affine[0] = channels;
  return add(mul(y, reshape(gamma, affine)), reshape(beta, affine));
}

}  // namespace eformer
