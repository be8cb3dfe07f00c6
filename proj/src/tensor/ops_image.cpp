#include <algorithm>
#include <cmath>

#include "eformer/simd/kernels.hpp"
#include "tensor_impl.hpp"

namespace eformer {

using detail::grad_of;
using detail::make_result;
using detail::needs_grad;
using detail::require;

namespace {

struct ConvGeom {
  std::size_t batch, cin, h, w, cout, kh, kw, stride, pad, oh, ow;
  std::size_t patch() const { return cin * kh * kw; }
  std::size_t pixels() const { return oh * ow; }
};

void im2col(const double* x, const ConvGeom& g, double* cols) {
  const long pad = static_cast<long>(g.pad);
  for (std::size_t c = 0; c < g.cin; ++c) {
    for (std::size_t u = 0; u < g.kh; ++u) {
      for (std::size_t v = 0; v < g.kw; ++v) {
        double* row = cols + ((c * g.kh + u) * g.kw + v) * g.pixels();
        for (std::size_t i = 0; i < g.oh; ++i) {
          const long yi = static_cast<long>(i * g.stride + u) - pad;
          for (std::size_t j = 0; j < g.ow; ++j) {
            const long xj = static_cast<long>(j * g.stride + v) - pad;
            const bool inside = yi >= 0 && yi < static_cast<long>(g.h) && xj >= 0 && xj < static_cast<long>(g.w);
            row[i * g.ow + j] = inside ? x[(c * g.h + yi) * g.w + xj] : 0.0;
          }
        }
      }
    }
  }
}

void col2im_add(const double* cols, const ConvGeom& g, double* dx) {
  const long pad = static_cast<long>(g.pad);
  for (std::size_t c = 0; c < g.cin; ++c) {
    for (std::size_t u = 0; u < g.kh; ++u) {
      for (std::size_t v = 0; v < g.kw; ++v) {
        const double* row = cols + ((c * g.kh + u) * g.kw + v) * g.pixels();
        for (std::size_t i = 0; i < g.oh; ++i) {
          const long yi = static_cast<long>(i * g.stride + u) - pad;
          if (yi < 0 || yi >= static_cast<long>(g.h)) continue;
          for (std::size_t j = 0; j < g.ow; ++j) {
            const long xj = static_cast<long>(j * g.stride + v) - pad;
            if (xj < 0 || xj >= static_cast<long>(g.w)) continue;
            dx[(c * g.h + yi) * g.w + xj] += row[i * g.ow + j];
          }
        }
      }
    }
  }
}

// Source sample positions and weights for one output axis.
struct AxisSampling {
  std::vector<std::size_t> lo, hi;
  std::vector<double> frac;
};

AxisSampling axis_sampling(std::size_t in, std::size_t out, bool align_corners) {
  AxisSampling s;
  s.lo.resize(out);
  s.hi.resize(out);
  s.frac.resize(out);
  for (std::size_t d = 0; d < out; ++d) {
    double src;
    if (align_corners) {
      src = out > 1 ? static_cast<double>(d) * static_cast<double>(in - 1) / static_cast<double>(out - 1) : 0.0;
    } else {
      src = (static_cast<double>(d) + 0.5) * static_cast<double>(in) / static_cast<double>(out) - 0.5;
      if (src < 0.0) src = 0.0;
    }
    std::size_t lo = static_cast<std::size_t>(std::floor(src));
    if (lo > in - 1) lo = in - 1;
    s.lo[d] = lo;
    s.hi[d] = std::min(lo + 1, in - 1);
    s.frac[d] = src - static_cast<double>(lo);
  }
  return s;
}

}  // namespace

Tensor conv2d(const Tensor& x, const Tensor& weight, const Tensor& bias, Conv2dOptions opt) {
  require(x.dim() == 4, "conv2d input must be [B,C,H,W], got " + shape_str(x.shape()));
  require(weight.dim() == 4, "conv2d weight must be [Cout,Cin,kh,kw], got " + shape_str(weight.shape()));
  require(opt.stride >= 1, "conv2d stride must be >= 1");
  ConvGeom g{};
  g.batch = x.shape()[0];
  g.cin = x.shape()[1];
  g.h = x.shape()[2];
  g.w = x.shape()[3];
  g.cout = weight.shape()[0];
  g.kh = weight.shape()[2];
  g.kw = weight.shape()[3];
  g.stride = opt.stride;
  g.pad = opt.padding;
  if (weight.shape()[1] != g.cin) {
    throw ShapeError("conv2d channel mismatch: input " + shape_str(x.shape()) + ", weight " + shape_str(weight.shape()));
  }
  require(g.h + 2 * g.pad >= g.kh && g.w + 2 * g.pad >= g.kw,
          "conv2d kernel " + shape_str(weight.shape()) + " larger than padded input " + shape_str(x.shape()));
  if (bias.defined()) require(bias.shape() == Shape{g.cout}, "conv2d bias shape " + shape_str(bias.shape()));
  g.oh = (g.h + 2 * g.pad - g.kh) / g.stride + 1;
  g.ow = (g.w + 2 * g.pad - g.kw) / g.stride + 1;

  const std::size_t k = g.patch();
  const std::size_t p = g.pixels();
  const bool keep_cols = grad_mode_enabled() && needs_grad(weight);
  std::vector<double> cols(keep_cols ? g.batch * k * p : k * p);
  std::vector<double> out(g.batch * g.cout * p);
  const double* px = x.data().data();
  const double* pw = weight.data().data();
  for (std::size_t b = 0; b < g.batch; ++b) {
    double* cb = cols.data() + (keep_cols ? b * k * p : 0);
    im2col(px + b * g.cin * g.h * g.w, g, cb);
    double* ob = out.data() + b * g.cout * p;
    simd::gemm(false, false, g.cout, p, k, pw, cb, ob, false);
    if (bias.defined()) {
      for (std::size_t o = 0; o < g.cout; ++o) {
        const double bo = bias.data()[o];
        for (std::size_t i = 0; i < p; ++i) ob[o * p + i] += bo;
      }
    }
  }
  Shape out_shape{g.batch, g.cout, g.oh, g.ow};
  if (!keep_cols) cols.clear();
  return make_result(out_shape, std::move(out), {x, weight, bias},
                     [x, weight, bias, g, cols = std::move(cols)](TensorImpl& self) {
                       const std::size_t k = g.patch();
                       const std::size_t p = g.pixels();
                       std::vector<double> dcols;
                       if (needs_grad(x)) dcols.resize(k * p);
                       for (std::size_t b = 0; b < g.batch; ++b) {
                         const double* gy = self.grad.data() + b * g.cout * p;
                         if (needs_grad(weight)) {
                           simd::gemm(false, true, g.cout, k, p, gy, cols.data() + b * k * p, grad_of(weight).data(), true);
                         }
                         if (needs_grad(bias)) {
                           auto& gb = grad_of(bias);
                           for (std::size_t o = 0; o < g.cout; ++o) {
                             double s = 0.0;
                             for (std::size_t i = 0; i < p; ++i) s += gy[o * p + i];
                             gb[o] += s;
                           }
                         }
                         if (needs_grad(x)) {
                           simd::gemm(true, false, k, p, g.cout, weight.data().data(), gy, dcols.data(), false);
                           col2im_add(dcols.data(), g, grad_of(x).data() + b * g.cin * g.h * g.w);
                         }
                       }
                     });
}

Tensor reflect_pad2d(const Tensor& x, std::size_t pad) {
  require(x.dim() == 4, "reflect_pad2d input must be [B,C,H,W], got " + shape_str(x.shape()));
  const std::size_t planes = x.shape()[0] * x.shape()[1];
  const std::size_t h = x.shape()[2];
  const std::size_t w = x.shape()[3];
  if (pad == 0) return x;
  // A single-pixel extent reflects onto itself.
  require((pad < h || h == 1) && (pad < w || w == 1),
          "reflect padding " + std::to_string(pad) + " too large for " + shape_str(x.shape()));
  const std::size_t ph = h + 2 * pad;
  const std::size_t pw = w + 2 * pad;
  auto reflect = [](long i, std::size_t n) {
    const long last = static_cast<long>(n) - 1;
    if (last == 0) return std::size_t{0};
    if (i < 0) i = -i;
    if (i > last) i = 2 * last - i;
    return static_cast<std::size_t>(i);
  };
  // Source flat index per output element.
  std::vector<std::size_t> map(ph * pw);
  for (std::size_t i = 0; i < ph; ++i) {
    const std::size_t si = reflect(static_cast<long>(i) - static_cast<long>(pad), h);
    for (std::size_t j = 0; j < pw; ++j) {
      map[i * pw + j] = si * w + reflect(static_cast<long>(j) - static_cast<long>(pad), w);
    }
  }
  const auto in = x.data();
  std::vector<double> out(planes * ph * pw);
  for (std::size_t pl = 0; pl < planes; ++pl) {
    for (std::size_t i = 0; i < map.size(); ++i) out[pl * ph * pw + i] = in[pl * h * w + map[i]];
  }
  return make_result({x.shape()[0], x.shape()[1], ph, pw}, std::move(out), {x},
                     [x, planes, h, w, ph, pw, map = std::move(map)](TensorImpl& self) {
                       auto& g = grad_of(x);
                       for (std::size_t pl = 0; pl < planes; ++pl) {
                         for (std::size_t i = 0; i < map.size(); ++i) g[pl * h * w + map[i]] += self.grad[pl * ph * pw + i];
                       }
                     });
}

Tensor bilinear_resize(const Tensor& x, std::size_t out_h, std::size_t out_w, bool align_corners) {
  require(x.dim() == 4, "bilinear_resize input must be [B,C,H,W], got " + shape_str(x.shape()));
  require(out_h >= 1 && out_w >= 1, "bilinear_resize output extents must be >= 1");
  const std::size_t planes = x.shape()[0] * x.shape()[1];
  const std::size_t h = x.shape()[2];
  const std::size_t w = x.shape()[3];
  const AxisSampling sy = axis_sampling(h, out_h, align_corners);
  const AxisSampling sx = axis_sampling(w, out_w, align_corners);
  const auto in = x.data();
  std::vector<double> out(planes * out_h * out_w);
  for (std::size_t pl = 0; pl < planes; ++pl) {
    const double* src = in.data() + pl * h * w;
    double* dst = out.data() + pl * out_h * out_w;
    for (std::size_t i = 0; i < out_h; ++i) {
      const double fy = sy.frac[i];
      const double* r0 = src + sy.lo[i] * w;
      const double* r1 = src + sy.hi[i] * w;
      for (std::size_t j = 0; j < out_w; ++j) {
        const double fx = sx.frac[j];
        const double top = r0[sx.lo[j]] + fx * (r0[sx.hi[j]] - r0[sx.lo[j]]);
        const double bot = r1[sx.lo[j]] + fx * (r1[sx.hi[j]] - r1[sx.lo[j]]);
        dst[i * out_w + j] = top + fy * (bot - top);
      }
    }
  }
  return make_result({x.shape()[0], x.shape()[1], out_h, out_w}, std::move(out), {x},
                     [x, planes, h, w, out_h, out_w, sy, sx](TensorImpl& self) {
                       auto& g = grad_of(x);
                       for (std::size_t pl = 0; pl < planes; ++pl) {
                         double* dsrc = g.data() + pl * h * w;
                         const double* gy = self.grad.data() + pl * out_h * out_w;
                         for (std::size_t i = 0; i < out_h; ++i) {
                           const double fy = sy.frac[i];
                           for (std::size_t j = 0; j < out_w; ++j) {
                             const double fx = sx.frac[j];
                             const double go = gy[i * out_w + j];
                             dsrc[sy.lo[i] * w + sx.lo[j]] += go * (1 - fy) * (1 - fx);
                             dsrc[sy.lo[i] * w + sx.hi[j]] += go * (1 - fy) * fx;
                             dsrc[sy.hi[i] * w + sx.lo[j]] += go * fy * (1 - fx);
                             dsrc[sy.hi[i] * w + sx.hi[j]] += go * fy * fx;
                           }
                         }
                       }
                     });
}

}  // namespace eformer
