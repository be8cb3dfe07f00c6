#include <cmath>
#include <numbers>

#include "eformer/simd/kernels.hpp"
#include "tensor_impl.hpp"

namespace eformer {

using detail::grad_of;
using detail::make_result;
using detail::needs_grad;

namespace {

// Reduces a gradient laid out over `out` onto a broadcast source `in`.
void accumulate_broadcast(const std::vector<double>& gout, const Shape& out, const Tensor& in,
                          const std::vector<double>* factor) {
  auto& g = grad_of(in);
  if (in.shape() == out) {
    if (factor) {
      for (std::size_t i = 0; i < gout.size(); ++i) g[i] += gout[i] * (*factor)[i];
    } else {
      simd::kernels().axpy(gout.size(), 1.0, gout.data(), g.data());
    }
    return;
  }
  const auto map = detail::broadcast_map(out, in.shape());
  for (std::size_t i = 0; i < gout.size(); ++i) g[map[i]] += factor ? gout[i] * (*factor)[i] : gout[i];
}

enum class BinOp { Add, Sub, Mul };

Tensor binary(const Tensor& a, const Tensor& b, BinOp op) {
  const Shape out_shape = detail::broadcast_shapes(a.shape(), b.shape());
  const std::size_t n = shape_numel(out_shape);
  std::vector<double> out(n);
  const auto& k = simd::kernels();
  std::vector<double> av;
  std::vector<double> bv;
  const double* pa = a.data().data();
  const double* pb = b.data().data();
  if (a.shape() != out_shape) {
    const auto map = detail::broadcast_map(out_shape, a.shape());
    av.resize(n);
    for (std::size_t i = 0; i < n; ++i) av[i] = pa[map[i]];
    pa = av.data();
  }
  if (b.shape() != out_shape) {
    const auto map = detail::broadcast_map(out_shape, b.shape());
    bv.resize(n);
    for (std::size_t i = 0; i < n; ++i) bv[i] = pb[map[i]];
    pb = bv.data();
  }
  switch (op) {
    case BinOp::Add: k.add(n, pa, pb, out.data()); break;
    case BinOp::Mul: k.mul(n, pa, pb, out.data()); break;
    case BinOp::Sub:
      for (std::size_t i = 0; i < n; ++i) out[i] = pa[i] - pb[i];
      break;
  }
  if (!grad_mode_enabled() || !(needs_grad(a) || needs_grad(b))) {
    return make_result(out_shape, std::move(out), {a, b}, nullptr);
  }
  // Multiplication needs the broadcast operand values.
  std::vector<double> a_exp;
  std::vector<double> b_exp;
  if (op == BinOp::Mul) {
    a_exp.assign(pa, pa + n);
    b_exp.assign(pb, pb + n);
  }
  return make_result(out_shape, std::move(out), {a, b},
                     [a, b, op, out_shape, a_exp = std::move(a_exp), b_exp = std::move(b_exp)](TensorImpl& self) {
                       if (needs_grad(a)) accumulate_broadcast(self.grad, out_shape, a, op == BinOp::Mul ? &b_exp : nullptr);
                       if (needs_grad(b)) {
                         if (op == BinOp::Sub) {
                           std::vector<double> negated(self.grad.size());
                           for (std::size_t i = 0; i < negated.size(); ++i) negated[i] = -self.grad[i];
                           accumulate_broadcast(negated, out_shape, b, nullptr);
                         } else {
                           accumulate_broadcast(self.grad, out_shape, b, op == BinOp::Mul ? &a_exp : nullptr);
                         }
                       }
                     });
}

// Unary op with derivative expressed through (input, output) values.
template <typename Fwd, typename Deriv>
Tensor unary(const Tensor& x, Fwd fwd, Deriv deriv) {
  const auto in = x.data();
  std::vector<double> out(in.size());
  for (std::size_t i = 0; i < in.size(); ++i) out[i] = fwd(in[i]);
  return make_result(x.shape(), std::move(out), {x}, [x, deriv](TensorImpl& self) {
    auto& g = grad_of(x);
    const auto xin = x.data();
    for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i] * deriv(xin[i], self.data[i]);
  });
}

}  // namespace

Tensor add(const Tensor& a, const Tensor& b) { return binary(a, b, BinOp::Add); }
Tensor sub(const Tensor& a, const Tensor& b) { return binary(a, b, BinOp::Sub); }
Tensor mul(const Tensor& a, const Tensor& b) { return binary(a, b, BinOp::Mul); }

Tensor scale(const Tensor& x, double s) {
  return unary(x, [s](double v) { return v * s; }, [s](double, double) { return s; });
}

Tensor add_scalar(const Tensor& x, double s) {
  return unary(x, [s](double v) { return v + s; }, [](double, double) { return 1.0; });
}

Tensor neg(const Tensor& x) { return scale(x, -1.0); }

Tensor relu(const Tensor& x) {
  return unary(x, [](double v) { return v > 0.0 ? v : 0.0; },
               [](double v, double) { return v > 0.0 ? 1.0 : 0.0; });
}

Tensor gelu(const Tensor& x) {
  constexpr double inv_sqrt2 = 0.70710678118654752440;
  const double inv_sqrt_2pi = 1.0 / std::sqrt(2.0 * std::numbers::pi);
  return unary(x, [](double v) { return 0.5 * v * (1.0 + std::erf(v * inv_sqrt2)); },
               [inv_sqrt_2pi](double v, double) {
                 const double cdf = 0.5 * (1.0 + std::erf(v * inv_sqrt2));
                 return cdf + v * inv_sqrt_2pi * std::exp(-0.5 * v * v);
               });
}

Tensor sigmoid(const Tensor& x) {
  return unary(
      x,
      [](double v) {
        if (v >= 0.0) return 1.0 / (1.0 + std::exp(-v));
        const double e = std::exp(v);
        return e / (1.0 + e);
      },
      [](double, double y) { return y * (1.0 - y); });
}

Tensor log(const Tensor& x) {
  for (double v : x.data()) {
    if (!(v > 0.0)) throw DomainError("log of non-positive value " + std::to_string(v));
  }
  return unary(x, [](double v) { return std::log(v); }, [](double v, double) { return 1.0 / v; });
}

Tensor exp(const Tensor& x) {
  return unary(x, [](double v) { return std::exp(v); }, [](double, double y) { return y; });
}

Tensor clamp(const Tensor& x, double lo, double hi) {
  if (lo > hi) throw std::invalid_argument("clamp bounds inverted");
  return unary(x, [lo, hi](double v) { return v < lo ? lo : (v > hi ? hi : v); },
               [lo, hi](double v, double) { return (v >= lo && v <= hi) ? 1.0 : 0.0; });
}

Tensor activate(const Tensor& x, Activation act) {
  switch (act) {
    case Activation::Relu: return relu(x);
    case Activation::Gelu: return gelu(x);
    case Activation::Identity: return x;
  }
  return x;
}

Activation parse_activation(const std::string& name) {
  if (name == "relu") return Activation::Relu;
  if (name == "gelu") return Activation::Gelu;
  if (name == "identity") return Activation::Identity;
  throw std::invalid_argument("unknown activation '" + name + "' (expected relu|gelu|identity)");
}

std::string activation_name(Activation act) {
  switch (act) {
    case Activation::Relu: return "relu";
    case Activation::Gelu: return "gelu";
    case Activation::Identity: return "identity";
  }
  return "?";
}

Tensor sum(const Tensor& x) {
  double s = 0.0;
  for (double v : x.data()) s += v;
  return make_result({1}, {s}, {x}, [x](TensorImpl& self) {
    auto& g = grad_of(x);
    const double go = self.grad[0];
    for (double& v : g) v += go;
  });
}

Tensor mean(const Tensor& x) { return scale(sum(x), 1.0 / static_cast<double>(x.numel())); }

}  // namespace eformer
