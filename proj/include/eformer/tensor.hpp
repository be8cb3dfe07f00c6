#pragma once

// Dense row-major double tensor with reverse-mode differentiation.
//
// A Tensor is a shared handle: copies alias the same storage and graph node.
// Ops never mutate their inputs. Each op whose inputs require gradients
// records a backward closure; Tensor::backward() walks the graph in reverse
// topological order.
//
// Gradient semantics: backward() ACCUMULATES into the grads of leaf tensors
// (call zero_grad()/ParamStore::zero_grad() to reset). Grads of interior
// nodes are reset at the start of every backward() and hold the most recent
// pass only.
//
// Reductions are sequential row-major sums through the active SIMD backend;
// agreement across backends and platforms is to tolerance, not bit-exact.

#include <cstddef>
#include <functional>
#include <initializer_list>
#include <memory>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace eformer {

using Shape = std::vector<std::size_t>;

std::string shape_str(const Shape& s);
std::size_t shape_numel(const Shape& s);

struct ShapeError : std::invalid_argument {
  using std::invalid_argument::invalid_argument;
};

struct DomainError : std::domain_error {
  using std::domain_error::domain_error;
};

struct TensorImpl;

class Tensor {
 public:
  Tensor() = default;

  static Tensor zeros(const Shape& shape, bool requires_grad = false);
  static Tensor full(const Shape& shape, double value, bool requires_grad = false);
  static Tensor from(const Shape& shape, std::vector<double> values, bool requires_grad = false);
  static Tensor scalar(double value, bool requires_grad = false);

  bool defined() const { return impl_ != nullptr; }
  const Shape& shape() const;
  std::size_t dim() const { return shape().size(); }
  std::size_t size(std::size_t axis) const;
  std::size_t numel() const;

  std::span<const double> data() const;
  // Direct write access for leaves (parameter updates, loaders). Writing into
  // a tensor that participates in a live graph invalidates its gradients.
  std::span<double> mutable_data();
  double item() const;
  double at(std::initializer_list<std::size_t> index) const;

  bool requires_grad() const;
  void set_requires_grad(bool flag);
  bool has_grad() const;
  std::span<const double> grad() const;
  std::span<double> mutable_grad();
  void zero_grad();

  void backward() const;
  // Same storage copy without graph history.
  Tensor detach() const;
  Tensor clone() const;

  const std::shared_ptr<TensorImpl>& impl() const { return impl_; }
  explicit Tensor(std::shared_ptr<TensorImpl> impl) : impl_(std::move(impl)) {}

 private:
  std::shared_ptr<TensorImpl> impl_;
};

struct TensorImpl {
  Shape shape;
  std::vector<double> data;
  std::vector<double> grad;
  bool requires_grad = false;
  std::vector<std::shared_ptr<TensorImpl>> parents;
  // Reads this->grad and accumulates into parents' grads.
  std::function<void(TensorImpl& self)> backward_fn;

  void ensure_grad();
};

// Graph recording is on by default; NoGradGuard disables it for the current
// thread (inference, evaluation, optimizer updates).
bool grad_mode_enabled();
class NoGradGuard {
 public:
  NoGradGuard();
  ~NoGradGuard();
  NoGradGuard(const NoGradGuard&) = delete;
  NoGradGuard& operator=(const NoGradGuard&) = delete;

 private:
  bool saved_;
};

// ---------------------------------------------------------------------------
// Elementwise (binary ops broadcast numpy-style)

Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
Tensor scale(const Tensor& x, double s);
Tensor add_scalar(const Tensor& x, double s);
Tensor neg(const Tensor& x);
Tensor relu(const Tensor& x);
// Exact erf form: 0.5 x (1 + erf(x / sqrt 2)).
Tensor gelu(const Tensor& x);
Tensor sigmoid(const Tensor& x);
// Natural log; throws DomainError on any non-positive input.
Tensor log(const Tensor& x);
Tensor exp(const Tensor& x);
// Gradient passes where lo <= x <= hi, zero elsewhere.
Tensor clamp(const Tensor& x, double lo, double hi);

enum class Activation { Relu, Gelu, Identity };
Tensor activate(const Tensor& x, Activation act);
Activation parse_activation(const std::string& name);
std::string activation_name(Activation act);

// ---------------------------------------------------------------------------
// Reductions and layout

Tensor sum(const Tensor& x);
Tensor mean(const Tensor& x);
Tensor reshape(const Tensor& x, const Shape& shape);
Tensor permute(const Tensor& x, const std::vector<std::size_t>& order);
Tensor transpose(const Tensor& x, std::size_t axis_a, std::size_t axis_b);
Tensor concat(const std::vector<Tensor>& parts, std::size_t axis);
// Contiguous slice [start, start+length) along one axis.
Tensor narrow(const Tensor& x, std::size_t axis, std::size_t start, std::size_t length);

// ---------------------------------------------------------------------------
// Linear algebra and normalization

// [..., m, k] x [..., k, n] -> [..., m, n]; batch extents broadcast.
Tensor matmul(const Tensor& a, const Tensor& b);
// x[..., in] * weight[in, out] + bias[out]; bias may be undefined.
Tensor linear(const Tensor& x, const Tensor& weight, const Tensor& bias);
Tensor softmax(const Tensor& x, std::size_t axis);
// Per-row standardization over the last axis (biased variance).
Tensor normalize_last(const Tensor& x, double eps);
Tensor layer_norm(const Tensor& x, const Tensor& gamma, const Tensor& beta, double eps = 1e-5);
// x[B, C, ...]; statistics over (C/groups, ...) per sample and group.
Tensor group_norm(const Tensor& x, std::size_t groups, const Tensor& gamma, const Tensor& beta,
                  double eps = 1e-5);

// ---------------------------------------------------------------------------
// Image ops, NCHW layout

struct Conv2dOptions {
  std::size_t stride = 1;
  std::size_t padding = 0;  // zero padding on all four sides
};

// Cross-correlation (no kernel flip):
//   y[b,o,i,j] = bias[o] + sum_{c,u,v} w[o,c,u,v] * x[b,c,i*s+u-p, j*s+v-p]
// Output extent floor((H + 2p - kh) / s) + 1. bias may be undefined.
Tensor conv2d(const Tensor& x, const Tensor& weight, const Tensor& bias, Conv2dOptions opt = {});

// Mirror padding without edge repetition (like numpy "reflect").
Tensor reflect_pad2d(const Tensor& x, std::size_t pad);

// align_corners=true maps corner pixel centers exactly onto each other;
// false uses half-pixel centers with edge clamping.
Tensor bilinear_resize(const Tensor& x, std::size_t out_h, std::size_t out_w,
                       bool align_corners = false);

// ---------------------------------------------------------------------------
// Finite-difference gradient checking

struct GradCheckReport {
  double max_rel_error = 0.0;
  std::size_t worst_index = 0;
  double worst_analytic = 0.0;
  double worst_numeric = 0.0;
  std::size_t checked = 0;
  bool passed = false;
};

// Central differences (f(x+h e_i) - f(x-h e_i)) / 2h against the analytic
// gradient of the scalar f at x. Relative error per coordinate is
// |a - n| / max(|a|, |n|, floor). x's data is restored before returning.
GradCheckReport grad_check(const std::function<Tensor(const Tensor&)>& f, const Tensor& x,
                           double h = 1e-5, double tol = 1e-4, double floor = 1e-2);

}  // namespace eformer
