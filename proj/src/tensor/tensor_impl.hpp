#pragma once

// Internal helpers shared by the op translation units.

#include <memory>
#include <vector>

#include "eformer/tensor.hpp"

namespace eformer::detail {

using ImplPtr = std::shared_ptr<TensorImpl>;

// Wraps computed values into a tensor and records the backward closure when
// grad mode is on and any input requires grad.
Tensor make_result(Shape shape, std::vector<double> data, std::vector<Tensor> inputs,
                   std::function<void(TensorImpl&)> backward_fn);

inline bool needs_grad(const Tensor& t) { return t.defined() && t.impl()->requires_grad; }

// Accumulation target for an input's gradient, allocated on first use.
inline std::vector<double>& grad_of(const Tensor& t) {
  t.impl()->ensure_grad();
  return t.impl()->grad;
}

Shape broadcast_shapes(const Shape& a, const Shape& b);
// For each flat index of `out`, the flat index of the broadcast source `in`.
std::vector<std::size_t> broadcast_map(const Shape& out, const Shape& in);

void require(bool cond, const std::string& message);

}  // namespace eformer::detail
