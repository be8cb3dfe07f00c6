#include <numeric>

#include "tensor_impl.hpp"

namespace eformer {

using detail::grad_of;
using detail::make_result;
using detail::needs_grad;
using detail::require;

Tensor reshape(const Tensor& x, const Shape& shape) {
  require(shape_numel(shape) == x.numel(),
          "reshape " + shape_str(x.shape()) + " -> " + shape_str(shape) + " changes element count");
  std::vector<double> out(x.data().begin(), x.data().end());
  return make_result(shape, std::move(out), {x}, [x](TensorImpl& self) {
    auto& g = grad_of(x);
    for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i];
  });
}

namespace {

// For each output flat index, the input flat index under `order`.
std::vector<std::size_t> permute_map(const Shape& in, const std::vector<std::size_t>& order, Shape& out) {
  const std::size_t rank = in.size();
  std::vector<std::size_t> in_stride(rank, 1);
  for (std::size_t i = rank; i-- > 1;) in_stride[i - 1] = in_stride[i] * in[i];
  out.resize(rank);
  std::vector<std::size_t> stride(rank);
  for (std::size_t i = 0; i < rank; ++i) {
    out[i] = in[order[i]];
    stride[i] = in_stride[order[i]];
  }
  const std::size_t n = shape_numel(in);
  std::vector<std::size_t> map(n);
  std::vector<std::size_t> idx(rank, 0);
  std::size_t src = 0;
  for (std::size_t flat = 0; flat < n; ++flat) {
    map[flat] = src;
    for (std::size_t ax = rank; ax-- > 0;) {
      ++idx[ax];
      src += stride[ax];
      if (idx[ax] < out[ax]) break;
      src -= stride[ax] * idx[ax];
      idx[ax] = 0;
    }
  }
  return map;
}

}  // namespace

Tensor permute(const Tensor& x, const std::vector<std::size_t>& order) {
  require(order.size() == x.dim(), "permute order rank mismatch for " + shape_str(x.shape()));
  std::vector<bool> used(order.size(), false);
  for (std::size_t o : order) {
    require(o < order.size() && !used[o], "permute order is not a permutation");
    used[o] = true;
  }
  Shape out_shape;
  auto map = permute_map(x.shape(), order, out_shape);
  const auto in = x.data();
  std::vector<double> out(in.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = in[map[i]];
  return make_result(out_shape, std::move(out), {x}, [x, map = std::move(map)](TensorImpl& self) {
    auto& g = grad_of(x);
    for (std::size_t i = 0; i < map.size(); ++i) g[map[i]] += self.grad[i];
  });
}

Tensor transpose(const Tensor& x, std::size_t axis_a, std::size_t axis_b) {
  require(axis_a < x.dim() && axis_b < x.dim(), "transpose axis out of range for " + shape_str(x.shape()));
  std::vector<std::size_t> order(x.dim());
  std::iota(order.begin(), order.end(), 0);
  std::swap(order[axis_a], order[axis_b]);
  return permute(x, order);
}

Tensor concat(const std::vector<Tensor>& parts, std::size_t axis) {
  require(!parts.empty(), "concat of zero tensors");
  const Shape& first = parts.front().shape();
  require(axis < first.size(), "concat axis out of range for " + shape_str(first));
  Shape out_shape = first;
  out_shape[axis] = 0;
  for (const Tensor& p : parts) {
    require(p.dim() == first.size(), "concat rank mismatch: " + shape_str(first) + " vs " + shape_str(p.shape()));
    for (std::size_t ax = 0; ax < first.size(); ++ax) {
      require(ax == axis || p.shape()[ax] == first[ax],
              "concat extent mismatch: " + shape_str(first) + " vs " + shape_str(p.shape()));
    }
    out_shape[axis] += p.shape()[axis];
  }
  std::size_t outer = 1;
  for (std::size_t ax = 0; ax < axis; ++ax) outer *= first[ax];
  std::size_t inner = 1;
  for (std::size_t ax = axis + 1; ax < first.size(); ++ax) inner *= first[ax];
  const std::size_t out_row = out_shape[axis] * inner;

  std::vector<double> out(shape_numel(out_shape));
  std::size_t offset = 0;
  for (const Tensor& p : parts) {
    const std::size_t row = p.shape()[axis] * inner;
    const auto src = p.data();
    for (std::size_t o = 0; o < outer; ++o) {
      std::copy(src.begin() + o * row, src.begin() + (o + 1) * row, out.begin() + o * out_row + offset);
    }
    offset += row;
  }
  return make_result(out_shape, std::move(out), parts, [parts, outer, inner, out_row, axis](TensorImpl& self) {
    std::size_t off = 0;
    for (const Tensor& p : parts) {
      const std::size_t row = p.shape()[axis] * inner;
      if (needs_grad(p)) {
        auto& g = grad_of(p);
        for (std::size_t o = 0; o < outer; ++o) {
          for (std::size_t i = 0; i < row; ++i) g[o * row + i] += self.grad[o * out_row + off + i];
        }
      }
      off += row;
    }
  });
}

Tensor narrow(const Tensor& x, std::size_t axis, std::size_t start, std::size_t length) {
  require(axis < x.dim(), "narrow axis out of range for " + shape_str(x.shape()));
  require(length >= 1 && start + length <= x.shape()[axis],
          "narrow range out of bounds on axis " + std::to_string(axis) + " of " + shape_str(x.shape()));
  Shape out_shape = x.shape();
  out_shape[axis] = length;
  std::size_t outer = 1;
  for (std::size_t ax = 0; ax < axis; ++ax) outer *= x.shape()[ax];
  std::size_t inner = 1;
  for (std::size_t ax = axis + 1; ax < x.dim(); ++ax) inner *= x.shape()[ax];
  const std::size_t in_row = x.shape()[axis] * inner;
  const std::size_t out_row = length * inner;
  const auto src = x.data();
  std::vector<double> out(outer * out_row);
  for (std::size_t o = 0; o < outer; ++o) {
    std::copy(src.begin() + o * in_row + start * inner, src.begin() + o * in_row + start * inner + out_row,
              out.begin() + o * out_row);
  }
  return make_result(out_shape, std::move(out), {x}, [x, outer, inner, in_row, out_row, start](TensorImpl& self) {
    auto& g = grad_of(x);
    for (std::size_t o = 0; o < outer; ++o) {
      for (std::size_t i = 0; i < out_row; ++i) g[o * in_row + start * inner + i] += self.grad[o * out_row + i];
    }
  });
}

}  // namespace eformer
