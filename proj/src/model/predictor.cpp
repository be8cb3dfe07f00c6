#include "eformer/predictor.hpp"

namespace eformer::predictor {

void init_params(ParamStore& store, std::size_t channels, std::size_t f4_channels, Initializer& init) {
  const std::size_t c = channels;
  const std::size_t c1 = f4_channels;
  store.add("fuse/semantic/weight", init.he_normal({c, c, 3, 3}, c * 9));
  store.add("fuse/semantic/bias", Tensor::zeros({c}));
  store.add("fuse/contour/weight", init.he_normal({c, c, 3, 3}, c * 9));
  store.add("fuse/contour/bias", Tensor::zeros({c}));
  store.add("fuse/mix/weight", init.he_normal({c, 2 * c, 3, 3}, 2 * c * 9));
  store.add("fuse/mix/bias", Tensor::zeros({c}));
  store.add("head/proj/weight", init.he_normal({c1, c, 1, 1}, c));
  store.add("head/proj/bias", Tensor::zeros({c1}));
  store.add("head/conv1/weight", init.he_normal({c1, c1, 3, 3}, c1 * 9));
  store.add("head/conv1/bias", Tensor::zeros({c1}));
  store.add("head/conv2/weight", init.truncated_normal({1, c1, 1, 1}, 0.02));
  store.add("head/conv2/bias", Tensor::zeros({1}));
}

FuseParams fuse_params(const ParamStore& store) {
  return {store.get("fuse/semantic/weight"), store.get("fuse/semantic/bias"),
          store.get("fuse/contour/weight"),  store.get("fuse/contour/bias"),
          store.get("fuse/mix/weight"),      store.get("fuse/mix/bias")};
}

HeadParams head_params(const ParamStore& store) {
  return {store.get("head/proj/weight"),  store.get("head/proj/bias"),  store.get("head/conv1/weight"),
          store.get("head/conv1/bias"),   store.get("head/conv2/weight"), store.get("head/conv2/bias")};
}

SpatialMaps unflatten(const decoder::BlockOutput& out, decoder::TokenGrid grid) {
  return {decoder::unflatten_tokens(out.semantic, grid), decoder::unflatten_tokens(out.contour, grid)};
}

Tensor fuse(const FuseParams& p, const Tensor& semantic, const Tensor& contour, const Tensor& lr_map,
            const Tensor& hr_map) {
  if (semantic.shape() != contour.shape() || semantic.shape() != lr_map.shape() ||
      semantic.shape() != hr_map.shape()) {
    throw ShapeError("fuse inputs differ: " + shape_str(semantic.shape()) + ", " + shape_str(contour.shape()) + ", " +
                     shape_str(lr_map.shape()) + ", " + shape_str(hr_map.shape()));
  }
  const Conv2dOptions same{.stride = 1, .padding = 1};
  Tensor sem = conv2d(add(semantic, lr_map), p.sem_w, p.sem_b, same);
  Tensor con = conv2d(add(contour, hr_map), p.con_w, p.con_b, same);
  return conv2d(concat({sem, con}, 1), p.mix_w, p.mix_b, same);
}

MattePrediction head(const HeadParams& p, const Tensor& fused, const Tensor& f4, std::size_t target_h,
                     std::size_t target_w, Activation act) {
  if (fused.dim() != 4 || f4.dim() != 4 || f4.shape()[0] != fused.shape()[0] ||
      f4.shape()[2] != 2 * fused.shape()[2] || f4.shape()[3] != 2 * fused.shape()[3]) {
    throw ShapeError("f4 grid " + shape_str(f4.shape()) + " is not exactly twice the fused grid " +
                     shape_str(fused.shape()));
  }
  Tensor x = bilinear_resize(fused, f4.shape()[2], f4.shape()[3], false);
  x = add(conv2d(x, p.proj_w, p.proj_b), f4);
  x = activate(conv2d(x, p.conv1_w, p.conv1_b, {.stride = 1, .padding = 1}), act);
  Tensor quarter = sigmoid(conv2d(x, p.conv2_w, p.conv2_b));
  Tensor matte = bilinear_resize(quarter, target_h, target_w, false);
  return {matte, quarter};
}

}  // namespace eformer::predictor
