#pragma once

// Prediction stage: spatialize the block outputs, fuse the semantic and
// contour streams, and decode a full-resolution matte.
//
//   sem'   = Conv3x3(sem + lr')
//   con'   = Conv3x3(con + hr')
//   fused  = Conv3x3(concat(sem', con'))          2C -> C
//   quarter = sigmoid(Conv1x1(act(Conv3x3(Proj1x1(up2(fused)) + f4))))
//   matte  = bilinear(quarter -> H x W)
//
// where lr'/hr' are the spatialized embeddings that entered the first block.

#include "eformer/param_store.hpp"
#include "eformer/scd_block.hpp"
#include "eformer/tensor.hpp"

namespace eformer::predictor {

struct SpatialMaps {
  Tensor semantic;  // [B, C, h, w]
  Tensor contour;   // [B, C, h, w]
};

struct FuseParams {
  Tensor sem_w, sem_b;  // [C, C, 3, 3]
  Tensor con_w, con_b;  // [C, C, 3, 3]
  Tensor mix_w, mix_b;  // [C, 2C, 3, 3]
};

struct HeadParams {
  Tensor proj_w, proj_b;    // [C1, C, 1, 1]
  Tensor conv1_w, conv1_b;  // [C1, C1, 3, 3]
  Tensor conv2_w, conv2_b;  // [1, C1, 1, 1]
};

struct MattePrediction {
  Tensor matte;          // [B, 1, H, W]
  Tensor matte_quarter;  // [B, 1, H/4, W/4]
};

void init_params(ParamStore& store, std::size_t channels, std::size_t f4_channels, Initializer& init);
FuseParams fuse_params(const ParamStore& store);
HeadParams head_params(const ParamStore& store);

SpatialMaps unflatten(const decoder::BlockOutput& out, decoder::TokenGrid grid);

Tensor fuse(const FuseParams& p, const Tensor& semantic, const Tensor& contour, const Tensor& lr_map,
            const Tensor& hr_map);

// Throws ShapeError unless f4's grid is exactly twice the fused grid.
MattePrediction head(const HeadParams& p, const Tensor& fused, const Tensor& f4, std::size_t target_h,
                     std::size_t target_w, Activation act = Activation::Relu);

}  // namespace eformer::predictor
