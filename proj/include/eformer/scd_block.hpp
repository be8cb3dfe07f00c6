#pragma once

// Decoder transformer block: mixed-resolution cross-attention (CA) cascaded
// with self-attention (SA), followed by the contour-edge (CEEB) and semantic
// (SEB) extraction branches.
//
// Token tensors are laid out [N, B, C] with token n = row * w + col of the
// h x w token grid.
//
//   K  = LN_hr(hr_em) + PE          Q  = LN_lr(lr_em) + PE
//   V  = LN_v(lr_em + hr_em)
//   contour_edge = CA(K, Q, V)      enhance = contour_edge + V
//   K' = Q' = LN_sa(enhance) + PE   V' = LN_sa(enhance)
//   detector = SA(K', Q', V') + V'
//   contour  = MLP_ceeb(LN_ceeb(hr_em + detector))
//   semantic = MLP_seb(LN_seb(lr_em + detector))
//
// CA/SA are multi-head scaled dot-product attention with learned input and
// output projections; queries come from the Q argument, keys from K.

#include <optional>
#include <string>
#include <vector>

#include "eformer/param_store.hpp"
#include "eformer/tensor.hpp"

namespace eformer::decoder {

enum class Ablation { Full, CaOnly, SaOnly };
Ablation parse_ablation(const std::string& tag);
std::string ablation_name(Ablation a);
bool has_cross_attention(Ablation a);
bool has_self_attention(Ablation a);

struct TokenGrid {
  std::size_t h = 1;
  std::size_t w = 1;
  std::size_t tokens() const { return h * w; }
  bool operator==(const TokenGrid&) const = default;
};

struct BlockConfig {
  std::size_t channels = 256;
  std::size_t heads = 8;
  std::size_t blocks = 4;
  Ablation ablation = Ablation::Full;
  std::size_t mlp_ratio = 4;
  Activation mlp_activation = Activation::Gelu;
  // Grid the learnable PE tables are sized for; other grids resample them.
  TokenGrid pe_grid{8, 8};
  double ln_eps = 1e-5;

  void validate() const;
};

struct EmbeddingPair {
  Tensor hr_em;
  Tensor lr_em;
  TokenGrid grid;
};

struct BlockOutput {
  Tensor contour;
  Tensor semantic;
  Tensor detector;
};

struct LayerNormParams {
  Tensor gamma;
  Tensor beta;
};

// Linear weights are [in, out]; y = x W + b.
struct AttentionParams {
  Tensor wq, bq, wk, bk, wv, bv, wo, bo;
};

struct MlpParams {
  Tensor w1, b1, w2, b2;
};

struct CrossAttentionParams {
  LayerNormParams ln_hr;
  LayerNormParams ln_lr;
  LayerNormParams ln_v;
  AttentionParams attn;
};

struct SelfAttentionParams {
  LayerNormParams ln;
  AttentionParams attn;
};

struct BranchParams {
  LayerNormParams ln;
  MlpParams mlp;
};

struct BlockParams {
  // Absent in SA-only blocks, which still use ln_v to form F_enhance.
  std::optional<CrossAttentionParams> ca;
  LayerNormParams ln_v;
  std::optional<SelfAttentionParams> sa;
  BranchParams ceeb;
  BranchParams seb;
  Tensor pe;  // [N_pe, 1, C]
};

struct ProjectionParams {
  Tensor hr_w, hr_b;  // 1x1 conv [C, C_hr, 1, 1]
  Tensor lr_w, lr_b;  // 1x1 conv [C, C_lr, 1, 1]
};

// Per-stage activations of one block, recorded when a sink is supplied.
struct BlockTaps {
  Tensor contour_edge;   // CA output
  Tensor enhance;        // CA output + V
  Tensor sa_attended;    // SA output before the V' residual
  Tensor detector;       // SCD output
  Tensor contour;        // CEEB output
  Tensor semantic;       // SEB output
  Tensor ca_weights;     // [B, M, N, N], undefined without CA
  Tensor sa_weights;     // [B, M, N, N], undefined without SA
};

// ---------------------------------------------------------------------------
// Parameter registration / lookup

void init_projection_params(ParamStore& store, std::size_t hr_channels, std::size_t lr_channels,
                            const BlockConfig& cfg, Initializer& init);
void init_block_params(ParamStore& store, std::size_t block, const BlockConfig& cfg, Initializer& init);
ProjectionParams projection_params(const ParamStore& store);
BlockParams block_params(const ParamStore& store, std::size_t block, const BlockConfig& cfg);
std::string block_prefix(std::size_t block);

// ---------------------------------------------------------------------------
// Token layout

// [B, C, h, w] -> [h*w, B, C], row-major over the grid.
Tensor flatten_tokens(const Tensor& map);
// [N, B, C] -> [B, C, h, w]; throws ShapeError when N != h*w.
Tensor unflatten_tokens(const Tensor& tokens, TokenGrid grid);

// Resamples F_HR and F_LR (bilinear) onto `grid`, projects both to C
// channels with 1x1 convolutions, and flattens. Defaults to F_HR's grid.
EmbeddingPair project_flatten(const ProjectionParams& params, const Tensor& f_hr, const Tensor& f_lr,
                              std::optional<TokenGrid> grid = std::nullopt);

// PE table for `grid`; bilinear resample of the [N_pe,1,C] table when the
// grid differs from the configured one.
Tensor positional_encoding(const Tensor& pe, TokenGrid pe_grid, TokenGrid grid);

// ---------------------------------------------------------------------------
// Stages

struct AttentionResult {
  Tensor output;   // [Nq, B, C]
  Tensor weights;  // [B, M, Nq, Nk]
};

// query [Nq,B,C], key/value [Nk,B,C]; scores scaled by 1/sqrt(C/heads).
AttentionResult multi_head_attention(const Tensor& query, const Tensor& key, const Tensor& value,
                                     const AttentionParams& p, std::size_t heads);

struct CrossAttentionResult {
  Tensor contour_edge;
  Tensor enhance;
  Tensor value;
  Tensor weights;
};

CrossAttentionResult cross_attention_stage(const EmbeddingPair& pair, const CrossAttentionParams& p,
                                           const Tensor& pe, std::size_t heads, double eps = 1e-5);

struct SelfAttentionResult {
  Tensor attended;
  Tensor semantic_contour;
  Tensor weights;
};

SelfAttentionResult self_attention_stage(const Tensor& enhance, const SelfAttentionParams& p, const Tensor& pe,
                                         std::size_t heads, double eps = 1e-5);

// MLP(LN(stream + detector)): C -> ratio*C -> C with `act` in between.
Tensor extraction_branch(const Tensor& detector, const Tensor& stream, const BranchParams& p, Activation act,
                         double eps = 1e-5);
Tensor ceeb(const Tensor& detector, const Tensor& hr_em, const BranchParams& p, Activation act, double eps = 1e-5);
Tensor seb(const Tensor& detector, const Tensor& lr_em, const BranchParams& p, Activation act, double eps = 1e-5);

BlockOutput block_forward(const EmbeddingPair& pair, const BlockParams& p, const BlockConfig& cfg,
                          BlockTaps* taps = nullptr);

// Block k+1 consumes (hr_em := contour_k, lr_em := semantic_k).
BlockOutput stack_forward(const ParamStore& store, const EmbeddingPair& pair, const BlockConfig& cfg,
                          std::vector<BlockTaps>* taps = nullptr);

}  // namespace eformer::decoder
