#include "eformer/scd_block.hpp"

#include <cmath>

namespace eformer::decoder {

Ablation parse_ablation(const std::string& tag) {
  if (tag == "full") return Ablation::Full;
  if (tag == "ca_only") return Ablation::CaOnly;
  if (tag == "sa_only") return Ablation::SaOnly;
  throw std::invalid_argument("unknown ablation '" + tag + "' (expected full|ca_only|sa_only)");
}

std::string ablation_name(Ablation a) {
  switch (a) {
    case Ablation::Full: return "full";
    case Ablation::CaOnly: return "ca_only";
    case Ablation::SaOnly: return "sa_only";
  }
  return "?";
}

bool has_cross_attention(Ablation a) { return a != Ablation::SaOnly; }
bool has_self_attention(Ablation a) { return a != Ablation::CaOnly; }

void BlockConfig::validate() const {
  if (channels == 0 || heads == 0 || channels % heads != 0) {
    throw std::invalid_argument("channels " + std::to_string(channels) + " not divisible by " +
                                std::to_string(heads) + " heads");
  }
  if (blocks == 0) throw std::invalid_argument("block count must be >= 1");
  if (mlp_ratio == 0) throw std::invalid_argument("mlp ratio must be >= 1");
  if (pe_grid.tokens() == 0) throw std::invalid_argument("PE grid must be non-empty");
}

std::string block_prefix(std::size_t block) { return "decoder/block" + std::to_string(block) + "/"; }

namespace {

void add_layer_norm(ParamStore& store, const std::string& p, std::size_t c) {
  store.add(p + "gamma", Tensor::full({c}, 1.0));
  store.add(p + "beta", Tensor::zeros({c}));
}

LayerNormParams get_layer_norm(const ParamStore& store, const std::string& p) {
  return {store.get(p + "gamma"), store.get(p + "beta")};
}

void add_attention(ParamStore& store, const std::string& p, std::size_t c, Initializer& init) {
  for (const char* name : {"q", "k", "v", "o"}) {
    store.add(p + "w" + name, init.truncated_normal({c, c}, 0.02));
    store.add(p + "b" + name, Tensor::zeros({c}));
  }
}

AttentionParams get_attention(const ParamStore& store, const std::string& p) {
  return {store.get(p + "wq"), store.get(p + "bq"), store.get(p + "wk"), store.get(p + "bk"),
          store.get(p + "wv"), store.get(p + "bv"), store.get(p + "wo"), store.get(p + "bo")};
}

void add_branch(ParamStore& store, const std::string& p, const BlockConfig& cfg, Initializer& init) {
  const std::size_t c = cfg.channels;
  const std::size_t hidden = c * cfg.mlp_ratio;
  add_layer_norm(store, p + "ln/", c);
  store.add(p + "mlp/w1", init.truncated_normal({c, hidden}, 0.02));
  store.add(p + "mlp/b1", Tensor::zeros({hidden}));
  store.add(p + "mlp/w2", init.truncated_normal({hidden, c}, 0.02));
  store.add(p + "mlp/b2", Tensor::zeros({c}));
}

BranchParams get_branch(const ParamStore& store, const std::string& p) {
  return {get_layer_norm(store, p + "ln/"),
          {store.get(p + "mlp/w1"), store.get(p + "mlp/b1"), store.get(p + "mlp/w2"), store.get(p + "mlp/b2")}};
}

void check_tokens(const Tensor& t, const char* what) {
  if (t.dim() != 3) throw ShapeError(std::string(what) + " must be [N,B,C], got " + shape_str(t.shape()));
}

void check_pe(const Tensor& pe, const Tensor& tokens) {
  const Shape want{tokens.shape()[0], 1, tokens.shape()[2]};
  if (pe.shape() != want) {
    throw ShapeError("PE shape " + shape_str(pe.shape()) + " does not match token count; expected " + shape_str(want));
  }
}

}  // namespace

void init_projection_params(ParamStore& store, std::size_t hr_channels, std::size_t lr_channels,
                            const BlockConfig& cfg, Initializer& init) {
  const std::size_t c = cfg.channels;
  store.add("decoder/proj/hr/weight", init.truncated_normal({c, hr_channels, 1, 1}, 0.02));
  store.add("decoder/proj/hr/bias", Tensor::zeros({c}));
  store.add("decoder/proj/lr/weight", init.truncated_normal({c, lr_channels, 1, 1}, 0.02));
  store.add("decoder/proj/lr/bias", Tensor::zeros({c}));
}

ProjectionParams projection_params(const ParamStore& store) {
  return {store.get("decoder/proj/hr/weight"), store.get("decoder/proj/hr/bias"),
          store.get("decoder/proj/lr/weight"), store.get("decoder/proj/lr/bias")};
}

void init_block_params(ParamStore& store, std::size_t block, const BlockConfig& cfg, Initializer& init) {
  cfg.validate();
  const std::string p = block_prefix(block);
  const std::size_t c = cfg.channels;
  if (has_cross_attention(cfg.ablation)) {
    add_layer_norm(store, p + "ca/ln_hr/", c);
    add_layer_norm(store, p + "ca/ln_lr/", c);
    add_attention(store, p + "ca/attn/", c, init);
  }
  add_layer_norm(store, p + "ln_v/", c);
  if (has_self_attention(cfg.ablation)) {
    add_layer_norm(store, p + "sa/ln/", c);
    add_attention(store, p + "sa/attn/", c, init);
  }
  add_branch(store, p + "ceeb/", cfg, init);
  add_branch(store, p + "seb/", cfg, init);
  store.add(p + "pe", Tensor::zeros({cfg.pe_grid.tokens(), 1, c}));
}

BlockParams block_params(const ParamStore& store, std::size_t block, const BlockConfig& cfg) {
  const std::string p = block_prefix(block);
  BlockParams out;
  out.ln_v = get_layer_norm(store, p + "ln_v/");
  if (has_cross_attention(cfg.ablation)) {
    out.ca = CrossAttentionParams{get_layer_norm(store, p + "ca/ln_hr/"), get_layer_norm(store, p + "ca/ln_lr/"),
                                  out.ln_v, get_attention(store, p + "ca/attn/")};
  }
  if (has_self_attention(cfg.ablation)) {
    out.sa = SelfAttentionParams{get_layer_norm(store, p + "sa/ln/"), get_attention(store, p + "sa/attn/")};
  }
  out.ceeb = get_branch(store, p + "ceeb/");
  out.seb = get_branch(store, p + "seb/");
  out.pe = store.get(p + "pe");
  return out;
}

Tensor flatten_tokens(const Tensor& map) {
  if (map.dim() != 4) throw ShapeError("flatten_tokens expects [B,C,h,w], got " + shape_str(map.shape()));
  const std::size_t b = map.shape()[0];
  const std::size_t c = map.shape()[1];
  const std::size_t n = map.shape()[2] * map.shape()[3];
  return reshape(permute(map, {2, 3, 0, 1}), {n, b, c});
}

Tensor unflatten_tokens(const Tensor& tokens, TokenGrid grid) {
  check_tokens(tokens, "unflatten_tokens input");
  if (tokens.shape()[0] != grid.tokens()) {
    throw ShapeError("token count " + std::to_string(tokens.shape()[0]) + " does not match grid " +
                     std::to_string(grid.h) + "x" + std::to_string(grid.w));
  }
  const std::size_t b = tokens.shape()[1];
  const std::size_t c = tokens.shape()[2];
  return permute(reshape(tokens, {grid.h, grid.w, b, c}), {2, 3, 0, 1});
}

EmbeddingPair project_flatten(const ProjectionParams& params, const Tensor& f_hr, const Tensor& f_lr,
                              std::optional<TokenGrid> grid) {
  if (f_hr.dim() != 4 || f_lr.dim() != 4) {
    throw ShapeError("project_flatten expects NCHW maps, got " + shape_str(f_hr.shape()) + " and " +
                     shape_str(f_lr.shape()));
  }
  if (f_lr.shape()[2] > f_hr.shape()[2] || f_lr.shape()[3] > f_hr.shape()[3]) {
    throw ShapeError("F_LR " + shape_str(f_lr.shape()) + " is finer than F_HR " + shape_str(f_hr.shape()));
  }
  const TokenGrid target = grid.value_or(TokenGrid{f_hr.shape()[2], f_hr.shape()[3]});
  auto to_grid = [&](const Tensor& m) {
    if (m.shape()[2] == target.h && m.shape()[3] == target.w) return m;
    return bilinear_resize(m, target.h, target.w, false);
  };
  Tensor hr = to_grid(f_hr);
  Tensor lr = to_grid(f_lr);
  if (hr.shape()[2] != lr.shape()[2] || hr.shape()[3] != lr.shape()[3]) {
    throw ShapeError("grid mismatch after resampling: " + shape_str(hr.shape()) + " vs " + shape_str(lr.shape()));
  }
  hr = conv2d(hr, params.hr_w, params.hr_b);
  lr = conv2d(lr, params.lr_w, params.lr_b);
  return {flatten_tokens(hr), flatten_tokens(lr), target};
}

Tensor positional_encoding(const Tensor& pe, TokenGrid pe_grid, TokenGrid grid) {
  if (pe.dim() != 3 || pe.shape()[0] != pe_grid.tokens() || pe.shape()[1] != 1) {
    throw ShapeError("PE table " + shape_str(pe.shape()) + " does not match its grid " +
                     std::to_string(pe_grid.h) + "x" + std::to_string(pe_grid.w));
  }
  if (grid == pe_grid) return pe;
  const std::size_t c = pe.shape()[2];
  Tensor map = permute(reshape(pe, {1, pe_grid.h, pe_grid.w, c}), {0, 3, 1, 2});
  map = bilinear_resize(map, grid.h, grid.w, false);
  return reshape(permute(map, {2, 3, 0, 1}), {grid.tokens(), 1, c});
}

AttentionResult multi_head_attention(const Tensor& query, const Tensor& key, const Tensor& value,
                                     const AttentionParams& p, std::size_t heads) {
  check_tokens(query, "attention query");
  check_tokens(key, "attention key");
  check_tokens(value, "attention value");
  if (key.shape() != value.shape() || key.shape()[1] != query.shape()[1] || key.shape()[2] != query.shape()[2]) {
    throw ShapeError("attention operand mismatch: q " + shape_str(query.shape()) + ", k " + shape_str(key.shape()) +
                     ", v " + shape_str(value.shape()));
  }
  const std::size_t nq = query.shape()[0];
  const std::size_t nk = key.shape()[0];
  const std::size_t b = query.shape()[1];
  const std::size_t c = query.shape()[2];
  if (heads == 0 || c % heads != 0) {
    throw std::invalid_argument("channels " + std::to_string(c) + " not divisible by " + std::to_string(heads) + " heads");
  }
  const std::size_t d = c / heads;
  auto split = [&](const Tensor& t, std::size_t n) { return permute(reshape(t, {n, b, heads, d}), {1, 2, 0, 3}); };
  Tensor q = split(linear(query, p.wq, p.bq), nq);
  Tensor k = split(linear(key, p.wk, p.bk), nk);
  Tensor v = split(linear(value, p.wv, p.bv), nk);
  Tensor scores = scale(matmul(q, transpose(k, 2, 3)), 1.0 / std::sqrt(static_cast<double>(d)));
  Tensor weights = softmax(scores, 3);
  Tensor o = matmul(weights, v);
  o = reshape(permute(o, {2, 0, 1, 3}), {nq, b, c});
  return {linear(o, p.wo, p.bo), weights};
}

CrossAttentionResult cross_attention_stage(const EmbeddingPair& pair, const CrossAttentionParams& p,
                                           const Tensor& pe, std::size_t heads, double eps) {
  check_tokens(pair.hr_em, "hr_em");
  if (pair.hr_em.shape() != pair.lr_em.shape()) {
    throw ShapeError("hr_em " + shape_str(pair.hr_em.shape()) + " and lr_em " + shape_str(pair.lr_em.shape()) +
                     " differ");
  }
  check_pe(pe, pair.hr_em);
  Tensor k = add(layer_norm(pair.hr_em, p.ln_hr.gamma, p.ln_hr.beta, eps), pe);
  Tensor q = add(layer_norm(pair.lr_em, p.ln_lr.gamma, p.ln_lr.beta, eps), pe);
  Tensor v = layer_norm(add(pair.lr_em, pair.hr_em), p.ln_v.gamma, p.ln_v.beta, eps);
  // One evaluation of CA feeds both the contour-edge output and the residual.
  AttentionResult ca = multi_head_attention(q, k, v, p.attn, heads);
  return {ca.output, add(ca.output, v), v, ca.weights};
}

SelfAttentionResult self_attention_stage(const Tensor& enhance, const SelfAttentionParams& p, const Tensor& pe,
                                         std::size_t heads, double eps) {
  check_tokens(enhance, "F_enhance");
  check_pe(pe, enhance);
  Tensor v = layer_norm(enhance, p.ln.gamma, p.ln.beta, eps);
  Tensor kq = add(v, pe);
  AttentionResult sa = multi_head_attention(kq, kq, v, p.attn, heads);
  return {sa.output, add(sa.output, v), sa.weights};
}

Tensor extraction_branch(const Tensor& detector, const Tensor& stream, const BranchParams& p, Activation act,
                         double eps) {
  if (detector.shape() != stream.shape()) {
    throw ShapeError("branch inputs differ: " + shape_str(detector.shape()) + " vs " + shape_str(stream.shape()));
  }
  Tensor x = layer_norm(add(stream, detector), p.ln.gamma, p.ln.beta, eps);
  x = activate(linear(x, p.mlp.w1, p.mlp.b1), act);
  return linear(x, p.mlp.w2, p.mlp.b2);
}

Tensor ceeb(const Tensor& detector, const Tensor& hr_em, const BranchParams& p, Activation act, double eps) {
  return extraction_branch(detector, hr_em, p, act, eps);
}

Tensor seb(const Tensor& detector, const Tensor& lr_em, const BranchParams& p, Activation act, double eps) {
  return extraction_branch(detector, lr_em, p, act, eps);
}

BlockOutput block_forward(const EmbeddingPair& pair, const BlockParams& p, const BlockConfig& cfg, BlockTaps* taps) {
  cfg.validate();
  const bool use_ca = has_cross_attention(cfg.ablation);
  const bool use_sa = has_self_attention(cfg.ablation);
  if ((use_ca && !p.ca) || (use_sa && !p.sa)) {
    throw std::invalid_argument("block parameters do not match ablation " + ablation_name(cfg.ablation));
  }
  const Tensor pe = positional_encoding(p.pe, cfg.pe_grid, pair.grid);

  Tensor enhance;
  if (use_ca) {
    CrossAttentionResult ca = cross_attention_stage(pair, *p.ca, pe, cfg.heads, cfg.ln_eps);
    enhance = ca.enhance;
    if (taps) {
      taps->contour_edge = ca.contour_edge;
      taps->ca_weights = ca.weights;
    }
  } else {
    if (pair.hr_em.shape() != pair.lr_em.shape()) {
      throw ShapeError("hr_em and lr_em differ: " + shape_str(pair.hr_em.shape()) + " vs " +
                       shape_str(pair.lr_em.shape()));
    }
    enhance = layer_norm(add(pair.lr_em, pair.hr_em), p.ln_v.gamma, p.ln_v.beta, cfg.ln_eps);
  }

  Tensor detector = enhance;
  if (use_sa) {
    SelfAttentionResult sa = self_attention_stage(enhance, *p.sa, pe, cfg.heads, cfg.ln_eps);
    detector = sa.semantic_contour;
    if (taps) {
      taps->sa_attended = sa.attended;
      taps->sa_weights = sa.weights;
    }
  }

  BlockOutput out;
  out.detector = detector;
  out.contour = ceeb(detector, pair.hr_em, p.ceeb, cfg.mlp_activation, cfg.ln_eps);
  out.semantic = seb(detector, pair.lr_em, p.seb, cfg.mlp_activation, cfg.ln_eps);
  if (taps) {
    taps->enhance = enhance;
    taps->detector = detector;
    taps->contour = out.contour;
    taps->semantic = out.semantic;
  }
  return out;
}

BlockOutput stack_forward(const ParamStore& store, const EmbeddingPair& pair, const BlockConfig& cfg,
                          std::vector<BlockTaps>* taps) {
  cfg.validate();
  if (taps) taps->assign(cfg.blocks, BlockTaps{});
  EmbeddingPair current = pair;
  BlockOutput out;
  for (std::size_t k = 0; k < cfg.blocks; ++k) {
    out = block_forward(current, block_params(store, k, cfg), cfg, taps ? &(*taps)[k] : nullptr);
    current = EmbeddingPair{out.contour, out.semantic, pair.grid};
  }
  return out;
}

}  // namespace eformer::decoder
