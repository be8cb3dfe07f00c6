#include "eformer/model.hpp"

#include <sstream>

namespace eformer {

namespace {

std::size_t parse_size(const std::string& key, const std::string& v) {
  try {
    std::size_t pos = 0;
    const long long n = std::stoll(v, &pos);
    if (pos != v.size() || n < 0) throw std::invalid_argument("");
    return static_cast<std::size_t>(n);
  } catch (const std::exception&) {
    throw std::invalid_argument("invalid integer for " + key + ": '" + v + "'");
  }
}

}  // namespace

void ModelConfig::validate() const {
  decoder.validate();
  encoder::validate_levels(hr_level, lr_level);
  if (res_h % 16 != 0 || res_w % 16 != 0 || res_h == 0 || res_w == 0) {
    throw encoder::ResolutionError("model resolution " + std::to_string(res_h) + "x" + std::to_string(res_w) +
                                   " is not a positive multiple of 16");
  }
}

ModelConfig ModelConfig::desk() {
  ModelConfig cfg;
  cfg.decoder.channels = 64;
  cfg.decoder.heads = 8;
  cfg.decoder.blocks = 2;
  cfg.decoder.pe_grid = EFormer::token_grid(cfg.res_h, cfg.res_w);
  return cfg;
}

namespace {
ModelConfig normalized(ModelConfig cfg) {
  cfg.decoder.pe_grid = EFormer::token_grid(cfg.res_h, cfg.res_w);
  cfg.validate();
  return cfg;
}
}  // namespace

std::vector<std::string> ModelConfig::keys() {
  return {"model.enc_channels", "model.enc_groups",      "model.enc_activation", "model.channels",
          "model.heads",        "model.blocks",          "model.ablation",       "model.mlp_ratio",
          "model.mlp_activation", "model.head_activation", "model.hr_level",     "model.lr_level",
          "model.res_h",        "model.res_w"};
}

KeyValues ModelConfig::to_kv() const {
  KeyValues kv;
  std::ostringstream ch;
  for (std::size_t i = 0; i < encoder.channels.size(); ++i) ch << (i ? "," : "") << encoder.channels[i];
  kv["model.enc_channels"] = ch.str();
  kv["model.enc_groups"] = std::to_string(encoder.groups);
  kv["model.enc_activation"] = activation_name(encoder.activation);
  kv["model.channels"] = std::to_string(decoder.channels);
  kv["model.heads"] = std::to_string(decoder.heads);
  kv["model.blocks"] = std::to_string(decoder.blocks);
  kv["model.ablation"] = decoder::ablation_name(decoder.ablation);
  kv["model.mlp_ratio"] = std::to_string(decoder.mlp_ratio);
  kv["model.mlp_activation"] = activation_name(decoder.mlp_activation);
  kv["model.head_activation"] = activation_name(head_activation);
  kv["model.hr_level"] = std::to_string(hr_level);
  kv["model.lr_level"] = std::to_string(lr_level);
  kv["model.res_h"] = std::to_string(res_h);
  kv["model.res_w"] = std::to_string(res_w);
  return kv;
}

void ModelConfig::apply(const KeyValues& kv) {
  for (const auto& [key, v] : kv) {
    if (key.rfind("model.", 0) != 0) continue;
    if (key == "model.enc_channels") {
      std::stringstream ss(v);
      std::string item;
      std::size_t i = 0;
      while (std::getline(ss, item, ',')) {
        if (i >= encoder.channels.size()) throw std::invalid_argument("model.enc_channels needs 4 values");
        encoder.channels[i++] = parse_size(key, item);
      }
      if (i != encoder.channels.size()) throw std::invalid_argument("model.enc_channels needs 4 values");
    } else if (key == "model.enc_groups") {
      encoder.groups = parse_size(key, v);
    } else if (key == "model.enc_activation") {
      encoder.activation = parse_activation(v);
    } else if (key == "model.channels") {
      decoder.channels = parse_size(key, v);
    } else if (key == "model.heads") {
      decoder.heads = parse_size(key, v);
    } else if (key == "model.blocks") {
      decoder.blocks = parse_size(key, v);
    } else if (key == "model.ablation") {
      decoder.ablation = decoder::parse_ablation(v);
    } else if (key == "model.mlp_ratio") {
      decoder.mlp_ratio = parse_size(key, v);
    } else if (key == "model.mlp_activation") {
      decoder.mlp_activation = parse_activation(v);
    } else if (key == "model.head_activation") {
      head_activation = parse_activation(v);
    } else if (key == "model.hr_level") {
      hr_level = static_cast<int>(parse_size(key, v));
    } else if (key == "model.lr_level") {
      lr_level = static_cast<int>(parse_size(key, v));
    } else if (key == "model.res_h") {
      res_h = parse_size(key, v);
    } else if (key == "model.res_w") {
      res_w = parse_size(key, v);
    } else {
      throw std::invalid_argument("unknown model key: " + key);
    }
  }
  decoder.pe_grid = EFormer::token_grid(res_h, res_w);
}

ModelConfig ModelConfig::from_kv(const KeyValues& kv) {
  ModelConfig cfg;
  cfg.apply(kv);
  cfg.validate();
  return cfg;
}

ParamStore EFormer::build_params(const ModelConfig& cfg, std::uint64_t seed) {
  ParamStore store;
  Initializer init(seed);
  encoder::init_params(store, cfg.encoder, init);
  decoder::init_projection_params(store, encoder::level_channels(cfg.encoder, cfg.hr_level),
                                  encoder::level_channels(cfg.encoder, cfg.lr_level), cfg.decoder, init);
  for (std::size_t k = 0; k < cfg.decoder.blocks; ++k) decoder::init_block_params(store, k, cfg.decoder, init);
  predictor::init_params(store, cfg.decoder.channels, encoder::level_channels(cfg.encoder, 4), init);
  return store;
}

EFormer::EFormer(const ModelConfig& cfg, std::uint64_t seed)
    : cfg_(normalized(cfg)), params_(build_params(cfg_, seed)) {}

EFormer::EFormer(const ModelConfig& cfg, ParamStore params) : cfg_(normalized(cfg)) {
  const ParamStore reference = build_params(cfg_, 0);
  for (const auto& [name, ref] : reference) {
    if (!params.contains(name)) throw ArchitectureMismatch("checkpoint lacks parameter " + name);
    const Tensor t = params.get(name);
    if (t.shape() != ref.shape()) {
      throw ArchitectureMismatch("parameter " + name + " has shape " + shape_str(t.shape()) + ", configuration expects " +
                                 shape_str(ref.shape()));
    }
  }
  for (const auto& [name, t] : params) {
    if (!reference.contains(name)) throw ArchitectureMismatch("checkpoint has unexpected parameter " + name);
  }
  params_ = std::move(params);
}

predictor::MattePrediction EFormer::forward(const Tensor& image, ForwardTrace* trace) const {
  encoder::FeaturePyramid pyramid = encoder::encode(params_, cfg_.encoder, image);
  const encoder::LevelPair levels = encoder::select_levels(pyramid, cfg_.hr_level, cfg_.lr_level);
  const decoder::TokenGrid grid = token_grid(image.shape()[2], image.shape()[3]);
  decoder::EmbeddingPair pair =
      decoder::project_flatten(decoder::projection_params(params_), levels.hr, levels.lr, grid);
  std::vector<decoder::BlockTaps> taps;
  decoder::BlockOutput out = decoder::stack_forward(params_, pair, cfg_.decoder, trace ? &taps : nullptr);

  const predictor::SpatialMaps maps = predictor::unflatten(out, grid);
  const Tensor lr_map = decoder::unflatten_tokens(pair.lr_em, grid);
  const Tensor hr_map = decoder::unflatten_tokens(pair.hr_em, grid);
  Tensor fused = predictor::fuse(predictor::fuse_params(params_), maps.semantic, maps.contour, lr_map, hr_map);
  predictor::MattePrediction pred = predictor::head(predictor::head_params(params_), fused, pyramid.f4,
                                                    image.shape()[2], image.shape()[3], cfg_.head_activation);
  if (trace) {
    trace->pyramid = std::move(pyramid);
    trace->pair = std::move(pair);
    trace->output = out;
    trace->taps = std::move(taps);
    trace->fused = fused;
  }
  return pred;
}

std::string EFormer::summary() const {
  std::ostringstream os;
  const decoder::TokenGrid g = cfg_.decoder.pe_grid;
  os << "EFormer\n";
  os << "  resolution: " << cfg_.res_h << "x" << cfg_.res_w << "  token grid: " << g.h << "x" << g.w
     << " (N=" << g.tokens() << ")\n";
  os << "  encoder: channels " << cfg_.encoder.channels[0] << "," << cfg_.encoder.channels[1] << ","
     << cfg_.encoder.channels[2] << "," << cfg_.encoder.channels[3] << "  groups " << cfg_.encoder.groups
     << "  activation " << activation_name(cfg_.encoder.activation) << "  params " << params_.scalar_count("encoder/")
     << "\n";
  os << "  levels: F_HR=1/" << cfg_.hr_level << " F_LR=1/" << cfg_.lr_level << "\n";
  os << "  projection: params " << params_.scalar_count("decoder/proj/") << "\n";
  os << "  decoder: C=" << cfg_.decoder.channels << " M=" << cfg_.decoder.heads << " blocks=" << cfg_.decoder.blocks
     << " ablation=" << decoder::ablation_name(cfg_.decoder.ablation) << " mlp=" << cfg_.decoder.mlp_ratio << "C "
     << activation_name(cfg_.decoder.mlp_activation) << "\n";
  for (std::size_t k = 0; k < cfg_.decoder.blocks; ++k) {
    const std::string p = decoder::block_prefix(k);
    auto yes = [&](const std::string& sub) { return params_.scalar_count(p + sub) > 0 ? "yes" : "no"; };
    os << "  block " << k << ": CA:" << yes("ca/") << " SA:" << yes("sa/") << " CEEB:" << yes("ceeb/")
       << " SEB:" << yes("seb/") << "  params " << params_.scalar_count(p) << "\n";
  }
  os << "  fuse: params " << params_.scalar_count("fuse/") << "\n";
  os << "  head: params " << params_.scalar_count("head/") << "\n";
  os << "  total parameters: " << params_.scalar_count() << "\n";
  return os.str();
}

}  // namespace eformer
