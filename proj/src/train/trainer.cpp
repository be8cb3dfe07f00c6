#include <cmath>
#include <cstdio>
#include <fstream>
#include <sstream>

#include "eformer/checkpoint.hpp"
#include "eformer/config.hpp"
#include "eformer/train.hpp"

namespace eformer::train {

using config::format_double;
using config::parse_bool;
using config::parse_double;
using config::parse_size;

void TrainConfig::validate() const {
  if (!(lr0 > 0.0)) throw std::invalid_argument("train.lr0 must be positive");
  if (!(decay > 0.0 && decay <= 1.0)) throw std::invalid_argument("train.decay must lie in (0, 1]");
  if (decay_every < 1) throw std::invalid_argument("train.decay_every must be at least 1");
  if (batch < 1) throw std::invalid_argument("train.batch must be at least 1");
  if (!(beta1 >= 0.0 && beta1 < 1.0) || !(beta2 >= 0.0 && beta2 < 1.0)) {
    throw std::invalid_argument("train.beta1 and train.beta2 must lie in [0, 1)");
  }
  if (!(eps > 0.0)) throw std::invalid_argument("train.eps must be positive");
  if (!(weight_decay >= 0.0)) throw std::invalid_argument("train.weight_decay must be non-negative");
  if (!(grad_clip >= 0.0)) throw std::invalid_argument("train.grad_clip must be non-negative");
  if (checkpoint_every < 1) throw std::invalid_argument("train.checkpoint_every must be at least 1");
}

std::vector<std::string> TrainConfig::keys() {
  return {"train.lr0",        "train.decay",      "train.decay_every", "train.epochs",     "train.batch",
          "train.beta1",      "train.beta2",      "train.eps",         "train.weight_decay", "train.grad_clip",
          "train.seed",       "train.shuffle",    "train.hflip",       "train.eval_every", "train.checkpoint_every"};
}

KeyValues TrainConfig::to_kv() const {
  return {{"train.lr0", format_double(lr0)},
          {"train.decay", format_double(decay)},
          {"train.decay_every", std::to_string(decay_every)},
          {"train.epochs", std::to_string(epochs)},
          {"train.batch", std::to_string(batch)},
          {"train.beta1", format_double(beta1)},
          {"train.beta2", format_double(beta2)},
          {"train.eps", format_double(eps)},
          {"train.weight_decay", format_double(weight_decay)},
          {"train.grad_clip", format_double(grad_clip)},
          {"train.seed", std::to_string(seed)},
          {"train.shuffle", shuffle ? "true" : "false"},
          {"train.hflip", hflip ? "true" : "false"},
          {"train.eval_every", std::to_string(eval_every)},
          {"train.checkpoint_every", std::to_string(checkpoint_every)}};
}

void TrainConfig::apply(const KeyValues& kv) {
  for (const auto& [key, v] : kv) {
    if (key.rfind("train.", 0) != 0) continue;
    if (key == "train.lr0") lr0 = parse_double(key, v);
    else if (key == "train.decay") decay = parse_double(key, v);
    else if (key == "train.decay_every") decay_every = parse_size(key, v);
    else if (key == "train.epochs") epochs = parse_size(key, v);
    else if (key == "train.batch") batch = parse_size(key, v);
    else if (key == "train.beta1") beta1 = parse_double(key, v);
    else if (key == "train.beta2") beta2 = parse_double(key, v);
    else if (key == "train.eps") eps = parse_double(key, v);
    else if (key == "train.weight_decay") weight_decay = parse_double(key, v);
    else if (key == "train.grad_clip") grad_clip = parse_double(key, v);
    else if (key == "train.seed") seed = parse_size(key, v);
    else if (key == "train.shuffle") shuffle = parse_bool(key, v);
    else if (key == "train.hflip") hflip = parse_bool(key, v);
    else if (key == "train.eval_every") eval_every = parse_size(key, v);
    else if (key == "train.checkpoint_every") checkpoint_every = parse_size(key, v);
    else throw config::ConfigError("unknown config key: " + key);
  }
}

double lr_at(std::size_t epoch, const TrainConfig& cfg) {
  const double k = static_cast<double>(epoch / cfg.decay_every);
  return cfg.lr0 / std::pow(1.0 / cfg.decay, k);
}

Tensor bce_loss(const Tensor& pred, const Tensor& target, double eps) {
  if (pred.shape() != target.shape()) {
    throw ShapeError("bce_loss shapes differ: " + shape_str(pred.shape()) + " vs " + shape_str(target.shape()));
  }
  const Tensor m = clamp(pred, eps, 1.0 - eps);
  const Tensor pos = mul(target, log(m));
  const Tensor negative = mul(add_scalar(neg(target), 1.0), log(add_scalar(neg(m), 1.0)));
  return neg(mean(add(pos, negative)));
}

bool uses_weight_decay(const std::string& name) {
  auto ends_with = [&](const std::string& suffix) {
    return name.size() >= suffix.size() && name.compare(name.size() - suffix.size(), suffix.size(), suffix) == 0;
  };
  return !(ends_with("/gamma") || ends_with("/beta") || ends_with("/pe"));
}

void check_finite(const ParamStore& params, const std::string& context) {
  for (const auto& [name, t] : params) {
    for (double v : t.data()) {
      if (!std::isfinite(v)) throw TrainingError(context + ": parameter " + name + " holds a non-finite value");
    }
    if (t.has_grad()) {
      for (double g : t.grad()) {
        if (!std::isfinite(g)) throw TrainingError(context + ": parameter " + name + " has a non-finite gradient");
      }
    }
  }
}

void AdamW::step(ParamStore& params, double lr) {
  ++state_.steps;
  const double t = static_cast<double>(state_.steps);
  const double bc1 = 1.0 - std::pow(cfg_.beta1, t);
  const double bc2 = 1.0 - std::pow(cfg_.beta2, t);
  for (const auto& [name, tensor] : params) {
    Tensor p = tensor;
    if (!p.has_grad()) continue;
    auto& m = state_.m[name];
    auto& v = state_.v[name];
    const std::size_t n = p.numel();
    if (m.size() != n) m.assign(n, 0.0);
    if (v.size() != n) v.assign(n, 0.0);
    const auto g = p.grad();
    auto w = p.mutable_data();
    const double decay = uses_weight_decay(name) ? lr * cfg_.weight_decay : 0.0;
    for (std::size_t i = 0; i < n; ++i) {
      m[i] = cfg_.beta1 * m[i] + (1.0 - cfg_.beta1) * g[i];
      v[i] = cfg_.beta2 * v[i] + (1.0 - cfg_.beta2) * g[i] * g[i];
      const double mhat = m[i] / bc1;
      const double vhat = v[i] / bc2;
      w[i] -= decay * w[i] + lr * mhat / (std::sqrt(vhat) + cfg_.eps);
    }
  }
}

namespace {

void clip_gradients(ParamStore& params, double max_norm) {
  double sq = 0.0;
  for (const auto& [name, t] : params) {
    if (!t.has_grad()) continue;
    for (double g : t.grad()) sq += g * g;
  }
  const double norm = std::sqrt(sq);
  if (norm <= max_norm || norm == 0.0) return;
  const double s = max_norm / norm;
  for (const auto& [name, tensor] : params) {
    Tensor t = tensor;
    if (!t.has_grad()) continue;
    for (double& g : t.mutable_grad()) g *= s;
  }
}

}  // namespace

std::string checkpoint_name(std::size_t epoch) {
  char name[64];
  std::snprintf(name, sizeof name, "checkpoint_epoch%04zu.ckpt", epoch);
  return name;
}

double train_step(EFormer& model, const data::Batch& batch, AdamW& opt, double lr, double grad_clip) {
  ParamStore& params = model.params();
  params.zero_grad();
  const predictor::MattePrediction pred = model.forward(batch.image);
  const Tensor loss = bce_loss(pred.matte, batch.alpha);
  const double value = loss.item();
  loss.backward();
  if (!std::isfinite(value)) {
    check_finite(params, "non-finite loss");
    throw TrainingError("non-finite loss with finite parameters and gradients");
  }
  check_finite(params, "before update");
  if (grad_clip > 0.0) clip_gradients(params, grad_clip);
  opt.step(params, lr);
  check_finite(params, "after update");
  return value;
}

metrics::MetricsReport evaluate_model(const EFormer& model, const std::vector<data::Sample>& samples,
                                      std::size_t batch) {
  if (samples.empty()) throw std::invalid_argument("evaluation set is empty");
  NoGradGuard guard;
  std::vector<Tensor> preds, gts;
  for (std::size_t start = 0; start < samples.size(); start += batch) {
    const std::size_t end = std::min(samples.size(), start + batch);
    std::vector<Tensor> images;
    for (std::size_t i = start; i < end; ++i) images.push_back(samples[i].image);
    const Tensor matte = model.forward(data::stack(images)).matte;
    for (std::size_t i = start; i < end; ++i) {
      preds.push_back(narrow(matte, 0, i - start, 1));
      gts.push_back(samples[i].alpha_gt);
    }
  }
  for (auto& p : preds) p = reshape(p, {1, p.shape()[2], p.shape()[3]});
  return metrics::evaluate(preds, gts);
}

std::string EpochRecord::to_line() const {
  std::ostringstream os;
  os << "epoch=" << epoch << " lr=" << format_double(lr) << " loss=" << format_double(loss) << " steps=" << steps;
  if (metrics) {
    os << " mad=" << format_double(metrics->mad) << " mse=" << format_double(metrics->mse)
       << " grad=" << format_double(metrics->grad) << " conn=" << format_double(metrics->conn);
  }
  return os.str();
}

FitResult fit(EFormer& model, TrainState& state, const TrainConfig& cfg, const data::SourceSet& train_set,
              const std::vector<data::Sample>* eval_set, const FitOptions& opt) {
  cfg.validate();
  FitResult result;
  if (state.epoch >= cfg.epochs) {
    if (opt.out_dir) {
      const std::filesystem::path path = *opt.out_dir / checkpoint_name(state.epoch);
      make_checkpoint(model, cfg, state).save(path);
      result.checkpoints.push_back(path);
    }
    return result;
  }

  data::LoaderOptions lo;
  lo.height = opt.height;
  lo.width = opt.width;
  lo.batch = cfg.batch;
  lo.seed = cfg.seed;
  lo.shuffle = cfg.shuffle;
  lo.hflip = cfg.hflip;
  data::BatchLoader loader(train_set, lo);
  AdamW adam(cfg, state.opt);

  std::ofstream log_file;
  if (opt.out_dir) {
    std::filesystem::create_directories(*opt.out_dir);
    log_file.open(*opt.out_dir / "train.log", std::ios::app);
  }

  bool stop = false;
  while (state.epoch < cfg.epochs && !stop) {
    const std::size_t epoch = state.epoch;
    const double lr = lr_at(epoch, cfg);
    loader.start_epoch(epoch);
    double loss_sum = 0.0;
    std::size_t batches = 0;
    while (auto batch = loader.next()) {
      loss_sum += train_step(model, *batch, adam, lr, cfg.grad_clip);
      ++batches;
      if (opt.max_steps > 0 && adam.state().steps >= opt.max_steps) {
        stop = true;
        break;
      }
    }
    state.epoch = epoch + 1;
    state.opt = adam.state();

    EpochRecord rec;
    rec.epoch = epoch;
    rec.lr = lr;
    rec.loss = batches ? loss_sum / static_cast<double>(batches) : 0.0;
    rec.steps = adam.state().steps;
    const bool last = stop || state.epoch == cfg.epochs;
    if (eval_set && !eval_set->empty() && (state.epoch % cfg.eval_period() == 0 || last)) {
      rec.metrics = evaluate_model(model, *eval_set);
    }
    const std::string line = rec.to_line();
    if (log_file) log_file << line << "\n" << std::flush;
    if (opt.log) *opt.log << line << "\n" << std::flush;
    result.log.push_back(rec);

    if (opt.out_dir && (state.epoch % cfg.checkpoint_every == 0 || last)) {
      const std::filesystem::path path = *opt.out_dir / checkpoint_name(state.epoch);
      make_checkpoint(model, cfg, state).save(path);
      result.checkpoints.push_back(path);
    }
  }
  return result;
}

}  // namespace eformer::train
