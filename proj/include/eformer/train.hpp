#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <map>
#include <optional>
#include <ostream>
#include <stdexcept>
#include <string>
#include <vector>

#include "eformer/data.hpp"
#include "eformer/metrics.hpp"
#include "eformer/model.hpp"

namespace eformer::train {

struct TrainingError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct TrainConfig {
  double lr0 = 1e-4;
  double decay = 0.8;
  std::size_t decay_every = 5;
  std::size_t epochs = 25;
  std::size_t batch = 24;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  double weight_decay = 1e-4;
  double grad_clip = 0.0;  // global-norm clip; 0 disables
  std::uint64_t seed = 0;
  bool shuffle = true;
  bool hflip = true;
  std::size_t eval_every = 0;        // 0 means decay_every
  std::size_t checkpoint_every = 1;  // the final epoch is always saved

  void validate() const;
  std::size_t eval_period() const { return eval_every == 0 ? decay_every : eval_every; }
  KeyValues to_kv() const;
  void apply(const KeyValues& kv);
  static std::vector<std::string> keys();
};

// lr0 * decay^floor(epoch / decay_every)
double lr_at(std::size_t epoch, const TrainConfig& cfg);

// Mean binary cross-entropy with predictions clamped to [eps, 1 - eps].
Tensor bce_loss(const Tensor& pred, const Tensor& target, double eps = 1e-7);

// LayerNorm/GroupNorm affine parameters and position tables skip decay.
bool uses_weight_decay(const std::string& param_name);

struct AdamState {
  std::map<std::string, std::vector<double>> m;
  std::map<std::string, std::vector<double>> v;
  std::uint64_t steps = 0;
};

class AdamW {
 public:
  explicit AdamW(const TrainConfig& cfg) : cfg_(cfg) {}
  AdamW(const TrainConfig& cfg, AdamState state) : cfg_(cfg), state_(std::move(state)) {}

  // Applies one update with learning rate `lr` from the accumulated grads.
  void step(ParamStore& params, double lr);
  const AdamState& state() const { return state_; }

 private:
  TrainConfig cfg_;
  AdamState state_;
};

// Throws TrainingError naming the first parameter whose value or gradient
// is not finite. `context` prefixes the message.
void check_finite(const ParamStore& params, const std::string& context);

// One forward, backward and optimizer update. Returns the loss.
double train_step(EFormer& model, const data::Batch& batch, AdamW& opt, double lr, double grad_clip = 0.0);

// Per-sample metrics of the model's mattes against the samples' alphas.
metrics::MetricsReport evaluate_model(const EFormer& model, const std::vector<data::Sample>& samples,
                                      std::size_t batch = 8);

struct EpochRecord {
  std::size_t epoch = 0;  // zero-based
  double lr = 0.0;
  double loss = 0.0;      // mean over the epoch's batches
  std::size_t steps = 0;  // cumulative optimizer steps
  std::optional<metrics::MetricsReport> metrics;

  std::string to_line() const;
};

struct TrainState {
  std::size_t epoch = 0;  // next epoch to run
  AdamState opt;
};

struct FitOptions {
  std::optional<std::filesystem::path> out_dir;  // checkpoints and train.log
  std::ostream* log = nullptr;                   // echo of the log lines
  std::size_t max_steps = 0;                     // stop after this many steps; 0 = no limit
  std::size_t height = 64;
  std::size_t width = 64;
};

struct FitResult {
  std::vector<EpochRecord> log;
  std::vector<std::filesystem::path> checkpoints;
};

// "checkpoint_epochNNNN.ckpt", NNNN = completed epochs.
std::string checkpoint_name(std::size_t epoch);

// Trains from state.epoch up to cfg.epochs (or max_steps), updating `model`
// and `state` in place. With nothing left to run it only saves the current
// state as a checkpoint.
FitResult fit(EFormer& model, TrainState& state, const TrainConfig& cfg, const data::SourceSet& train_set,
              const std::vector<data::Sample>* eval_set, const FitOptions& opt);

}  // namespace eformer::train
