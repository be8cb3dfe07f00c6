#pragma once

// Ablation matrix: attention-layer rows (CA only, SA only, both) and
// pyramid-level rows ((8,16), (4,8), (4,16)), each trained for the same
// step budget and evaluated on a fixed set.

#include <ostream>
#include <string>
#include <vector>

#include "eformer/data.hpp"
#include "eformer/metrics.hpp"
#include "eformer/model.hpp"
#include "eformer/train.hpp"

namespace eformer::train {

struct AblationRow {
  std::string section;  // "attention" or "levels"
  std::string label;
  decoder::Ablation ablation = decoder::Ablation::Full;
  int hr_level = 8;
  int lr_level = 16;
  std::string config_hash;
  bool has_cross_attention = false;  // read back from the built parameter set
  bool has_self_attention = false;
  double final_loss = 0.0;
  metrics::MetricsReport report;
};

struct AblationOptions {
  std::size_t steps = 100;
  std::size_t height = 64;
  std::size_t width = 64;
  std::ostream* log = nullptr;
};

struct AblationTable {
  std::vector<AblationRow> rows;

  const AblationRow& find(const std::string& section, decoder::Ablation a, int hr, int lr) const;
  // Full model MAD <= both single-attention MADs.
  bool attention_trend_holds() const;
  std::string to_text() const;
  std::string to_json() const;
};

// FNV-1a over the resolved model and training configuration.
std::string config_hash(const ModelConfig& model, const TrainConfig& train);

AblationTable run_ablation_matrix(const ModelConfig& base, const TrainConfig& train, const data::SourceSet& train_set,
                                  const std::vector<data::Sample>& eval_set, const AblationOptions& opt);

}  // namespace eformer::train
