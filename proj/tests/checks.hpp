#pragma once

// Oracle comparisons shared by the unit tests and the acceptance runner.

#include <cstdint>
#include <random>
#include <string>
#include <vector>

#include "eformer/model.hpp"

namespace checks {

// Overwrites every tensor in the store with uniform values in [lo, hi].
void randomize(eformer::ParamStore& store, std::mt19937_64& rng, double lo = -0.5, double hi = 0.5);

// Tiny decoder setup: grid 2x2 (N=4), C=8, M=2, random weights and PE.
struct TinyBlock {
  eformer::decoder::BlockConfig cfg;
  eformer::ParamStore store;
  eformer::decoder::EmbeddingPair pair;
};
TinyBlock tiny_block(std::uint64_t seed, eformer::decoder::Ablation ablation, std::size_t batch = 2,
                     std::size_t blocks = 1);

// Max |library - straight-line oracle| for each wired stage.
struct WiringErrors {
  double cross_attention = 0.0;  // contour-edge and enhance
  double self_attention = 0.0;   // detector
  double branches = 0.0;         // contour and semantic
  double fuse = 0.0;
  double head = 0.0;
  double block = 0.0;   // whole block_forward
  double stack = 0.0;   // two chained blocks
};
WiringErrors wiring_errors(std::uint64_t seed);

// Max |row sum - 1| over every CA/SA weight row seen in `trials` random
// forwards spread across the 3 ablations x 3 level pairs; `in_open_unit`
// reports whether every weight was strictly inside (0, 1).
struct AttentionRowStats {
  double max_row_error = 0.0;
  std::size_t rows = 0;
  std::size_t trials = 0;
  bool in_open_unit = true;
};
AttentionRowStats attention_rows(std::size_t trials, std::uint64_t seed);

// Forwards a [2,3,h,w] image through every ablation x level combination.
struct ShapeCase {
  std::string label;
  bool ok = false;
  std::string detail;
};
std::vector<ShapeCase> shape_matrix(std::size_t h, std::size_t w);

// Metric oracles on fixtures; values are max absolute deviations.
struct MetricErrors {
  double mad_mse = 0.0;        // against direct sums on random 16x16 pairs
  double grad = 0.0;           // against a naive 2-D convolution
  double conn = 0.0;           // against a flood-fill implementation
  double identical_max = 0.0;  // largest metric on identical pairs
  bool composite_endpoints = false;
};
MetricErrors metric_errors(std::uint64_t seed);

// Independent metric implementations.
double naive_grad(const std::vector<double>& pred, const std::vector<double>& gt, std::size_t h, std::size_t w,
                  double sigma);
double naive_conn(const std::vector<double>& pred, const std::vector<double>& gt, std::size_t h, std::size_t w,
                  double step);

}  // namespace checks
