#pragma once

// Finite-difference checks over every differentiable op and a tiny
// end-to-end decoder block.

#include <cstdint>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "eformer/tensor.hpp"

namespace eformer::diag {

struct GradCheckEntry {
  std::string name;
  double tol = 1e-4;
  Tensor input;
  std::function<Tensor(const Tensor&)> fn;  // returns a scalar
};

struct GradCheckResult {
  std::string name;
  double tol = 0.0;
  GradCheckReport report;
};

struct SuiteOptions {
  std::uint64_t seed = 0;
  double h = 1e-5;
  bool ops = true;
  bool block = true;
  // Entry whose analytic gradient is negated, to prove the checker bites.
  std::optional<std::string> inject_bug;
  // Only entries whose name contains this substring.
  std::optional<std::string> filter;
};

std::vector<GradCheckEntry> op_entries(std::uint64_t seed);
// Tiny block: N=4 tokens (2x2 grid), B=1, C=8, M=2.
std::vector<GradCheckEntry> block_entries(std::uint64_t seed);

// Identity forward whose backward passes the negated gradient.
Tensor negate_grad(const Tensor& x);

std::vector<GradCheckResult> run_suite(const SuiteOptions& opt);
bool all_passed(const std::vector<GradCheckResult>& results);

}  // namespace eformer::diag
