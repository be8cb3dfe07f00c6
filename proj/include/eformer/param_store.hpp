#pragma once

#include <cstdint>
#include <map>
#include <random>
#include <string>

#include "eformer/tensor.hpp"

namespace eformer {

// Named learnable tensors keyed by slash-separated paths. Iteration is in
// sorted-name order, which fixes checkpoint layout and optimizer order.
class ParamStore {
 public:
  using Map = std::map<std::string, Tensor>;

  // Registers `value` (marked requires_grad) and returns the stored handle.
  // Throws std::invalid_argument on a duplicate name.
  Tensor add(const std::string& name, Tensor value);
  // Throws std::out_of_range naming the missing parameter.
  Tensor get(const std::string& name) const;
  bool contains(const std::string& name) const { return params_.count(name) != 0; }

  void zero_grad();
  std::size_t size() const { return params_.size(); }
  std::size_t scalar_count() const;
  // Scalar count of parameters whose name starts with `prefix`.
  std::size_t scalar_count(const std::string& prefix) const;

  Map::const_iterator begin() const { return params_.begin(); }
  Map::const_iterator end() const { return params_.end(); }

 private:
  Map params_;
};

// Deterministic parameter initialization.
class Initializer {
 public:
  explicit Initializer(std::uint64_t seed) : rng_(seed) {}

  // Normal(0, sigma) resampled until |v| <= 2 sigma.
  Tensor truncated_normal(const Shape& shape, double sigma);
  // He-normal for ReLU convolutions: sigma = sqrt(2 / fan_in).
  Tensor he_normal(const Shape& shape, std::size_t fan_in);

 private:
  std::mt19937_64 rng_;
};

}  // namespace eformer
