#include "eformer/param_store.hpp"

#include <cmath>
#include <stdexcept>

namespace eformer {

Tensor ParamStore::add(const std::string& name, Tensor value) {
  if (params_.count(name)) throw std::invalid_argument("duplicate parameter name: " + name);
  value.set_requires_grad(true);
  params_.emplace(name, value);
  return value;
}

Tensor ParamStore::get(const std::string& name) const {
  auto it = params_.find(name);
  if (it == params_.end()) throw std::out_of_range("no parameter named " + name);
  return it->second;
}

void ParamStore::zero_grad() {
  for (auto& [name, t] : params_) {
    Tensor handle = t;
    handle.zero_grad();
  }
}

std::size_t ParamStore::scalar_count() const { return scalar_count(""); }

std::size_t ParamStore::scalar_count(const std::string& prefix) const {
  std::size_t n = 0;
  for (const auto& [name, t] : params_) {
    if (name.compare(0, prefix.size(), prefix) == 0) n += t.numel();
  }
  return n;
}

Tensor Initializer::truncated_normal(const Shape& shape, double sigma) {
  std::normal_distribution<double> dist(0.0, sigma);
  std::vector<double> v(shape_numel(shape));
  for (double& x : v) {
    do {
      x = dist(rng_);
    } while (std::abs(x) > 2.0 * sigma);
  }
  return Tensor::from(shape, std::move(v));
}

Tensor Initializer::he_normal(const Shape& shape, std::size_t fan_in) {
  std::normal_distribution<double> dist(0.0, std::sqrt(2.0 / static_cast<double>(fan_in)));
  std::vector<double> v(shape_numel(shape));
  for (double& x : v) x = dist(rng_);
  return Tensor::from(shape, std::move(v));
}

}  // namespace eformer
