#pragma once

// Matting error measures. Inputs are [H, W] or [1, H, W] mattes in [0, 1].
// Returned values carry the reporting scale: MAD and MSE x 1e3, Grad and
// Conn x 1e-3.

#include <string>
#include <vector>

#include "eformer/tensor.hpp"

namespace eformer::metrics {

inline constexpr double kMadScale = 1e3;
inline constexpr double kMseScale = 1e3;
inline constexpr double kGradScale = 1e-3;
inline constexpr double kConnScale = 1e-3;
inline constexpr double kDefaultSigma = 1.4;
inline constexpr double kDefaultStep = 0.1;

double mad(const Tensor& pred, const Tensor& gt);
double mse(const Tensor& pred, const Tensor& gt);

// Sum over pixels of (|grad pred| - |grad gt|)^2, where grad is a
// first-order Gaussian-derivative filter with replicate borders.
double grad_metric(const Tensor& pred, const Tensor& gt, double sigma = kDefaultSigma);

// Threshold-sweep connectivity error with 4-connectivity.
double conn_metric(const Tensor& pred, const Tensor& gt, double step = kDefaultStep);

// Building blocks, exposed for tests and tools.
struct GaussianDerivative {
  std::size_t halfsize = 0;
  std::vector<double> smooth;      // normalized Gaussian, length 2*halfsize+1
  std::vector<double> derivative;  // normalized first derivative
};
GaussianDerivative gaussian_derivative(double sigma);
// Gradient magnitude map [H*W] of an H x W image.
std::vector<double> gradient_magnitude(const std::vector<double>& img, std::size_t h, std::size_t w, double sigma);
// Labels of the 4-connected components of a binary mask (-1 for background),
// numbered in column-major discovery order; returns the component count.
std::size_t label_components(const std::vector<char>& mask, std::size_t h, std::size_t w, std::vector<int>& labels);

struct MetricsReport {
  double mad = 0.0;
  double mse = 0.0;
  double grad = 0.0;
  double conn = 0.0;
  std::size_t count = 0;

  // "mad=... mse=... grad=... conn=... count=..." one key per line.
  std::string to_text() const;
  std::string to_json() const;
  // Single line in column order MAD, MSE, Grad, Conn.
  std::string row() const;
  static std::string header();
};

MetricsReport evaluate_one(const Tensor& pred, const Tensor& gt);
// Per-image metrics averaged over the set; throws std::invalid_argument on
// empty or mismatched inputs.
MetricsReport evaluate(const std::vector<Tensor>& preds, const std::vector<Tensor>& gts);

}  // namespace eformer::metrics
