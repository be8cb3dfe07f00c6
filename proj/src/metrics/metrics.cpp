#include "eformer/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <numbers>
#include <sstream>

#include "json.hpp"

namespace eformer::metrics {

namespace {

struct Plane {
  std::size_t h = 0;
  std::size_t w = 0;
};

Plane plane_of(const Tensor& pred, const Tensor& gt) {
  if (pred.shape() != gt.shape()) {
    throw ShapeError("metric shape mismatch: " + shape_str(pred.shape()) + " vs " + shape_str(gt.shape()));
  }
  const Shape& s = pred.shape();
  if (s.size() == 2) return {s[0], s[1]};
  if (s.size() == 3 && s[0] == 1) return {s[1], s[2]};
  throw ShapeError("metrics expect [H, W] or [1, H, W], got " + shape_str(s));
}

std::vector<double> values(const Tensor& t) { return {t.data().begin(), t.data().end()}; }

}  // namespace

double mad(const Tensor& pred, const Tensor& gt) {
  plane_of(pred, gt);
  const auto p = pred.data();
  const auto g = gt.data();
  double acc = 0.0;
  for (std::size_t i = 0; i < p.size(); ++i) acc += std::abs(p[i] - g[i]);
  return acc / static_cast<double>(p.size()) * kMadScale;
}

double mse(const Tensor& pred, const Tensor& gt) {
  plane_of(pred, gt);
  const auto p = pred.data();
  const auto g = gt.data();
  double acc = 0.0;
  for (std::size_t i = 0; i < p.size(); ++i) acc += (p[i] - g[i]) * (p[i] - g[i]);
  return acc / static_cast<double>(p.size()) * kMseScale;
}

GaussianDerivative gaussian_derivative(double sigma) {
  if (!(sigma > 0.0)) throw std::invalid_argument("sigma must be positive");
  constexpr double eps = 1e-2;
  const double half = std::ceil(sigma * std::sqrt(-2.0 * std::log(std::sqrt(2.0 * std::numbers::pi) * sigma * eps)));
  GaussianDerivative k;
  k.halfsize = static_cast<std::size_t>(std::max(1.0, half));
  const std::size_t n = 2 * k.halfsize + 1;
  k.smooth.resize(n);
  k.derivative.resize(n);
  double ns = 0.0, nd = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    const double x = static_cast<double>(i) - static_cast<double>(k.halfsize);
    const double g = std::exp(-x * x / (2.0 * sigma * sigma)) / (sigma * std::sqrt(2.0 * std::numbers::pi));
    k.smooth[i] = g;
    k.derivative[i] = -x * g / (sigma * sigma);
    ns += g * g;
    nd += k.derivative[i] * k.derivative[i];
  }
  // The 2-D kernel smooth (x) derivative has unit Frobenius norm.
  for (auto& v : k.smooth) v /= std::sqrt(ns);
  for (auto& v : k.derivative) v /= std::sqrt(nd);
  return k;
}

namespace {

// Convolution (flipped kernel) along one axis with replicate borders.
std::vector<double> filter_axis(const std::vector<double>& img, std::size_t h, std::size_t w,
                                const std::vector<double>& kernel, bool along_rows) {
  const long hs = static_cast<long>(kernel.size() / 2);
  std::vector<double> out(h * w, 0.0);
  for (std::size_t y = 0; y < h; ++y) {
    for (std::size_t x = 0; x < w; ++x) {
      double acc = 0.0;
      for (long t = -hs; t <= hs; ++t) {
        const double k = kernel[static_cast<std::size_t>(t + hs)];
        if (along_rows) {
          const long sx = std::clamp(static_cast<long>(x) - t, 0L, static_cast<long>(w) - 1);
          acc += k * img[y * w + static_cast<std::size_t>(sx)];
        } else {
          const long sy = std::clamp(static_cast<long>(y) - t, 0L, static_cast<long>(h) - 1);
          acc += k * img[static_cast<std::size_t>(sy) * w + x];
        }
      }
      out[y * w + x] = acc;
    }
  }
  return out;
}

}  // namespace

std::vector<double> gradient_magnitude(const std::vector<double>& img, std::size_t h, std::size_t w, double sigma) {
  const GaussianDerivative k = gaussian_derivative(sigma);
  const std::vector<double> gx = filter_axis(filter_axis(img, h, w, k.derivative, true), h, w, k.smooth, false);
  const std::vector<double> gy = filter_axis(filter_axis(img, h, w, k.smooth, true), h, w, k.derivative, false);
  std::vector<double> mag(h * w);
  for (std::size_t i = 0; i < h * w; ++i) mag[i] = std::sqrt(gx[i] * gx[i] + gy[i] * gy[i]);
  return mag;
}

double grad_metric(const Tensor& pred, const Tensor& gt, double sigma) {
  const Plane pl = plane_of(pred, gt);
  const std::vector<double> mp = gradient_magnitude(values(pred), pl.h, pl.w, sigma);
  const std::vector<double> mg = gradient_magnitude(values(gt), pl.h, pl.w, sigma);
  double acc = 0.0;
  for (std::size_t i = 0; i < mp.size(); ++i) acc += (mp[i] - mg[i]) * (mp[i] - mg[i]);
  return acc * kGradScale;
}

std::size_t label_components(const std::vector<char>& mask, std::size_t h, std::size_t w, std::vector<int>& labels) {
  labels.assign(h * w, -1);
  std::vector<std::size_t> stack;
  int next = 0;
  for (std::size_t x = 0; x < w; ++x) {
    for (std::size_t y = 0; y < h; ++y) {
      const std::size_t seed = y * w + x;
      if (!mask[seed] || labels[seed] >= 0) continue;
      labels[seed] = next;
      stack.push_back(seed);
      while (!stack.empty()) {
        const std::size_t p = stack.back();
        stack.pop_back();
        const std::size_t py = p / w;
        const std::size_t px = p % w;
        auto visit = [&](std::size_t q) {
          if (mask[q] && labels[q] < 0) {
            labels[q] = next;
            stack.push_back(q);
          }
        };
        if (py > 0) visit(p - w);
        if (py + 1 < h) visit(p + w);
        if (px > 0) visit(p - 1);
        if (px + 1 < w) visit(p + 1);
      }
      ++next;
    }
  }
  return static_cast<std::size_t>(next);
}

double conn_metric(const Tensor& pred, const Tensor& gt, double step) {
  const Plane pl = plane_of(pred, gt);
  if (!(step > 0.0 && step < 1.0)) throw std::invalid_argument("conn step must lie in (0, 1)");
  const auto p = pred.data();
  const auto g = gt.data();
  const std::size_t n = pl.h * pl.w;
  const auto steps = static_cast<std::size_t>(std::floor(1.0 / step + 1e-9));

  std::vector<double> level(n, -1.0);
  std::vector<char> mask(n);
  std::vector<int> labels;
  for (std::size_t k = 1; k <= steps; ++k) {
    const double theta = static_cast<double>(k) * step;
    for (std::size_t i = 0; i < n; ++i) mask[i] = p[i] >= theta && g[i] >= theta;
    const std::size_t count = label_components(mask, pl.h, pl.w, labels);
    int largest = -1;
    if (count > 0) {
      std::vector<std::size_t> sizes(count, 0);
      for (int l : labels) {
        if (l >= 0) ++sizes[static_cast<std::size_t>(l)];
      }
      largest = static_cast<int>(std::max_element(sizes.begin(), sizes.end()) - sizes.begin());
    }
    const double previous = static_cast<double>(k - 1) * step;
    for (std::size_t i = 0; i < n; ++i) {
      const bool in_source = largest >= 0 && labels[i] == largest;
      if (level[i] == -1.0 && !in_source) level[i] = previous;
    }
  }
  double acc = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    const double l = level[i] == -1.0 ? 1.0 : level[i];
    const double dp = p[i] - l;
    const double dg = g[i] - l;
    const double phi_p = 1.0 - (dp >= 0.15 ? dp : 0.0);
    const double phi_g = 1.0 - (dg >= 0.15 ? dg : 0.0);
    acc += std::abs(phi_p - phi_g);
  }
  return acc * kConnScale;
}

std::string MetricsReport::header() { return "MAD       MSE       Grad      Conn"; }

std::string MetricsReport::row() const {
  char buf[128];
  std::snprintf(buf, sizeof buf, "%-9.4f %-9.4f %-9.4f %-9.4f", mad, mse, grad, conn);
  return buf;
}

std::string MetricsReport::to_text() const {
  std::ostringstream os;
  os.precision(17);
  os << "mad=" << mad << "\nmse=" << mse << "\ngrad=" << grad << "\nconn=" << conn << "\ncount=" << count << "\n";
  return os.str();
}

std::string MetricsReport::to_json() const {
  nlohmann::ordered_json j;
  j["mad"] = mad;
  j["mse"] = mse;
  j["grad"] = grad;
  j["conn"] = conn;
  j["count"] = count;
  return j.dump();
}

MetricsReport evaluate_one(const Tensor& pred, const Tensor& gt) {
  return {mad(pred, gt), mse(pred, gt), grad_metric(pred, gt), conn_metric(pred, gt), 1};
}

MetricsReport evaluate(const std::vector<Tensor>& preds, const std::vector<Tensor>& gts) {
  if (preds.size() != gts.size()) {
    throw std::invalid_argument("evaluate got " + std::to_string(preds.size()) + " predictions and " +
                                std::to_string(gts.size()) + " ground truths");
  }
  if (preds.empty()) throw std::invalid_argument("evaluate needs at least one pair");
  MetricsReport total;
  for (std::size_t i = 0; i < preds.size(); ++i) {
    const MetricsReport r = evaluate_one(preds[i], gts[i]);
    total.mad += r.mad;
    total.mse += r.mse;
    total.grad += r.grad;
    total.conn += r.conn;
  }
  const double n = static_cast<double>(preds.size());
  total.mad /= n;
  total.mse /= n;
  total.grad /= n;
  total.conn /= n;
  total.count = preds.size();
  return total;
}

}  // namespace eformer::metrics
