#include <cmath>
#include <random>

#include "checks.hpp"
#include "doctest.h"
#include "eformer/metrics.hpp"
#include "json.hpp"
#include "oracles.hpp"

using namespace eformer;

TEST_CASE("MAD and MSE examples") {
  std::mt19937_64 rng(1);
  const Tensor g = oracle::random_tensor({1, 4, 4}, rng, 0, 0.9);
  CHECK(metrics::mad(g, g) == 0.0);
  CHECK(metrics::mad(add_scalar(g, 0.001), g) == doctest::Approx(1.0).epsilon(1e-9));
  const Tensor z = Tensor::zeros({1, 2, 2});
  const Tensor d = Tensor::from({1, 2, 2}, {0, 0, 0, 1});
  CHECK(metrics::mad(d, z) == 250.0);
  CHECK(metrics::mse(d, z) == 250.0);
  CHECK(metrics::mse(add_scalar(g, 0.1), g) == doctest::Approx(10.0).epsilon(1e-9));
  CHECK(metrics::mad(d, z) == metrics::mad(z, d));
  CHECK_THROWS_AS(metrics::mad(z, Tensor::zeros({1, 2, 3})), ShapeError);
}

TEST_CASE("Gaussian derivative kernel") {
  const auto k = metrics::gaussian_derivative(1.4);
  CHECK(k.halfsize == 4);
  double ns = 0.0, nd = 0.0, sd = 0.0;
  for (std::size_t i = 0; i < k.smooth.size(); ++i) {
    ns += k.smooth[i] * k.smooth[i];
    nd += k.derivative[i] * k.derivative[i];
    sd += k.derivative[i];
  }
  CHECK(ns == doctest::Approx(1.0));
  CHECK(nd == doctest::Approx(1.0));
  CHECK(std::abs(sd) < 1e-15);
}

TEST_CASE("Grad examples") {
  const Tensor a = Tensor::full({1, 8, 8}, 0.2), b = Tensor::full({1, 8, 8}, 0.7);
  CHECK(metrics::grad_metric(a, b) == doctest::Approx(0.0).epsilon(1e-20));
  CHECK(std::abs(metrics::grad_metric(a, b)) < 1e-20);
  std::mt19937_64 rng(2);
  const Tensor p = oracle::random_tensor({1, 10, 9}, rng, 0, 1), g = oracle::random_tensor({1, 10, 9}, rng, 0, 1);
  CHECK(metrics::grad_metric(p, p) == 0.0);
  CHECK(metrics::grad_metric(p, g) == doctest::Approx(metrics::grad_metric(g, p)).epsilon(1e-14));
  CHECK(metrics::grad_metric(p, g) > 0.0);
  const auto want = checks::naive_grad(oracle::values(p), oracle::values(g), 10, 9, 1.4);
  CHECK(std::abs(metrics::grad_metric(p, g) - want) < 1e-8);
}

TEST_CASE("Conn examples") {
  std::vector<double> disk(64, 0.0);
  for (std::size_t y = 0; y < 8; ++y)
    for (std::size_t x = 0; x < 8; ++x)
      if (std::hypot(double(y) - 3.5, double(x) - 3.5) < 3.0) disk[y * 8 + x] = 1.0;
  const Tensor d = Tensor::from({1, 8, 8}, disk);
  CHECK(metrics::conn_metric(d, d) == 0.0);

  auto blob = disk;
  blob[0] = 1.0;
  const Tensor b = Tensor::from({1, 8, 8}, blob);
  const double got = metrics::conn_metric(b, d);
  CHECK(got > 0.0);
  CHECK(std::abs(got - checks::naive_conn(blob, disk, 8, 8, 0.1)) < 1e-10);
  CHECK_THROWS(metrics::conn_metric(d, d, 0.0));
}

TEST_CASE("component labels follow column-major discovery") {
  // Two components; the right one is seen first in row-major order but
  // second in column-major order.
  const std::vector<char> mask{0, 0, 1, 1, 0, 0, 0, 0, 1, 0, 0, 0};
  std::vector<int> labels;
  CHECK(metrics::label_components(mask, 3, 4, labels) == 2);
  CHECK(labels[8] == 0);
  CHECK(labels[2] == 1);
  CHECK(labels[3] == 1);
}

TEST_CASE("metric oracles on fixtures") {
  const auto e = checks::metric_errors(5);
  CHECK(e.mad_mse < 1e-12);
  CHECK(e.grad < 1e-8);
  CHECK(e.conn < 1e-10);
  CHECK(e.identical_max == 0.0);
  CHECK(e.composite_endpoints);
}

TEST_CASE("evaluate averages per image") {
  const Tensor z = Tensor::zeros({1, 2, 2});
  const Tensor a = Tensor::full({1, 2, 2}, 0.1), b = Tensor::full({1, 2, 2}, 0.3);
  const auto r = metrics::evaluate({a, b}, {z, z});
  CHECK(r.count == 2);
  CHECK(r.mad == doctest::Approx(200.0).epsilon(1e-12));
  const auto one = metrics::evaluate({a}, {a});
  CHECK(one.count == 1);
  CHECK(one.mad == 0.0);
  CHECK(one.conn == 0.0);
  CHECK_THROWS_AS(metrics::evaluate({}, {}), std::invalid_argument);
  CHECK_THROWS_AS(metrics::evaluate({a}, {a, b}), std::invalid_argument);
}

TEST_CASE("report serialization keeps column order") {
  metrics::MetricsReport r{1.5, 2.5, 3.5, 4.5, 2};
  CHECK(metrics::MetricsReport::header().find("MAD") < metrics::MetricsReport::header().find("MSE"));
  CHECK(metrics::MetricsReport::header().find("Grad") < metrics::MetricsReport::header().find("Conn"));
  const auto j = nlohmann::json::parse(r.to_json());
  CHECK(j["mad"] == 1.5);
  CHECK(j["conn"] == 4.5);
  CHECK(j["count"] == 2);
  CHECK(r.to_text().find("grad=") != std::string::npos);
}
