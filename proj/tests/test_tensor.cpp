#include <cmath>
#include <random>

#include "doctest.h"
#include "eformer/param_store.hpp"
#include "eformer/tensor.hpp"
#include "oracles.hpp"

using namespace eformer;
using oracle::max_abs_diff;
using oracle::values;

TEST_CASE("matmul examples") {
  const Tensor id = Tensor::from({2, 2}, {1, 0, 0, 1});
  const Tensor m = Tensor::from({2, 2}, {1, 2, 3, 4});
  CHECK(values(matmul(id, m)) == values(m));
  CHECK(matmul(Tensor::from({1, 2}, {1, 2}), Tensor::from({2, 1}, {3, 4})).item() == 11.0);
  std::mt19937_64 rng(1);
  const Tensor z = matmul(Tensor::zeros({2, 3}), oracle::random_tensor({3, 4}, rng));
  CHECK(z.shape() == Shape{2, 4});
  for (double v : z.data()) CHECK(v == 0.0);
}

TEST_CASE("matmul shape errors name both shapes") {
  try {
    matmul(Tensor::zeros({2, 3}), Tensor::zeros({4, 5}));
    FAIL("expected ShapeError");
  } catch (const ShapeError& e) {
    const std::string msg = e.what();
    CHECK(msg.find("[2,3]") != std::string::npos);
    CHECK(msg.find("[4,5]") != std::string::npos);
  }
}

TEST_CASE("batched matmul broadcasts against a naive loop") {
  std::mt19937_64 rng(2);
  const Tensor a = oracle::random_tensor({2, 1, 3, 4}, rng);
  const Tensor b = oracle::random_tensor({3, 4, 5}, rng);
  const Tensor c = matmul(a, b);
  REQUIRE(c.shape() == Shape{2, 3, 3, 5});
  for (std::size_t i = 0; i < 2; ++i)
    for (std::size_t j = 0; j < 3; ++j)
      for (std::size_t r = 0; r < 3; ++r)
        for (std::size_t s = 0; s < 5; ++s) {
          double acc = 0.0;
          for (std::size_t t = 0; t < 4; ++t) acc += a.at({i, 0, r, t}) * b.at({j, t, s});
          CHECK(c.at({i, j, r, s}) == doctest::Approx(acc).epsilon(1e-13));
        }
}

TEST_CASE("softmax examples and invariants") {
  CHECK(values(softmax(Tensor::from({2}, {0, 0}), 0)) == std::vector<double>{0.5, 0.5});
  const Tensor s = softmax(Tensor::from({2}, {std::log(2.0), 0.0}), 0);
  CHECK(s.data()[0] == doctest::Approx(2.0 / 3.0).epsilon(1e-15));
  CHECK(s.data()[1] == doctest::Approx(1.0 / 3.0).epsilon(1e-15));
  CHECK(softmax(Tensor::from({1}, {7}), 0).item() == 1.0);

  std::mt19937_64 rng(3);
  const Tensor x = oracle::random_tensor({4, 5, 6}, rng, -20, 20);
  for (std::size_t axis = 0; axis < 3; ++axis) {
    const Tensor y = softmax(x, axis);
    const Tensor shifted = softmax(add_scalar(x, 123.0), axis);
    CHECK(max_abs_diff(y, shifted) < 1e-6);
    for (double v : y.data()) CHECK(v > 0.0);
  }
  const Tensor y = softmax(x, 2);
  for (std::size_t i = 0; i < 4; ++i)
    for (std::size_t j = 0; j < 5; ++j) {
      double acc = 0.0;
      for (std::size_t k = 0; k < 6; ++k) acc += y.at({i, j, k});
      CHECK(std::abs(acc - 1.0) < 1e-6);
    }
}

TEST_CASE("layer_norm examples") {
  const Tensor one = Tensor::full({2}, 1.0), zero = Tensor::zeros({2});
  const Tensor y = layer_norm(Tensor::from({1, 2}, {1, 3}), one, zero, 0.0);
  CHECK(values(y) == std::vector<double>{-1.0, 1.0});
  const Tensor c = layer_norm(Tensor::from({1, 3}, {5, 5, 5}), Tensor::full({3}, 1.0), Tensor::zeros({3}));
  for (double v : c.data()) CHECK(v == 0.0);
  std::mt19937_64 rng(4);
  const Tensor d = layer_norm(oracle::random_tensor({3, 4}, rng), Tensor::zeros({4}), Tensor::full({4}, 2.0));
  for (double v : d.data()) CHECK(v == 2.0);
  CHECK_THROWS_AS(layer_norm(Tensor::zeros({2, 3}), one, zero), ShapeError);
}

TEST_CASE("layer_norm pre-affine statistics") {
  std::mt19937_64 rng(5);
  const Tensor y = normalize_last(oracle::random_tensor({16, 12}, rng, -2, 2), 1e-5);
  for (std::size_t i = 0; i < 16; ++i) {
    double mu = 0.0, var = 0.0;
    for (std::size_t k = 0; k < 12; ++k) mu += y.at({i, k});
    mu /= 12;
    for (std::size_t k = 0; k < 12; ++k) var += (y.at({i, k}) - mu) * (y.at({i, k}) - mu);
    var /= 12;
    CHECK(std::abs(mu) < 1e-6);
    CHECK(std::abs(var - 1.0) < 1e-4);
  }
}

TEST_CASE("conv2d examples") {
  std::mt19937_64 rng(6);
  const Tensor x = oracle::random_tensor({1, 1, 4, 5}, rng);
  CHECK(values(conv2d(x, Tensor::full({1, 1, 1, 1}, 1.0), Tensor::zeros({1}))) == values(x));

  const Tensor c = conv2d(Tensor::full({1, 1, 5, 5}, 0.7), Tensor::full({1, 1, 3, 3}, 1.0), Tensor());
  REQUIRE(c.shape() == Shape{1, 1, 3, 3});
  for (double v : c.data()) CHECK(v == doctest::Approx(6.3).epsilon(1e-15));

  const Tensor z = conv2d(x, Tensor::zeros({2, 1, 3, 3}), Tensor::from({2}, {0.25, -1.5}), {.stride = 1, .padding = 1});
  REQUIRE(z.shape() == Shape{1, 2, 4, 5});
  for (std::size_t i = 0; i < 20; ++i) {
    CHECK(z.data()[i] == 0.25);
    CHECK(z.data()[20 + i] == -1.5);
  }
  CHECK_THROWS_AS(conv2d(x, Tensor::zeros({1, 2, 3, 3}), Tensor()), ShapeError);
}

TEST_CASE("conv2d agrees with a naive loop oracle") {
  std::mt19937_64 rng(7);
  for (auto [stride, pad] : std::vector<std::pair<std::size_t, std::size_t>>{{1, 0}, {1, 1}, {2, 1}, {2, 0}}) {
    CAPTURE(stride);
    CAPTURE(pad);
    const Tensor x = oracle::random_tensor({2, 3, 5, 5}, rng);
    const Tensor w = oracle::random_tensor({4, 3, 3, 3}, rng);
    const Tensor b = oracle::random_tensor({4}, rng);
    const Tensor y = conv2d(x, w, b, {.stride = stride, .padding = pad});
    std::size_t oh = 0, ow = 0;
    const auto want = oracle::conv2d(values(x), 2, 3, 5, 5, values(w), 4, 3, 3, values(b), stride, pad, oh, ow);
    CHECK(y.shape() == Shape{2, 4, oh, ow});
    CHECK(max_abs_diff(y, want) < 1e-10);
  }
}

TEST_CASE("bilinear_resize examples") {
  const Tensor one = Tensor::full({1, 1, 1, 1}, 0.3);
  const Tensor flat = bilinear_resize(one, 4, 7);
  for (double v : flat.data()) CHECK(v == 0.3);
  std::mt19937_64 rng(8);
  const Tensor x = oracle::random_tensor({1, 2, 3, 4}, rng);
  CHECK(values(bilinear_resize(x, 3, 4)) == values(x));
  CHECK(values(bilinear_resize(x, 3, 4, true)) == values(x));
  const Tensor col = bilinear_resize(Tensor::from({1, 1, 2, 1}, {0, 2}), 3, 1, true);
  CHECK(values(col) == std::vector<double>{0, 1, 2});
  const Tensor up = bilinear_resize(x, 7, 5);
  for (std::size_t c = 0; c < 2; ++c) {
    const std::vector<double> plane(x.data().begin() + c * 12, x.data().begin() + (c + 1) * 12);
    const auto want = oracle::bilinear(plane, 3, 4, 7, 5);
    const std::vector<double> got(up.data().begin() + c * 35, up.data().begin() + (c + 1) * 35);
    CHECK(max_abs_diff(got, want) < 1e-14);
  }
}

TEST_CASE("elementwise examples") {
  CHECK(sigmoid(Tensor::scalar(0.0)).item() == 0.5);
  std::mt19937_64 rng(9);
  const Tensor x = oracle::random_tensor({3, 4}, rng);
  CHECK(values(add(x, Tensor::zeros({3, 4}))) == values(x));
  CHECK(values(relu(Tensor::from({2}, {-1, 2}))) == std::vector<double>{0, 2});
  CHECK(gelu(Tensor::scalar(0.0)).item() == 0.0);
  CHECK(gelu(Tensor::scalar(1.0)).item() == doctest::Approx(0.8413447460685429).epsilon(1e-14));
  CHECK_THROWS_AS(log(Tensor::from({2}, {1.0, 0.0})), DomainError);
  CHECK_THROWS_AS(add(Tensor::zeros({2, 3}), Tensor::zeros({3, 2})), ShapeError);
  const Tensor m = mean(x);
  double acc = 0.0;
  for (double v : x.data()) acc += v;
  CHECK(m.item() == doctest::Approx(acc / 12).epsilon(1e-15));
}

TEST_CASE("layout round trips are exact") {
  std::mt19937_64 rng(10);
  const Tensor x = oracle::random_tensor({2, 3, 4}, rng);
  CHECK(values(reshape(reshape(x, {6, 4}), {2, 3, 4})) == values(x));
  CHECK(values(transpose(transpose(x, 0, 2), 0, 2)) == values(x));
  CHECK(values(permute(permute(x, {2, 0, 1}), {1, 2, 0})) == values(x));
  const Tensor c = concat({narrow(x, 1, 0, 1), narrow(x, 1, 1, 2)}, 1);
  CHECK(values(c) == values(x));
}

TEST_CASE("backward examples") {
  const Tensor x = Tensor::from({3}, {0.1, -2, 5}, true);
  sum(x).backward();
  CHECK(std::vector<double>(x.grad().begin(), x.grad().end()) == std::vector<double>{1, 1, 1});

  const Tensor y = Tensor::from({2}, {1, 2}, true);
  sum(mul(y, y)).backward();
  CHECK(std::vector<double>(y.grad().begin(), y.grad().end()) == std::vector<double>{2, 4});

  const Tensor p = Tensor::from({2}, {1, 1}, true);
  const Tensor q = Tensor::from({2}, {3, 4}, true);
  sum(q).backward();
  for (double g : p.grad()) CHECK(g == 0.0);

  CHECK_THROWS_AS(mul(y, y).backward(), ShapeError);
}

TEST_CASE("backward accumulates into leaves until zeroed") {
  Tensor x = Tensor::from({2}, {1, 2}, true);
  sum(scale(x, 3.0)).backward();
  sum(scale(x, 3.0)).backward();
  CHECK(x.grad()[0] == 6.0);
  x.zero_grad();
  sum(scale(x, 3.0)).backward();
  CHECK(x.grad()[0] == 3.0);
}

TEST_CASE("no-grad mode records nothing") {
  const Tensor x = Tensor::from({2}, {1, 2}, true);
  NoGradGuard g;
  CHECK_FALSE(grad_mode_enabled());
  CHECK_FALSE(mul(x, x).requires_grad());
}

TEST_CASE("grad_check examples") {
  std::mt19937_64 rng(12);
  const Tensor x = oracle::random_tensor({7}, rng, -2, 2);
  CHECK(grad_check([](const Tensor& t) { return sum(t); }, x).max_rel_error < 1e-8);

  const auto r = grad_check([](const Tensor& t) { return sum(softmax(t, 0)); }, x);
  CHECK(r.passed);
  CHECK(std::abs(r.worst_analytic) < 1e-12);

  const Tensor w = oracle::random_tensor({5, 1}, rng);
  const Tensor g = oracle::random_tensor({4, 1}, rng, 0, 1);
  const Tensor in = oracle::random_tensor({4, 5}, rng);
  auto bce = [&](const Tensor& wt) {
    const Tensor m = sigmoid(matmul(in, wt));
    const Tensor ll = add(mul(g, log(m)), mul(add_scalar(neg(g), 1.0), log(add_scalar(neg(m), 1.0))));
    return neg(mean(ll));
  };
  CHECK(grad_check(bce, w, 1e-5, 1e-4).max_rel_error < 1e-4);
  CHECK(values(w) == values(w.clone()));
}

TEST_CASE("param store iterates in sorted order and rejects duplicates") {
  ParamStore s;
  s.add("b/x", Tensor::zeros({2}));
  s.add("a/y", Tensor::zeros({3}));
  CHECK(s.begin()->first == "a/y");
  CHECK(s.get("b/x").requires_grad());
  CHECK_THROWS_AS(s.add("a/y", Tensor::zeros({1})), std::invalid_argument);
  CHECK_THROWS_AS(s.get("missing"), std::out_of_range);
  CHECK(s.scalar_count() == 5);
  CHECK(s.scalar_count("b/") == 2);
}
