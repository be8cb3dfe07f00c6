#include "eformer/gradcheck_suite.hpp"

#include <random>
#include <stdexcept>

#include "../tensor/tensor_impl.hpp"
#include "eformer/param_store.hpp"
#include "eformer/scd_block.hpp"
#include "eformer/train.hpp"

namespace eformer::diag {

namespace {

using decoder::BlockConfig;

class Sampler {
 public:
  explicit Sampler(std::uint64_t seed) : rng_(seed) {}

  Tensor uniform(const Shape& s, double lo, double hi) {
    std::uniform_real_distribution<double> d(lo, hi);
    std::vector<double> v(shape_numel(s));
    for (auto& x : v) x = d(rng_);
    return Tensor::from(s, std::move(v));
  }

  // Values with |v| in [0.1, 1], away from the kinks of relu and clamp.
  Tensor away_from_zero(const Shape& s) {
    std::uniform_real_distribution<double> mag(0.1, 1.0);
    std::bernoulli_distribution sign(0.5);
    std::vector<double> v(shape_numel(s));
    for (auto& x : v) x = sign(rng_) ? mag(rng_) : -mag(rng_);
    return Tensor::from(s, std::move(v));
  }

 private:
  std::mt19937_64 rng_;
};

// Contracts an op output with fixed random weights so every output element
// contributes a distinct sensitivity.
std::function<Tensor(const Tensor&)> probe(std::function<Tensor(const Tensor&)> op, const Shape& out_shape,
                                           std::uint64_t seed) {
  const Tensor weights = Sampler(seed).uniform(out_shape, -1.0, 1.0);
  return [op = std::move(op), weights](const Tensor& x) { return sum(mul(op(x), weights)); };
}

Shape out_shape_of(const std::function<Tensor(const Tensor&)>& op, const Tensor& x) {
  NoGradGuard guard;
  return op(x).shape();
}

void add_entry(std::vector<GradCheckEntry>& out, const std::string& name, Tensor input,
               std::function<Tensor(const Tensor&)> op, std::uint64_t seed, double tol = 1e-4) {
  const Shape s = out_shape_of(op, input);
  out.push_back({name, tol, std::move(input), probe(std::move(op), s, seed)});
}

}  // namespace

Tensor negate_grad(const Tensor& x) {
  return detail::make_result(x.shape(), {x.data().begin(), x.data().end()}, {x}, [x](TensorImpl& self) {
    if (!detail::needs_grad(x)) return;
    auto& g = detail::grad_of(x);
    for (std::size_t i = 0; i < g.size(); ++i) g[i] -= self.grad[i];
  });
}

std::vector<GradCheckEntry> op_entries(std::uint64_t seed) {
  Sampler s(seed);
  std::vector<GradCheckEntry> e;
  std::uint64_t k = seed * 1000 + 1;

  const Tensor a = s.uniform({2, 3, 4}, -1.0, 1.0);
  const Tensor b = s.uniform({2, 3, 4}, -1.0, 1.0);
  const Tensor row = s.uniform({4}, -1.0, 1.0);
  add_entry(e, "add", a.clone(), [b](const Tensor& x) { return add(x, b); }, k++);
  add_entry(e, "add/broadcast", row.clone(), [a](const Tensor& x) { return add(a, x); }, k++);
  add_entry(e, "sub", a.clone(), [b](const Tensor& x) { return sub(b, x); }, k++);
  add_entry(e, "mul", a.clone(), [b](const Tensor& x) { return mul(x, b); }, k++);
  add_entry(e, "mul/broadcast", row.clone(), [a](const Tensor& x) { return mul(a, x); }, k++);
  add_entry(e, "mul/self", a.clone(), [](const Tensor& x) { return mul(x, x); }, k++);
  add_entry(e, "scale", a.clone(), [](const Tensor& x) { return scale(x, -1.7); }, k++);
  add_entry(e, "add_scalar", a.clone(), [](const Tensor& x) { return add_scalar(x, 0.3); }, k++);
  add_entry(e, "neg", a.clone(), [](const Tensor& x) { return neg(x); }, k++);
  add_entry(e, "relu", s.away_from_zero({2, 3, 4}), [](const Tensor& x) { return relu(x); }, k++);
  add_entry(e, "gelu", a.clone(), [](const Tensor& x) { return gelu(x); }, k++);
  add_entry(e, "sigmoid", a.clone(), [](const Tensor& x) { return sigmoid(x); }, k++);
  add_entry(e, "log", s.uniform({2, 3, 4}, 0.2, 2.0), [](const Tensor& x) { return log(x); }, k++);
  add_entry(e, "exp", a.clone(), [](const Tensor& x) { return exp(x); }, k++);
  add_entry(e, "clamp", s.away_from_zero({2, 3, 4}), [](const Tensor& x) { return clamp(x, -0.5, 0.05); }, k++);
  add_entry(e, "clamp/interior", a.clone(), [](const Tensor& x) { return clamp(x, -2.0, 2.0); }, k++);
  add_entry(e, "sum", a.clone(), [](const Tensor& x) { return sum(x); }, k++);
  add_entry(e, "mean", a.clone(), [](const Tensor& x) { return mean(x); }, k++);
  add_entry(e, "reshape", a.clone(), [](const Tensor& x) { return reshape(x, {6, 4}); }, k++);
  add_entry(e, "permute", a.clone(), [](const Tensor& x) { return permute(x, {2, 0, 1}); }, k++);
  add_entry(e, "transpose", a.clone(), [](const Tensor& x) { return transpose(x, 0, 2); }, k++);
  add_entry(e, "concat", a.clone(), [b](const Tensor& x) { return concat({b, x, x}, 1); }, k++);
  add_entry(e, "narrow", a.clone(), [](const Tensor& x) { return narrow(x, 2, 1, 2); }, k++);

  const Tensor m_rhs = s.uniform({4, 5}, -1.0, 1.0);
  const Tensor m_lhs = s.uniform({2, 3, 4}, -1.0, 1.0);
  add_entry(e, "matmul/lhs", m_lhs.clone(), [m_rhs](const Tensor& x) { return matmul(x, m_rhs); }, k++);
  add_entry(e, "matmul/rhs", m_rhs.clone(), [m_lhs](const Tensor& x) { return matmul(m_lhs, x); }, k++);
  const Tensor bm = s.uniform({2, 1, 4, 3}, -1.0, 1.0);
  add_entry(e, "matmul/batched", s.uniform({3, 3, 2}, -1.0, 1.0), [bm](const Tensor& x) { return matmul(bm, x); },
            k++);

  const Tensor lw = s.uniform({4, 6}, -1.0, 1.0);
  const Tensor lb = s.uniform({6}, -1.0, 1.0);
  add_entry(e, "linear/input", m_lhs.clone(), [lw, lb](const Tensor& x) { return linear(x, lw, lb); }, k++);
  add_entry(e, "linear/weight", lw.clone(), [m_lhs, lb](const Tensor& x) { return linear(m_lhs, x, lb); }, k++);
  add_entry(e, "linear/bias", lb.clone(), [m_lhs, lw](const Tensor& x) { return linear(m_lhs, lw, x); }, k++);

  add_entry(e, "softmax/last", a.clone(), [](const Tensor& x) { return softmax(x, 2); }, k++);
  add_entry(e, "softmax/middle", a.clone(), [](const Tensor& x) { return softmax(x, 1); }, k++);
  add_entry(e, "normalize_last", a.clone(), [](const Tensor& x) { return normalize_last(x, 1e-5); }, k++);

  const Tensor gamma = s.uniform({4}, 0.5, 1.5);
  const Tensor beta = s.uniform({4}, -0.5, 0.5);
  add_entry(e, "layer_norm/input", a.clone(), [gamma, beta](const Tensor& x) { return layer_norm(x, gamma, beta); },
            k++);
  add_entry(e, "layer_norm/gamma", gamma.clone(), [a, beta](const Tensor& x) { return layer_norm(a, x, beta); }, k++);
  add_entry(e, "layer_norm/beta", beta.clone(), [a, gamma](const Tensor& x) { return layer_norm(a, gamma, x); },
            k++);

  const Tensor img = s.uniform({2, 4, 5, 6}, -1.0, 1.0);
  const Tensor gg = s.uniform({4}, 0.5, 1.5);
  const Tensor gb = s.uniform({4}, -0.5, 0.5);
  add_entry(e, "group_norm/input", img.clone(), [gg, gb](const Tensor& x) { return group_norm(x, 2, gg, gb); }, k++);
  add_entry(e, "group_norm/gamma", gg.clone(), [img, gb](const Tensor& x) { return group_norm(img, 2, x, gb); }, k++);
  add_entry(e, "group_norm/beta", gb.clone(), [img, gg](const Tensor& x) { return group_norm(img, 2, gg, x); }, k++);

  const Tensor cw = s.uniform({3, 4, 3, 3}, -0.5, 0.5);
  const Tensor cb = s.uniform({3}, -0.5, 0.5);
  add_entry(e, "conv2d/input", img.clone(), [cw, cb](const Tensor& x) { return conv2d(x, cw, cb, {1, 1}); }, k++);
  add_entry(e, "conv2d/weight", cw.clone(), [img, cb](const Tensor& x) { return conv2d(img, x, cb, {2, 1}); }, k++);
  add_entry(e, "conv2d/bias", cb.clone(), [img, cw](const Tensor& x) { return conv2d(img, cw, x, {2, 0}); }, k++);
  add_entry(e, "reflect_pad2d", img.clone(), [](const Tensor& x) { return reflect_pad2d(x, 1); }, k++);
  add_entry(e, "bilinear/up", img.clone(), [](const Tensor& x) { return bilinear_resize(x, 9, 13, false); }, k++);
  add_entry(e, "bilinear/down", img.clone(), [](const Tensor& x) { return bilinear_resize(x, 3, 4, false); }, k++);
  add_entry(e, "bilinear/align_corners", img.clone(), [](const Tensor& x) { return bilinear_resize(x, 7, 4, true); },
            k++);

  const Tensor target = s.uniform({2, 3, 4}, 0.0, 1.0);
  e.push_back({"bce_loss", 1e-4, s.uniform({2, 3, 4}, 0.1, 0.9),
               [target](const Tensor& x) { return train::bce_loss(x, target); }});
  return e;
}

std::vector<GradCheckEntry> block_entries(std::uint64_t seed) {
  BlockConfig cfg;
  cfg.channels = 8;
  cfg.heads = 2;
  cfg.blocks = 1;
  cfg.pe_grid = {2, 2};
  ParamStore store;
  Initializer init(seed + 17);
  decoder::init_block_params(store, 0, cfg, init);
  // Non-trivial PE and wider weights so every path carries signal.
  Sampler s(seed + 29);
  for (const auto& [name, t] : store) {
    Tensor p = t;
    if (name.ends_with("/pe") || name.ends_with("/weight") || name.find("/w") != std::string::npos) {
      const Tensor r = s.uniform(p.shape(), -0.5, 0.5);
      std::copy(r.data().begin(), r.data().end(), p.mutable_data().begin());
    }
  }
  const decoder::TokenGrid grid{2, 2};
  const Tensor hr = s.uniform({4, 1, 8}, -1.0, 1.0);
  const Tensor lr = s.uniform({4, 1, 8}, -1.0, 1.0);
  const Tensor out_w = s.uniform({4, 1, 8}, -1.0, 1.0);
  const Tensor out_w2 = s.uniform({4, 1, 8}, -1.0, 1.0);

  auto run = [=](const decoder::EmbeddingPair& pair, const decoder::BlockParams& p) {
    const decoder::BlockOutput out = decoder::block_forward(pair, p, cfg);
    return add(sum(mul(out.contour, out_w)), sum(mul(out.semantic, out_w2)));
  };

  std::vector<GradCheckEntry> e;
  const double tol = 1e-3;
  e.push_back({"block/hr_em", tol, hr.clone(), [=](const Tensor& x) {
                 return run({x, lr, grid}, decoder::block_params(store, 0, cfg));
               }});
  e.push_back({"block/lr_em", tol, lr.clone(), [=](const Tensor& x) {
                 return run({hr, x, grid}, decoder::block_params(store, 0, cfg));
               }});
  auto with_param = [&](const std::string& label, std::function<void(decoder::BlockParams&, const Tensor&)> set,
                        const Tensor& init_value) {
    e.push_back({label, tol, init_value.clone(), [=](const Tensor& x) {
                   decoder::BlockParams p = decoder::block_params(store, 0, cfg);
                   set(p, x);
                   return run({hr, lr, grid}, p);
                 }});
  };
  const decoder::BlockParams base = decoder::block_params(store, 0, cfg);
  with_param("block/ca.wq", [](decoder::BlockParams& p, const Tensor& x) { p.ca->attn.wq = x; }, base.ca->attn.wq);
  with_param("block/ca.wk", [](decoder::BlockParams& p, const Tensor& x) { p.ca->attn.wk = x; }, base.ca->attn.wk);
  with_param("block/ca.wv", [](decoder::BlockParams& p, const Tensor& x) { p.ca->attn.wv = x; }, base.ca->attn.wv);
  with_param("block/sa.wo", [](decoder::BlockParams& p, const Tensor& x) { p.sa->attn.wo = x; }, base.sa->attn.wo);
  with_param("block/pe", [](decoder::BlockParams& p, const Tensor& x) { p.pe = x; }, base.pe);
  with_param("block/ceeb.w1", [](decoder::BlockParams& p, const Tensor& x) { p.ceeb.mlp.w1 = x; }, base.ceeb.mlp.w1);
  with_param("block/seb.ln.gamma", [](decoder::BlockParams& p, const Tensor& x) { p.seb.ln.gamma = x; },
             base.seb.ln.gamma);
  return e;
}

std::vector<GradCheckResult> run_suite(const SuiteOptions& opt) {
  std::vector<GradCheckEntry> entries;
  if (opt.ops) entries = op_entries(opt.seed);
  if (opt.block) {
    for (auto& b : block_entries(opt.seed)) entries.push_back(std::move(b));
  }
  if (opt.inject_bug) {
    bool found = false;
    for (const auto& en : entries) found = found || en.name == *opt.inject_bug;
    if (!found) throw std::invalid_argument("no gradcheck entry named " + *opt.inject_bug);
  }
  std::vector<GradCheckResult> results;
  for (auto& en : entries) {
    if (opt.filter && en.name.find(*opt.filter) == std::string::npos) continue;
    auto fn = en.fn;
    if (opt.inject_bug && en.name == *opt.inject_bug) {
      fn = [inner = en.fn](const Tensor& x) { return inner(negate_grad(x)); };
    }
    results.push_back({en.name, en.tol, grad_check(fn, en.input, opt.h, en.tol)});
  }
  return results;
}

bool all_passed(const std::vector<GradCheckResult>& results) {
  for (const auto& r : results) {
    if (!r.report.passed) return false;
  }
  return !results.empty();
}

}  // namespace eformer::diag
