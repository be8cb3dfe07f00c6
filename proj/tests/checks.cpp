#include "checks.hpp"

#include <algorithm>
#include <cmath>
#include <deque>
#include <numbers>

#include "eformer/data.hpp"
#include "eformer/metrics.hpp"
#include "oracles.hpp"

namespace checks {

using namespace eformer;
using oracle::Mat;
using oracle::Vec;

void randomize(ParamStore& store, std::mt19937_64& rng, double lo, double hi) {
  std::uniform_real_distribution<double> u(lo, hi);
  for (const auto& [name, t] : store) {
    for (double& v : Tensor(t).mutable_data()) v = u(rng);
  }
}

TinyBlock tiny_block(std::uint64_t seed, decoder::Ablation ablation, std::size_t batch, std::size_t blocks) {
  TinyBlock tb;
  tb.cfg.channels = 8;
  tb.cfg.heads = 2;
  tb.cfg.blocks = blocks;
  tb.cfg.ablation = ablation;
  tb.cfg.pe_grid = {2, 2};
  Initializer init(seed);
  for (std::size_t k = 0; k < blocks; ++k) decoder::init_block_params(tb.store, k, tb.cfg, init);
  std::mt19937_64 rng(seed);
  randomize(tb.store, rng);
  tb.pair.hr_em = oracle::random_tensor({4, batch, 8}, rng);
  tb.pair.lr_em = oracle::random_tensor({4, batch, 8}, rng);
  tb.pair.grid = {2, 2};
  return tb;
}

namespace {

Vec vals(const Tensor& t) { return oracle::values(t); }

oracle::AttentionWeights attention_weights(const decoder::AttentionParams& p) {
  return {vals(p.wq), vals(p.bq), vals(p.wk), vals(p.bk), vals(p.wv), vals(p.bv), vals(p.wo), vals(p.bo)};
}

Mat ln(const Mat& x, const decoder::LayerNormParams& p, double eps) {
  return oracle::layer_norm(x, vals(p.gamma), vals(p.beta), eps);
}

Mat pe_rows(const Tensor& pe) {
  const std::size_t n = pe.shape()[0], c = pe.shape()[2];
  Mat m(n, Vec(c));
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t k = 0; k < c; ++k) m[i][k] = pe.data()[i * c + k];
  return m;
}

Mat branch(const Mat& stream, const Mat& detector, const decoder::BranchParams& p, double eps) {
  Mat x = ln(oracle::add(stream, detector), p.ln, eps);
  Mat h = oracle::linear(x, vals(p.mlp.w1), vals(p.mlp.b1));
  for (auto& r : h)
    for (double& v : r) v = oracle::gelu(v);
  return oracle::linear(h, vals(p.mlp.w2), vals(p.mlp.b2));
}

struct OracleBlock {
  Mat contour_edge, enhance, detector, contour, semantic;
};

OracleBlock oracle_block(const Mat& hr, const Mat& lr, const decoder::BlockParams& p, const decoder::BlockConfig& cfg) {
  const double eps = cfg.ln_eps;
  const Mat pe = pe_rows(p.pe);
  OracleBlock o;
  const Mat v = ln(oracle::add(lr, hr), p.ln_v, eps);
  if (p.ca) {
    const Mat k = oracle::add(ln(hr, p.ca->ln_hr, eps), pe);
    const Mat q = oracle::add(ln(lr, p.ca->ln_lr, eps), pe);
    o.contour_edge = oracle::attention(q, k, v, attention_weights(p.ca->attn), cfg.heads);
    o.enhance = oracle::add(o.contour_edge, v);
  } else {
    o.enhance = v;
  }
  if (p.sa) {
    const Mat vp = ln(o.enhance, p.sa->ln, eps);
    const Mat kq = oracle::add(vp, pe);
    o.detector = oracle::add(oracle::attention(kq, kq, vp, attention_weights(p.sa->attn), cfg.heads), vp);
  } else {
    o.detector = o.enhance;
  }
  o.contour = branch(hr, o.detector, p.ceeb, eps);
  o.semantic = branch(lr, o.detector, p.seb, eps);
  return o;
}

double token_diff(const Tensor& t, std::size_t b, const Mat& m) {
  return oracle::max_abs_diff(oracle::flat(oracle::tokens_of(t, b)), oracle::flat(m));
}

}  // namespace

WiringErrors wiring_errors(std::uint64_t seed) {
  WiringErrors e;
  {
    TinyBlock tb = tiny_block(seed, decoder::Ablation::Full);
    const decoder::BlockParams p = decoder::block_params(tb.store, 0, tb.cfg);
    const auto ca = decoder::cross_attention_stage(tb.pair, *p.ca, p.pe, tb.cfg.heads, tb.cfg.ln_eps);
    const auto sa = decoder::self_attention_stage(ca.enhance, *p.sa, p.pe, tb.cfg.heads, tb.cfg.ln_eps);
    const Tensor contour = decoder::ceeb(sa.semantic_contour, tb.pair.hr_em, p.ceeb, tb.cfg.mlp_activation);
    const Tensor semantic = decoder::seb(sa.semantic_contour, tb.pair.lr_em, p.seb, tb.cfg.mlp_activation);
    decoder::BlockTaps taps;
    const decoder::BlockOutput out = decoder::block_forward(tb.pair, p, tb.cfg, &taps);
    for (std::size_t b = 0; b < 2; ++b) {
      const Mat hr = oracle::tokens_of(tb.pair.hr_em, b);
      const Mat lr = oracle::tokens_of(tb.pair.lr_em, b);
      const OracleBlock o = oracle_block(hr, lr, p, tb.cfg);
      e.cross_attention = std::max({e.cross_attention, token_diff(ca.contour_edge, b, o.contour_edge),
                                    token_diff(ca.enhance, b, o.enhance)});
      // Stage-level SA check uses the library's own enhance as input.
      const Mat vp = ln(oracle::tokens_of(ca.enhance, b), p.sa->ln, tb.cfg.ln_eps);
      const Mat kq = oracle::add(vp, pe_rows(p.pe));
      const Mat det = oracle::add(oracle::attention(kq, kq, vp, attention_weights(p.sa->attn), tb.cfg.heads), vp);
      e.self_attention = std::max(e.self_attention, token_diff(sa.semantic_contour, b, det));
      const Mat det_lib = oracle::tokens_of(sa.semantic_contour, b);
      e.branches = std::max({e.branches, token_diff(contour, b, branch(hr, det_lib, p.ceeb, tb.cfg.ln_eps)),
                             token_diff(semantic, b, branch(lr, det_lib, p.seb, tb.cfg.ln_eps))});
      e.block = std::max({e.block, token_diff(out.contour, b, o.contour), token_diff(out.semantic, b, o.semantic),
                          token_diff(out.detector, b, o.detector), token_diff(taps.contour_edge, b, o.contour_edge)});
    }
  }
  for (auto ab : {decoder::Ablation::CaOnly, decoder::Ablation::SaOnly}) {
    TinyBlock tb = tiny_block(seed + 1, ab);
    const decoder::BlockParams p = decoder::block_params(tb.store, 0, tb.cfg);
    const decoder::BlockOutput out = decoder::block_forward(tb.pair, p, tb.cfg);
    for (std::size_t b = 0; b < 2; ++b) {
      const OracleBlock o = oracle_block(oracle::tokens_of(tb.pair.hr_em, b), oracle::tokens_of(tb.pair.lr_em, b), p, tb.cfg);
      e.block = std::max({e.block, token_diff(out.contour, b, o.contour), token_diff(out.semantic, b, o.semantic),
                          token_diff(out.detector, b, o.detector)});
    }
  }
  {
    TinyBlock tb = tiny_block(seed + 2, decoder::Ablation::Full, 2, 2);
    const decoder::BlockOutput out = decoder::stack_forward(tb.store, tb.pair, tb.cfg);
    for (std::size_t b = 0; b < 2; ++b) {
      const OracleBlock o0 = oracle_block(oracle::tokens_of(tb.pair.hr_em, b), oracle::tokens_of(tb.pair.lr_em, b),
                                          decoder::block_params(tb.store, 0, tb.cfg), tb.cfg);
      const OracleBlock o1 = oracle_block(o0.contour, o0.semantic, decoder::block_params(tb.store, 1, tb.cfg), tb.cfg);
      e.stack = std::max({e.stack, token_diff(out.contour, b, o1.contour), token_diff(out.semantic, b, o1.semantic)});
    }
  }
  {
    // Fuse and head on a 2x2 token grid, C=4, C1=3, B=2.
    std::mt19937_64 rng(seed + 3);
    ParamStore store;
    Initializer init(seed);
    predictor::init_params(store, 4, 3, init);
    randomize(store, rng);
    const auto fp = predictor::fuse_params(store);
    const auto hp = predictor::head_params(store);
    const Tensor sem = oracle::random_tensor({2, 4, 2, 2}, rng), con = oracle::random_tensor({2, 4, 2, 2}, rng);
    const Tensor lr = oracle::random_tensor({2, 4, 2, 2}, rng), hr = oracle::random_tensor({2, 4, 2, 2}, rng);
    const Tensor f4 = oracle::random_tensor({2, 3, 4, 4}, rng);
    const Tensor fused = predictor::fuse(fp, sem, con, lr, hr);
    const predictor::MattePrediction pred = predictor::head(hp, fused, f4, 16, 16);

    auto plus = [](Vec a, const Vec& b) {
      for (std::size_t i = 0; i < a.size(); ++i) a[i] += b[i];
      return a;
    };
    std::size_t oh = 0, ow = 0;
    const Vec s1 = oracle::conv2d(plus(vals(sem), vals(lr)), 2, 4, 2, 2, vals(fp.sem_w), 4, 3, 3, vals(fp.sem_b), 1, 1, oh, ow);
    const Vec c1 = oracle::conv2d(plus(vals(con), vals(hr)), 2, 4, 2, 2, vals(fp.con_w), 4, 3, 3, vals(fp.con_b), 1, 1, oh, ow);
    Vec cat;
    for (std::size_t b = 0; b < 2; ++b) {
      cat.insert(cat.end(), s1.begin() + b * 16, s1.begin() + (b + 1) * 16);
      cat.insert(cat.end(), c1.begin() + b * 16, c1.begin() + (b + 1) * 16);
    }
    const Vec fused_o = oracle::conv2d(cat, 2, 8, 2, 2, vals(fp.mix_w), 4, 3, 3, vals(fp.mix_b), 1, 1, oh, ow);
    e.fuse = oracle::max_abs_diff(vals(fused), fused_o);

    Vec up;
    for (std::size_t pl = 0; pl < 8; ++pl) {
      const Vec plane(fused_o.begin() + pl * 4, fused_o.begin() + (pl + 1) * 4);
      const Vec u = oracle::bilinear(plane, 2, 2, 4, 4);
      up.insert(up.end(), u.begin(), u.end());
    }
    Vec x = plus(oracle::conv2d(up, 2, 4, 4, 4, vals(hp.proj_w), 3, 1, 1, vals(hp.proj_b), 1, 0, oh, ow), vals(f4));
    x = oracle::conv2d(x, 2, 3, 4, 4, vals(hp.conv1_w), 3, 3, 3, vals(hp.conv1_b), 1, 1, oh, ow);
    for (double& v : x) v = std::max(v, 0.0);
    Vec q = oracle::conv2d(x, 2, 3, 4, 4, vals(hp.conv2_w), 1, 1, 1, vals(hp.conv2_b), 1, 0, oh, ow);
    for (double& v : q) v = 1.0 / (1.0 + std::exp(-v));
    Vec matte;
    for (std::size_t b = 0; b < 2; ++b) {
      const Vec u = oracle::bilinear(Vec(q.begin() + b * 16, q.begin() + (b + 1) * 16), 4, 4, 16, 16);
      matte.insert(matte.end(), u.begin(), u.end());
    }
    e.head = std::max(oracle::max_abs_diff(vals(pred.matte_quarter), q), oracle::max_abs_diff(vals(pred.matte), matte));
  }
  return e;
}

namespace {

struct NamedConfig {
  decoder::Ablation ablation;
  int hr, lr;
};

const std::vector<NamedConfig>& config_matrix() {
  static const std::vector<NamedConfig> m = [] {
    std::vector<NamedConfig> out;
    for (auto ab : {decoder::Ablation::Full, decoder::Ablation::CaOnly, decoder::Ablation::SaOnly})
      for (auto [hr, lr] : std::vector<std::pair<int, int>>{{8, 16}, {4, 8}, {4, 16}}) out.push_back({ab, hr, lr});
    return out;
  }();
  return m;
}

void accumulate_rows(const Tensor& w, AttentionRowStats& s) {
  if (!w.defined()) return;
  const std::size_t nk = w.shape()[3];
  const std::size_t rows = w.numel() / nk;
  for (std::size_t r = 0; r < rows; ++r) {
    double acc = 0.0;
    for (std::size_t j = 0; j < nk; ++j) {
      const double v = w.data()[r * nk + j];
      acc += v;
      if (!(v > 0.0 && v < 1.0)) s.in_open_unit = false;
    }
    s.max_row_error = std::max(s.max_row_error, std::abs(acc - 1.0));
    ++s.rows;
  }
}

}  // namespace

AttentionRowStats attention_rows(std::size_t trials, std::uint64_t seed) {
  AttentionRowStats s;
  const auto& matrix = config_matrix();
  std::vector<EFormer> models;
  for (std::size_t i = 0; i < matrix.size(); ++i) {
    ModelConfig cfg = ModelConfig::desk();
    cfg.res_h = cfg.res_w = 32;
    cfg.decoder.channels = 16;
    cfg.decoder.heads = 4;
    cfg.decoder.ablation = matrix[i].ablation;
    cfg.hr_level = matrix[i].hr;
    cfg.lr_level = matrix[i].lr;
    cfg.decoder.pe_grid = EFormer::token_grid(32, 32);
    EFormer m(cfg, seed + i);
    std::mt19937_64 rng(seed + 100 + i);
    std::uniform_real_distribution<double> u(-0.5, 0.5);
    for (const auto& [name, t] : m.params()) {
      if (name.size() >= 3 && name.compare(name.size() - 3, 3, "/pe") == 0)
        for (double& v : Tensor(t).mutable_data()) v = u(rng);
    }
    models.push_back(std::move(m));
  }
  std::mt19937_64 rng(seed);
  NoGradGuard guard;
  for (std::size_t t = 0; t < trials; ++t) {
    const EFormer& m = models[t % models.size()];
    const std::size_t batch = 1 + t % 2;
    ForwardTrace trace;
    m.forward(oracle::random_tensor({batch, 3, 32, 32}, rng, 0.0, 1.0), &trace);
    for (const auto& taps : trace.taps) {
      accumulate_rows(taps.ca_weights, s);
      accumulate_rows(taps.sa_weights, s);
    }
    ++s.trials;
  }
  return s;
}

std::vector<ShapeCase> shape_matrix(std::size_t h, std::size_t w) {
  std::vector<ShapeCase> out;
  std::mt19937_64 rng(h * 1000 + w);
  const Tensor image = oracle::random_tensor({2, 3, h, w}, rng, 0.0, 1.0);
  NoGradGuard guard;
  for (const auto& c : config_matrix()) {
    ShapeCase sc;
    sc.label = decoder::ablation_name(c.ablation) + " hr=1/" + std::to_string(c.hr) + " lr=1/" + std::to_string(c.lr);
    try {
      ModelConfig cfg = ModelConfig::desk();
      cfg.encoder.channels = {8, 8, 16, 16};
      cfg.decoder.channels = 16;
      cfg.decoder.heads = 2;
      cfg.decoder.blocks = 1;
      cfg.decoder.ablation = c.ablation;
      cfg.hr_level = c.hr;
      cfg.lr_level = c.lr;
      cfg.res_h = h;
      cfg.res_w = w;
      cfg.decoder.pe_grid = EFormer::token_grid(h, w);
      const EFormer model(cfg, 1);
      ForwardTrace trace;
      const auto pred = model.forward(image, &trace);
      const std::size_t n = (h / 8) * (w / 8);
      const bool matte_ok = pred.matte.shape() == Shape{2, 1, h, w};
      const bool quarter_ok = pred.matte_quarter.shape() == Shape{2, 1, h / 4, w / 4};
      const bool tokens_ok = trace.pair.hr_em.shape() == Shape{n, 2, 16} && trace.pair.lr_em.shape() == Shape{n, 2, 16} &&
                             trace.output.contour.shape() == Shape{n, 2, 16} &&
                             trace.output.semantic.shape() == Shape{n, 2, 16};
      sc.ok = matte_ok && quarter_ok && tokens_ok;
      sc.detail = "matte " + shape_str(pred.matte.shape()) + " tokens " + shape_str(trace.pair.hr_em.shape()) +
                  " expected N=" + std::to_string(n);
    } catch (const std::exception& ex) {
      sc.detail = ex.what();
    }
    out.push_back(sc);
  }
  return out;
}

double naive_grad(const Vec& pred, const Vec& gt, std::size_t h, std::size_t w, double sigma) {
  const double half = std::ceil(sigma * std::sqrt(-2.0 * std::log(std::sqrt(2.0 * std::numbers::pi) * sigma * 0.01)));
  const long hs = static_cast<long>(half);
  const std::size_t n = static_cast<std::size_t>(2 * hs + 1);
  // kx[v][u]: derivative along columns (u), Gaussian along rows (v).
  std::vector<Vec> kx(n, Vec(n)), ky(n, Vec(n));
  double norm = 0.0;
  for (long v = -hs; v <= hs; ++v)
    for (long u = -hs; u <= hs; ++u) {
      const double g = std::exp(-(double(u * u) + double(v * v)) / (2 * sigma * sigma));
      kx[v + hs][u + hs] = -double(u) * g;
      ky[u + hs][v + hs] = -double(u) * g;
      norm += (double(u) * g) * (double(u) * g);
    }
  norm = std::sqrt(norm);
  auto magnitude = [&](const Vec& img) {
    Vec mag(h * w);
    for (long y = 0; y < long(h); ++y)
      for (long x = 0; x < long(w); ++x) {
        double gx = 0.0, gy = 0.0;
        for (long v = -hs; v <= hs; ++v)
          for (long u = -hs; u <= hs; ++u) {
            const long sy = std::clamp(y - v, 0L, long(h) - 1);
            const long sx = std::clamp(x - u, 0L, long(w) - 1);
            const double p = img[std::size_t(sy) * w + std::size_t(sx)];
            gx += kx[v + hs][u + hs] / norm * p;
            gy += ky[v + hs][u + hs] / norm * p;
          }
        mag[std::size_t(y) * w + std::size_t(x)] = std::hypot(gx, gy);
      }
    return mag;
  };
  const Vec mp = magnitude(pred), mg = magnitude(gt);
  double acc = 0.0;
  for (std::size_t i = 0; i < h * w; ++i) acc += (mp[i] - mg[i]) * (mp[i] - mg[i]);
  return acc / 1000.0;
}

double naive_conn(const Vec& pred, const Vec& gt, std::size_t h, std::size_t w, double step) {
  const std::size_t n = h * w;
  const int steps = static_cast<int>(std::floor(1.0 / step + 1e-9));
  std::vector<double> level(n, 1.0);
  std::vector<bool> settled(n, false);
  for (int k = 1; k <= steps; ++k) {
    const double theta = k * step;
    std::vector<int> comp(n, -1);
    std::vector<std::size_t> size, first_colmajor;
    for (std::size_t s = 0; s < n; ++s) {
      if (comp[s] >= 0 || !(pred[s] >= theta && gt[s] >= theta)) continue;
      const int id = static_cast<int>(size.size());
      size.push_back(0);
      first_colmajor.push_back(n * n);
      std::deque<std::size_t> q{s};
      comp[s] = id;
      while (!q.empty()) {
        const std::size_t p = q.front();
        q.pop_front();
        ++size.back();
        const std::size_t y = p / w, x = p % w;
        first_colmajor.back() = std::min(first_colmajor.back(), x * h + y);
        const long dy[4] = {-1, 1, 0, 0}, dx[4] = {0, 0, -1, 1};
        for (int d = 0; d < 4; ++d) {
          const long ny = long(y) + dy[d], nx = long(x) + dx[d];
          if (ny < 0 || nx < 0 || ny >= long(h) || nx >= long(w)) continue;
          const std::size_t r = std::size_t(ny) * w + std::size_t(nx);
          if (comp[r] < 0 && pred[r] >= theta && gt[r] >= theta) {
            comp[r] = id;
            q.push_back(r);
          }
        }
      }
    }
    int best = -1;
    for (int c = 0; c < int(size.size()); ++c) {
      if (best < 0 || size[c] > size[best] || (size[c] == size[best] && first_colmajor[c] < first_colmajor[best]))
        best = c;
    }
    for (std::size_t i = 0; i < n; ++i) {
      if (!settled[i] && (best < 0 || comp[i] != best)) {
        settled[i] = true;
        level[i] = (k - 1) * step;
      }
    }
  }
  double acc = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    const double dp = pred[i] - level[i], dg = gt[i] - level[i];
    acc += std::abs((dg >= 0.15 ? dg : 0.0) - (dp >= 0.15 ? dp : 0.0));
  }
  return acc / 1000.0;
}

MetricErrors metric_errors(std::uint64_t seed) {
  MetricErrors e;
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> u(0.0, 1.0);

  for (int t = 0; t < 5; ++t) {
    const Tensor p = oracle::random_tensor({1, 16, 16}, rng, 0, 1), g = oracle::random_tensor({1, 16, 16}, rng, 0, 1);
    double sa = 0.0, ss = 0.0;
    for (std::size_t i = 0; i < 256; ++i) {
      const double d = p.data()[i] - g.data()[i];
      sa += std::abs(d);
      ss += d * d;
    }
    e.mad_mse = std::max({e.mad_mse, std::abs(metrics::mad(p, g) - sa / 256 * 1000),
                          std::abs(metrics::mse(p, g) - ss / 256 * 1000)});
  }

  std::vector<std::pair<Vec, Vec>> fixtures;
  {
    Vec step(64), ramp(64);
    for (std::size_t y = 0; y < 8; ++y)
      for (std::size_t x = 0; x < 8; ++x) {
        step[y * 8 + x] = x >= 4 ? 1.0 : 0.0;
        ramp[y * 8 + x] = std::clamp((double(x) - 1.5) / 5.0, 0.0, 1.0);
      }
    fixtures.emplace_back(step, ramp);
    Vec disk(64), blob(64);
    for (std::size_t y = 0; y < 8; ++y)
      for (std::size_t x = 0; x < 8; ++x) {
        const double r = std::hypot(double(y) - 4.0, double(x) - 4.0);
        disk[y * 8 + x] = r <= 2.5 ? 1.0 : (r <= 3.5 ? 0.5 : 0.0);
      }
    blob = disk;
    blob[0 * 8 + 7] = 0.9;
    fixtures.emplace_back(blob, disk);
    for (int t = 0; t < 6; ++t) {
      Vec a(64), b(64);
      for (auto& v : a) v = u(rng) < 0.3 ? 0.0 : (u(rng) < 0.3 ? 1.0 : u(rng));
      for (auto& v : b) v = u(rng) < 0.3 ? 0.0 : (u(rng) < 0.3 ? 1.0 : u(rng));
      fixtures.emplace_back(a, b);
    }
  }
  for (const auto& [a, b] : fixtures) {
    const Tensor p = Tensor::from({1, 8, 8}, a), g = Tensor::from({1, 8, 8}, b);
    e.grad = std::max(e.grad, std::abs(metrics::grad_metric(p, g) - naive_grad(a, b, 8, 8, 1.4)));
    e.conn = std::max(e.conn, std::abs(metrics::conn_metric(p, g) - naive_conn(a, b, 8, 8, 0.1)));
    const auto same = metrics::evaluate_one(p, p);
    e.identical_max = std::max({e.identical_max, same.mad, same.mse, same.grad, same.conn});
  }

  const Tensor f = oracle::random_tensor({3, 5, 6}, rng, 0, 1), bg = oracle::random_tensor({3, 5, 6}, rng, 0, 1);
  const bool one = oracle::values(data::composite(f, Tensor::full({1, 5, 6}, 1.0), bg)) == oracle::values(f);
  const bool zero = oracle::values(data::composite(f, Tensor::zeros({1, 5, 6}), bg)) == oracle::values(bg);
  const Tensor mid = data::composite(Tensor::full({3, 5, 6}, 1.0), Tensor::full({1, 5, 6}, 0.5), Tensor::zeros({3, 5, 6}));
  bool half = true;
  for (double v : mid.data()) half = half && v == 0.5;
  e.composite_endpoints = one && zero && half;
  return e;
}

}  // namespace checks
