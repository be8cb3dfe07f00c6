#include <algorithm>
#include <cmath>
#include <fstream>
#include <map>
#include <numbers>
#include <random>
#include <set>
#include <sstream>

#include "eformer/data.hpp"

namespace eformer::data {

namespace fs = std::filesystem;

Split parse_split(const std::string& s) {
  if (s == "train") return Split::Train;
  if (s == "val") return Split::Val;
  if (s == "test") return Split::Test;
  throw ManifestError("unknown split '" + s + "' (expected train, val or test)");
}

std::string split_name(Split s) {
  switch (s) {
    case Split::Train: return "train";
    case Split::Val: return "val";
    case Split::Test: return "test";
  }
  return "train";
}

namespace {

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r\n");
  if (b == std::string::npos) return "";
  const auto e = s.find_last_not_of(" \t\r\n");
  return s.substr(b, e - b + 1);
}

fs::path resolve(const fs::path& base, const std::string& p) {
  const fs::path path(p);
  return path.is_absolute() || base.empty() ? path : base / path;
}

}  // namespace

DatasetManifest DatasetManifest::parse(const std::string& text, const fs::path& base_dir) {
  DatasetManifest m;
  std::istringstream in(text);
  std::string line;
  bool in_backgrounds = false;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    const std::string t = trim(line);
    if (t.empty() || t[0] == '#') continue;
    if (t == "[backgrounds]") {
      in_backgrounds = true;
      continue;
    }
    if (t.front() == '[') throw ManifestError("line " + std::to_string(lineno) + ": unknown section " + t);
    if (in_backgrounds) {
      m.backgrounds.push_back(resolve(base_dir, t));
      continue;
    }
    std::vector<std::string> fields;
    std::stringstream ss(t);
    std::string f;
    while (std::getline(ss, f, '\t')) fields.push_back(trim(f));
    if (fields.size() < 2 || fields.size() > 3) {
      throw ManifestError("line " + std::to_string(lineno) + ": expected split<TAB>fg<TAB>alpha");
    }
    ManifestEntry e{parse_split(fields[0]), resolve(base_dir, fields[1]), {}};
    if (fields.size() == 3 && !fields[2].empty()) e.alpha = resolve(base_dir, fields[2]);
    m.entries.push_back(std::move(e));
  }
  return m;
}

DatasetManifest DatasetManifest::load(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw ManifestError("cannot read manifest " + path.string());
  std::stringstream ss;
  ss << in.rdbuf();
  return parse(ss.str(), path.parent_path());
}

std::string DatasetManifest::serialize() const {
  std::ostringstream os;
  for (const auto& e : entries) os << split_name(e.split) << '\t' << e.fg.string() << '\t' << e.alpha.string() << '\n';
  os << "[backgrounds]\n";
  for (const auto& b : backgrounds) os << b.string() << '\n';
  return os.str();
}

void DatasetManifest::validate() const {
  std::map<std::string, Split> seen;
  for (const auto& e : entries) {
    const std::string name = e.fg.filename().string();
    if (e.alpha.empty()) throw ManifestError("foreground " + name + " has no alpha matte");
    if (e.alpha.stem() != e.fg.stem()) {
      throw ManifestError("foreground " + name + " is paired with alpha " + e.alpha.filename().string() +
                          " of a different basename");
    }
    if (!fs::exists(e.fg)) throw ManifestError("foreground " + name + " not found at " + e.fg.string());
    if (!fs::exists(e.alpha)) throw ManifestError("alpha for " + name + " not found at " + e.alpha.string());
    const auto [it, inserted] = seen.emplace(e.fg.stem().string(), e.split);
    if (!inserted && it->second != e.split) {
      throw ManifestError("foreground " + name + " appears in both " + split_name(it->second) + " and " +
                          split_name(e.split));
    }
  }
  for (const auto& b : backgrounds) {
    if (!fs::exists(b)) throw ManifestError("background " + b.filename().string() + " not found at " + b.string());
  }
}

SourceSet load_sources(const DatasetManifest& manifest, Split split) {
  manifest.validate();
  if (manifest.backgrounds.empty()) throw ManifestError("manifest lists no backgrounds");
  SourceSet set;
  for (const auto& e : manifest.entries) {
    if (e.split != split) continue;
    Tensor fg = read_png_rgb(e.fg);
    Tensor alpha = read_png_gray(e.alpha);
    if (fg.shape()[1] != alpha.shape()[1] || fg.shape()[2] != alpha.shape()[2]) {
      throw ManifestError("foreground " + e.fg.filename().string() + " is " + shape_str(fg.shape()) +
                          " but its alpha is " + shape_str(alpha.shape()));
    }
    set.fgs.push_back(std::move(fg));
    set.alphas.push_back(std::move(alpha));
    set.fg_ids.push_back(e.fg.stem().string());
  }
  if (set.fgs.empty()) throw ManifestError("split " + split_name(split) + " is empty");
  for (const auto& b : manifest.backgrounds) {
    set.bgs.push_back(read_png_rgb(b));
    set.bg_ids.push_back(b.stem().string());
  }
  return set;
}

// ---------------------------------------------------------------------------
// Synthetic portraits

namespace {

double coverage(double signed_dist, double band) { return std::clamp(0.5 - signed_dist / band, 0.0, 1.0); }

struct Ellipse {
  double cx, cy, rx, ry;
  double sdf(double x, double y) const {
    const double dx = (x - cx) / rx;
    const double dy = (y - cy) / ry;
    return (std::sqrt(dx * dx + dy * dy) - 1.0) * std::min(rx, ry);
  }
};

struct ConvexPolygon {
  std::vector<double> xs, ys;  // vertices by increasing angle
  double sdf(double x, double y) const {
    double d = -1e300;
    const std::size_t n = xs.size();
    for (std::size_t i = 0; i < n; ++i) {
      const std::size_t j = (i + 1) % n;
      const double ex = xs[j] - xs[i];
      const double ey = ys[j] - ys[i];
      const double len = std::hypot(ex, ey);
      d = std::max(d, ((x - xs[i]) * ey - (y - ys[i]) * ex) / len);
    }
    return d;
  }
};

}  // namespace

SourceSet synth_dataset(std::size_t n, std::size_t res, std::uint64_t seed) {
  if (n == 0) throw InputError("synth_dataset needs n >= 1");
  if (res < 8) throw InputError("synth_dataset resolution must be at least 8");
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  const double r = static_cast<double>(res);
  const double band = std::max(1.5, r / 24.0);
  const std::size_t hw = res * res;

  SourceSet set;
  for (std::size_t k = 0; k < n; ++k) {
    const Ellipse head{r * (0.4 + 0.2 * u(rng)), r * (0.28 + 0.08 * u(rng)), r * (0.12 + 0.06 * u(rng)),
                       r * (0.15 + 0.06 * u(rng))};
    const Ellipse torso{head.cx + r * 0.06 * (u(rng) - 0.5), r * (0.95 + 0.1 * u(rng)), r * (0.26 + 0.1 * u(rng)),
                        r * (0.4 + 0.08 * u(rng))};
    ConvexPolygon prop;
    const std::size_t sides = 3 + static_cast<std::size_t>(u(rng) * 4);
    const double pcx = r * (u(rng) < 0.5 ? 0.2 : 0.8);
    const double pcy = r * (0.45 + 0.2 * u(rng));
    const double pr = r * (0.06 + 0.05 * u(rng));
    std::vector<double> angles(sides);
    for (auto& a : angles) a = u(rng) * 2.0 * std::numbers::pi;
    std::sort(angles.begin(), angles.end());
    for (double a : angles) {
      prop.xs.push_back(pcx + pr * std::cos(a));
      prop.ys.push_back(pcy + pr * std::sin(a));
    }

    std::vector<double> alpha(hw);
    for (std::size_t y = 0; y < res; ++y) {
      for (std::size_t x = 0; x < res; ++x) {
        const double px = x + 0.5;
        const double py = y + 0.5;
        const double a = std::max({coverage(head.sdf(px, py), band), coverage(torso.sdf(px, py), band),
                                   coverage(prop.sdf(px, py), band)});
        alpha[y * res + x] = a;
      }
    }

    // Foreground: smooth color field; background: stripes plus value noise.
    const double fg_base[3] = {0.55 + 0.4 * u(rng), 0.3 + 0.4 * u(rng), 0.2 + 0.4 * u(rng)};
    const double fg_tilt = 0.3 * (u(rng) - 0.5);
    std::vector<double> fg(3 * hw);
    for (std::size_t c = 0; c < 3; ++c) {
      for (std::size_t i = 0; i < hw; ++i) {
        const double t = static_cast<double>(i / res) / r - 0.5;
        fg[c * hw + i] = std::clamp(fg_base[c] + fg_tilt * t, 0.0, 1.0);
      }
    }
    const double freq = 2.0 + 6.0 * u(rng);
    const double phase = u(rng) * 2.0 * std::numbers::pi;
    const double theta = u(rng) * std::numbers::pi;
    const double bg_base[3] = {0.2 + 0.5 * u(rng), 0.2 + 0.5 * u(rng), 0.2 + 0.5 * u(rng)};
    std::vector<double> bg(3 * hw);
    for (std::size_t y = 0; y < res; ++y) {
      for (std::size_t x = 0; x < res; ++x) {
        const double s = (x * std::cos(theta) + y * std::sin(theta)) / r;
        const double stripe = 0.15 * std::sin(2.0 * std::numbers::pi * freq * s + phase);
        for (std::size_t c = 0; c < 3; ++c) {
          bg[c * hw + y * res + x] = std::clamp(bg_base[c] + stripe + 0.1 * (u(rng) - 0.5), 0.0, 1.0);
        }
      }
    }

    set.fgs.push_back(Tensor::from({3, res, res}, std::move(fg)));
    set.alphas.push_back(Tensor::from({1, res, res}, std::move(alpha)));
    set.fg_ids.push_back("synth_fg_" + std::to_string(k));
    set.bgs.push_back(Tensor::from({3, res, res}, std::move(bg)));
    set.bg_ids.push_back("synth_bg_" + std::to_string(k));
  }
  return set;
}

// ---------------------------------------------------------------------------
// Batching

BatchLoader::BatchLoader(const SourceSet& sources, LoaderOptions opt) : sources_(&sources), opt_(opt) {
  if (sources.size() == 0) throw InputError("loader needs at least one foreground");
  if (sources.bgs.empty()) throw InputError("loader needs at least one background");
  if (opt_.batch == 0) throw InputError("batch size must be positive");
  if (opt_.height == 0 || opt_.width == 0) throw InputError("loader resolution must be positive");
  start_epoch(0);
}

void BatchLoader::start_epoch(std::uint64_t epoch) {
  std::seed_seq seq{static_cast<std::uint32_t>(opt_.seed), static_cast<std::uint32_t>(opt_.seed >> 32),
                    static_cast<std::uint32_t>(epoch), static_cast<std::uint32_t>(epoch >> 32)};
  std::mt19937_64 rng(seq);
  const std::size_t n = sources_->size();
  std::vector<std::size_t> order(n);
  for (std::size_t i = 0; i < n; ++i) order[i] = i;
  if (opt_.shuffle) {
    for (std::size_t i = n; i > 1; --i) std::swap(order[i - 1], order[rng() % i]);
  }
  samples_.clear();
  samples_.reserve(n);
  for (std::size_t idx : order) {
    const std::size_t bg_idx = rng() % sources_->bgs.size();
    const bool flip = opt_.hflip && (rng() & 1u);
    const Tensor fg = resize_image(sources_->fgs[idx], opt_.height, opt_.width);
    const Tensor alpha = resize_image(sources_->alphas[idx], opt_.height, opt_.width);
    const Tensor bg = resize_image(sources_->bgs[bg_idx], opt_.height, opt_.width);
    Sample s{composite(fg, alpha, bg), alpha, {sources_->fg_ids[idx], sources_->bg_ids[bg_idx], false}};
    samples_.push_back(flip ? hflip(s) : std::move(s));
  }
  cursor_ = 0;
}

std::size_t BatchLoader::batches_per_epoch() const { return (samples_.size() + opt_.batch - 1) / opt_.batch; }

std::optional<Batch> BatchLoader::next() {
  if (cursor_ >= samples_.size()) return std::nullopt;
  const std::size_t end = std::min(samples_.size(), cursor_ + opt_.batch);
  std::vector<Tensor> images, alphas;
  Batch b;
  for (std::size_t i = cursor_; i < end; ++i) {
    images.push_back(samples_[i].image);
    alphas.push_back(samples_[i].alpha_gt);
    b.meta.push_back(samples_[i].meta);
  }
  cursor_ = end;
  b.image = stack(images);
  b.alpha = stack(alphas);
  return b;
}

std::vector<Sample> compose_all(const SourceSet& sources, std::size_t h, std::size_t w, std::uint64_t seed) {
  LoaderOptions opt;
  opt.height = h;
  opt.width = w;
  opt.seed = seed;
  opt.batch = 1;
  return BatchLoader(sources, opt).samples();
}

}  // namespace eformer::data
