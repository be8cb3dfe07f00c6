#pragma once

// Compositing, augmentation, dataset manifests, synthetic data and batching.
//
// Images are [3, H, W] and alphas [1, H, W] tensors with values in [0, 1].
// Every source of randomness is a seeded std::mt19937_64, so a given
// (sources, options, seed, epoch) always yields the same batch stream.

#include <cstdint>
#include <filesystem>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include "eformer/tensor.hpp"

namespace eformer::data {

struct InputError : std::invalid_argument {
  using std::invalid_argument::invalid_argument;
};

struct ManifestError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct ImageIoError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// ---------------------------------------------------------------------------
// PNG IO (8-bit; values mapped by /255 and rounded back on write)

// Returns [C, H, W] with C = 1 for grayscale inputs and 3 otherwise (alpha
// channels dropped).
Tensor read_png(const std::filesystem::path& path);
// Forces three channels (grayscale replicated).
Tensor read_png_rgb(const std::filesystem::path& path);
// Forces one channel (RGB averaged).
Tensor read_png_gray(const std::filesystem::path& path);
// t is [1, H, W] or [3, H, W]; values are clamped to [0, 1] before quantizing.
void write_png(const std::filesystem::path& path, const Tensor& t);
std::uint8_t quantize(double v);

// ---------------------------------------------------------------------------
// Compositing and augmentation

// I = alpha * F + (1 - alpha) * B, per pixel. Throws InputError when any
// input leaves [0, 1] or shapes disagree.
Tensor composite(const Tensor& fg, const Tensor& alpha, const Tensor& bg);

// Mirror along the last (width) axis of any [..., W] tensor.
Tensor hflip(const Tensor& t);

// Bilinear resize of a [C, H, W] image.
Tensor resize_image(const Tensor& img, std::size_t h, std::size_t w);

struct SampleMeta {
  std::string fg_id;
  std::string bg_id;
  bool flipped = false;
};

struct Sample {
  Tensor image;     // [3, H, W]
  Tensor alpha_gt;  // [1, H, W]
  SampleMeta meta;
};

Sample hflip(const Sample& s);

// ---------------------------------------------------------------------------
// Sources and manifests

enum class Split { Train, Val, Test };
Split parse_split(const std::string& s);
std::string split_name(Split s);

struct ManifestEntry {
  Split split;
  std::filesystem::path fg;
  std::filesystem::path alpha;
};

// Line-oriented text: `split<TAB>fg_path<TAB>alpha_path` rows, then a
// `[backgrounds]` section with one path per line. Blank lines and lines
// starting with '#' are ignored. Relative paths resolve against the
// manifest's directory.
struct DatasetManifest {
  std::vector<ManifestEntry> entries;
  std::vector<std::filesystem::path> backgrounds;

  static DatasetManifest parse(const std::string& text, const std::filesystem::path& base_dir = {});
  static DatasetManifest load(const std::filesystem::path& path);
  std::string serialize() const;
  // Missing files, orphan foregrounds and duplicated foregrounds across
  // splits raise ManifestError naming the offending basename.
  void validate() const;
};

// Foreground/alpha/background triples ready for compositing.
struct SourceSet {
  std::vector<Tensor> fgs;     // [3, H, W]
  std::vector<Tensor> alphas;  // [1, H, W]
  std::vector<std::string> fg_ids;
  std::vector<Tensor> bgs;     // [3, H, W]
  std::vector<std::string> bg_ids;

  std::size_t size() const { return fgs.size(); }
};

SourceSet load_sources(const DatasetManifest& manifest, Split split);

// n soft-edged synthetic "portraits" (ellipse head, rounded torso, random
// polygon accessory) on textured backgrounds, at res x res.
SourceSet synth_dataset(std::size_t n, std::size_t res, std::uint64_t seed);

// ---------------------------------------------------------------------------
// Batching

struct LoaderOptions {
  std::size_t height = 64;
  std::size_t width = 64;
  std::size_t batch = 24;
  std::uint64_t seed = 0;
  bool shuffle = false;
  bool hflip = false;  // random horizontal flip with p = 0.5
};

struct Batch {
  Tensor image;  // [B, 3, H, W]
  Tensor alpha;  // [B, 1, H, W]
  std::vector<SampleMeta> meta;
};

// Composes every sample of an epoch eagerly; iteration order, background
// pairing and flips are functions of (seed, epoch) only.
class BatchLoader {
 public:
  BatchLoader(const SourceSet& sources, LoaderOptions opt);

  void start_epoch(std::uint64_t epoch);
  std::optional<Batch> next();
  std::size_t batches_per_epoch() const;
  const std::vector<Sample>& samples() const { return samples_; }

 private:
  const SourceSet* sources_;
  LoaderOptions opt_;
  std::vector<Sample> samples_;
  std::size_t cursor_ = 0;
};

// Composited samples of one deterministic pass (no shuffle, no flip).
std::vector<Sample> compose_all(const SourceSet& sources, std::size_t h, std::size_t w, std::uint64_t seed);

// Stacks [C,H,W] tensors into [B,C,H,W].
Tensor stack(const std::vector<Tensor>& items);

}  // namespace eformer::data
