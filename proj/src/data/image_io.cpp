#include <png.h>

#include <cmath>
#include <cstdio>
#include <memory>

#include "eformer/data.hpp"

namespace eformer::data {

namespace {

struct FileCloser {
  void operator()(std::FILE* f) const {
    if (f) std::fclose(f);
  }
};
using FilePtr = std::unique_ptr<std::FILE, FileCloser>;

}  // namespace

std::uint8_t quantize(double v) {
  if (!(v > 0.0)) return 0;
  if (v >= 1.0) return 255;
  return static_cast<std::uint8_t>(std::lround(v * 255.0));
}

Tensor read_png(const std::filesystem::path& path) {
  FilePtr file(std::fopen(path.c_str(), "rb"));
  if (!file) throw ImageIoError("cannot open image " + path.string());
  png_byte header[8];
  if (std::fread(header, 1, 8, file.get()) != 8 || png_sig_cmp(header, 0, 8) != 0) {
    throw ImageIoError("not a PNG file: " + path.string());
  }
  png_structp png = png_create_read_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
  png_infop info = png ? png_create_info_struct(png) : nullptr;
  if (!png || !info) {
    png_destroy_read_struct(&png, &info, nullptr);
    throw ImageIoError("libpng init failed");
  }
  if (setjmp(png_jmpbuf(png))) {
    png_destroy_read_struct(&png, &info, nullptr);
    throw ImageIoError("corrupt PNG: " + path.string());
  }
  png_init_io(png, file.get());
  png_set_sig_bytes(png, 8);
  png_read_info(png, info);

  const png_byte color = png_get_color_type(png, info);
  const png_byte depth = png_get_bit_depth(png, info);
  if (depth == 16) png_set_strip_16(png);
  if (color == PNG_COLOR_TYPE_PALETTE) png_set_palette_to_rgb(png);
  if (color == PNG_COLOR_TYPE_GRAY && depth < 8) png_set_expand_gray_1_2_4_to_8(png);
  if (png_get_valid(png, info, PNG_INFO_tRNS)) png_set_tRNS_to_alpha(png);
  png_read_update_info(png, info);

  const std::size_t w = png_get_image_width(png, info);
  const std::size_t h = png_get_image_height(png, info);
  const std::size_t src_channels = png_get_channels(png, info);
  std::vector<png_byte> pixels(h * w * src_channels);
  std::vector<png_bytep> rows(h);
  for (std::size_t y = 0; y < h; ++y) rows[y] = pixels.data() + y * w * src_channels;
  png_read_image(png, rows.data());
  png_destroy_read_struct(&png, &info, nullptr);

  const std::size_t out_channels = src_channels <= 2 ? 1 : 3;
  std::vector<double> values(out_channels * h * w);
  for (std::size_t c = 0; c < out_channels; ++c) {
    for (std::size_t i = 0; i < h * w; ++i) values[c * h * w + i] = pixels[i * src_channels + c] / 255.0;
  }
  return Tensor::from({out_channels, h, w}, std::move(values));
}

Tensor read_png_rgb(const std::filesystem::path& path) {
  Tensor t = read_png(path);
  if (t.shape()[0] == 3) return t;
  return concat({t, t, t}, 0);
}

Tensor read_png_gray(const std::filesystem::path& path) {
  Tensor t = read_png(path);
  if (t.shape()[0] == 1) return t;
  const std::size_t hw = t.shape()[1] * t.shape()[2];
  std::vector<double> v(hw);
  const auto d = t.data();
  for (std::size_t i = 0; i < hw; ++i) v[i] = (d[i] + d[hw + i] + d[2 * hw + i]) / 3.0;
  return Tensor::from({1, t.shape()[1], t.shape()[2]}, std::move(v));
}

void write_png(const std::filesystem::path& path, const Tensor& t) {
  if (t.dim() != 3 || (t.shape()[0] != 1 && t.shape()[0] != 3)) {
    throw ImageIoError("write_png expects [1|3, H, W], got " + shape_str(t.shape()));
  }
  const std::size_t channels = t.shape()[0];
  const std::size_t h = t.shape()[1];
  const std::size_t w = t.shape()[2];
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  FilePtr file(std::fopen(path.c_str(), "wb"));
  if (!file) throw ImageIoError("cannot write image " + path.string());
  png_structp png = png_create_write_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
  png_infop info = png ? png_create_info_struct(png) : nullptr;
  if (!png || !info) {
    png_destroy_write_struct(&png, &info);
    throw ImageIoError("libpng init failed");
  }
  std::vector<png_byte> pixels(h * w * channels);
  const auto d = t.data();
  for (std::size_t c = 0; c < channels; ++c) {
    for (std::size_t i = 0; i < h * w; ++i) pixels[i * channels + c] = quantize(d[c * h * w + i]);
  }
  std::vector<png_bytep> rows(h);
  for (std::size_t y = 0; y < h; ++y) rows[y] = pixels.data() + y * w * channels;
  if (setjmp(png_jmpbuf(png))) {
    png_destroy_write_struct(&png, &info);
    throw ImageIoError("PNG encoding failed: " + path.string());
  }
  png_init_io(png, file.get());
  png_set_IHDR(png, info, static_cast<png_uint_32>(w), static_cast<png_uint_32>(h), 8,
               channels == 1 ? PNG_COLOR_TYPE_GRAY : PNG_COLOR_TYPE_RGB, PNG_INTERLACE_NONE,
               PNG_COMPRESSION_TYPE_DEFAULT, PNG_FILTER_TYPE_DEFAULT);
  png_write_info(png, info);
  png_write_image(png, rows.data());
  png_write_end(png, nullptr);
  png_destroy_write_struct(&png, &info);
}

}  // namespace eformer::data
