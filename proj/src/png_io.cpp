#include "artsplat/png_io.hpp"

#include <png.h>

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <memory>
#include <stdexcept>
#include <vector>

namespace artsplat {

namespace {

struct FileCloser {
  void operator()(std::FILE* f) const {
    if (f) std::fclose(f);
  }
};
using FilePtr = std::unique_ptr<std::FILE, FileCloser>;

std::uint8_t quantize(double v) {
  const double c = std::clamp(v, 0.0, 1.0);
  return static_cast<std::uint8_t>(std::lround(c * 255.0));
}

void write_png(const std::string& path, int width, int height, int color_type,
               const std::vector<std::uint8_t>& bytes) {
  FilePtr fp(std::fopen(path.c_str(), "wb"));
  if (!fp) throw std::runtime_error("cannot open for writing: " + path);
  png_structp png = png_create_write_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
  png_infop info = png_create_info_struct(png);
  if (!png || !info || setjmp(png_jmpbuf(png))) {
    png_destroy_write_struct(&png, &info);
    throw std::runtime_error("libpng write failure: " + path);
  }
  png_init_io(png, fp.get());
  png_set_IHDR(png, info, width, height, 8, color_type, PNG_INTERLACE_NONE,
               PNG_COMPRESSION_TYPE_DEFAULT, PNG_FILTER_TYPE_DEFAULT);
  png_write_info(png, info);
  const int stride = width * (color_type == PNG_COLOR_TYPE_RGB ? 3 : 1);
  for (int r = 0; r < height; ++r) {
    png_write_row(png, const_cast<png_bytep>(bytes.data() + size_t(r) * stride));
  }
  png_write_end(png, nullptr);
  png_destroy_write_struct(&png, &info);
}

void read_png(const std::string& path, int* width, int* height, int* channels,
              std::vector<std::uint8_t>* bytes) {
  FilePtr fp(std::fopen(path.c_str(), "rb"));
  if (!fp) throw std::runtime_error("cannot open for reading: " + path);
  png_structp png = png_create_read_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
  png_infop info = png_create_info_struct(png);
  if (!png || !info || setjmp(png_jmpbuf(png))) {
    png_destroy_read_struct(&png, &info, nullptr);
    throw std::runtime_error("libpng read failure: " + path);
  }
  png_init_io(png, fp.get());
  png_read_info(png, info);
  *width = png_get_image_width(png, info);
  *height = png_get_image_height(png, info);
  const int color_type = png_get_color_type(png, info);
  const int bit_depth = png_get_bit_depth(png, info);
  if (bit_depth == 16) png_set_strip_16(png);
  if (color_type == PNG_COLOR_TYPE_PALETTE) png_set_palette_to_rgb(png);
  if (color_type == PNG_COLOR_TYPE_GRAY && bit_depth < 8) png_set_expand_gray_1_2_4_to_8(png);
  if (color_type & PNG_COLOR_MASK_ALPHA) png_set_strip_alpha(png);
  png_read_update_info(png, info);
  *channels = png_get_channels(png, info);
  bytes->resize(size_t(*height) * png_get_rowbytes(png, info));
  const size_t stride = png_get_rowbytes(png, info);
  for (int r = 0; r < *height; ++r) {
    png_read_row(png, bytes->data() + size_t(r) * stride, nullptr);
  }
  png_destroy_read_struct(&png, &info, nullptr);
}

}  // namespace

void write_png_rgb(const std::string& path, const Image3& img) {
  std::vector<std::uint8_t> bytes(img.data.size());
  for (size_t i = 0; i < img.data.size(); ++i) bytes[i] = quantize(img.data[i]);
  write_png(path, img.width, img.height, PNG_COLOR_TYPE_RGB, bytes);
}

void write_png_gray(const std::string& path, const LabelImage& img) {
  write_png(path, img.width, img.height, PNG_COLOR_TYPE_GRAY, img.data);
}

Image3 read_png_rgb(const std::string& path) {
  int w, h, ch;
  std::vector<std::uint8_t> bytes;
  read_png(path, &w, &h, &ch, &bytes);
  if (ch != 3) throw std::runtime_error("expected RGB png: " + path);
  Image3 img(h, w);
  for (size_t i = 0; i < img.data.size(); ++i) img.data[i] = bytes[i] / 255.0;
  return img;
}

LabelImage read_png_gray(const std::string& path) {
  int w, h, ch;
  std::vector<std::uint8_t> bytes;
  read_png(path, &w, &h, &ch, &bytes);
  if (ch != 1) throw std::runtime_error("expected single-channel png: " + path);
  LabelImage img(h, w);
  img.data = std::move(bytes);
  return img;
}

}  // namespace artsplat
