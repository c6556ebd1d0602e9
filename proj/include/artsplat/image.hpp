#pragma once

#include <cstdint>
#include <vector>

namespace artsplat {

// Row-major planar-free image containers. Image3 stores interleaved RGB
// doubles in [0,1]; Image1 a single channel; LabelImage 8-bit part ids
// with 255 as the "unlabeled" sentinel.
struct Image3 {
  int height = 0;
  int width = 0;
  std::vector<double> data;  // height * width * 3

  Image3() = default;
  Image3(int h, int w) : height(h), width(w), data(size_t(h) * w * 3, 0.0) {}

  double& at(int r, int c, int ch) { return data[(size_t(r) * width + c) * 3 + ch]; }
  double at(int r, int c, int ch) const { return data[(size_t(r) * width + c) * 3 + ch]; }
};

struct Image1 {
  int height = 0;
  int width = 0;
  std::vector<double> data;

  Image1() = default;
  Image1(int h, int w) : height(h), width(w), data(size_t(h) * w, 0.0) {}

  double& at(int r, int c) { return data[size_t(r) * width + c]; }
  double at(int r, int c) const { return data[size_t(r) * width + c]; }
};

constexpr std::uint8_t kUnlabeled = 255;

struct LabelImage {
  int height = 0;
  int width = 0;
  std::vector<std::uint8_t> data;

  LabelImage() = default;
  LabelImage(int h, int w, std::uint8_t fill = kUnlabeled)
      : height(h), width(w), data(size_t(h) * w, fill) {}

  std::uint8_t& at(int r, int c) { return data[size_t(r) * width + c]; }
  std::uint8_t at(int r, int c) const { return data[size_t(r) * width + c]; }
};

double mean_abs_diff(const Image3& a, const Image3& b);
double mean_abs_diff(const Image1& a, const Image1& b);

}  // namespace artsplat
