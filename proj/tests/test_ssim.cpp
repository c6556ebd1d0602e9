#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <random>

#include "artsplat/ssim.hpp"

using namespace artsplat;

namespace {

// Independent reference: two-pass (means first, then central moments),
// written against Wang et al. directly.
double reference_ssim(const Image3& a, const Image3& b) {
  const int win = 11, half = 5;
  const double sigma = 1.5, c1 = 0.01 * 0.01, c2 = 0.03 * 0.03;
  std::vector<double> w(win * win);
  double wsum = 0.0;
  for (int r = 0; r < win; ++r) {
    for (int c = 0; c < win; ++c) {
      w[r * win + c] = std::exp(-((r - half) * (r - half) + (c - half) * (c - half)) /
                                (2.0 * sigma * sigma));
      wsum += w[r * win + c];
    }
  }
  for (auto& v : w) v /= wsum;

  double total = 0.0;
  int count = 0;
  for (int ch = 0; ch < 3; ++ch) {
    for (int r = 0; r + win <= a.height; ++r) {
      for (int c = 0; c + win <= a.width; ++c) {
        double mx = 0.0, my = 0.0;
        for (int i = 0; i < win; ++i) {
          for (int j = 0; j < win; ++j) {
            mx += w[i * win + j] * a.at(r + i, c + j, ch);
            my += w[i * win + j] * b.at(r + i, c + j, ch);
          }
        }
        double vx = 0.0, vy = 0.0, cov = 0.0;
        for (int i = 0; i < win; ++i) {
          for (int j = 0; j < win; ++j) {
            const double dx = a.at(r + i, c + j, ch) - mx;
            const double dy = b.at(r + i, c + j, ch) - my;
            vx += w[i * win + j] * dx * dx;
            vy += w[i * win + j] * dy * dy;
            cov += w[i * win + j] * dx * dy;
          }
        }
        total += ((2 * mx * my + c1) * (2 * cov + c2)) /
                 ((mx * mx + my * my + c1) * (vx + vy + c2));
        ++count;
      }
    }
  }
  return total / count;
}

Image3 random_image(int h, int w, unsigned seed) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  Image3 img(h, w);
  for (auto& v : img.data) v = u(rng);
  return img;
}

}  // namespace

TEST_CASE("ssim of identical images is 1") {
  const auto img = random_image(16, 20, 1);
  CHECK(ssim(img, img) == doctest::Approx(1.0).epsilon(1e-12));
}

TEST_CASE("ssim is symmetric") {
  const auto a = random_image(16, 16, 2);
  const auto b = random_image(16, 16, 3);
  CHECK(ssim(a, b) == doctest::Approx(ssim(b, a)).epsilon(1e-12));
}

TEST_CASE("ssim matches the reference implementation") {
  const auto a = random_image(24, 18, 4);
  auto b = a;
  for (auto& v : b.data) v = std::min(1.0, v + 0.5);
  CHECK(ssim(a, b) == doctest::Approx(reference_ssim(a, b)).epsilon(1e-6));

  Image3 flat(16, 16);
  for (auto& v : flat.data) v = 0.25;
  Image3 offset = flat;
  for (auto& v : offset.data) v += 0.5;
  CHECK(ssim(flat, offset) == doctest::Approx(reference_ssim(flat, offset)).epsilon(1e-6));

  const auto r1 = random_image(20, 20, 5);
  const auto r2 = random_image(20, 20, 6);
  CHECK(ssim(r1, r2) == doctest::Approx(reference_ssim(r1, r2)).epsilon(1e-6));
}

TEST_CASE("ssim of an image against its negative is low") {
  const auto a = random_image(20, 20, 7);
  Image3 neg = a;
  for (auto& v : neg.data) v = 1.0 - v;
  CHECK(ssim(a, neg) < 0.2);
}

TEST_CASE("ssim rejects dimension mismatch and tiny images") {
  const auto a = random_image(16, 16, 8);
  const auto b = random_image(16, 17, 9);
  CHECK_THROWS(ssim(a, b));
  const auto tiny = random_image(8, 8, 10);
  CHECK_THROWS(ssim(tiny, tiny));
}

TEST_CASE("ssim gradient matches central finite differences") {
  auto a = random_image(13, 14, 11);
  const auto b = random_image(13, 14, 12);
  Image3 grad;
  ssim(a, b, &grad);
  std::mt19937_64 rng(13);
  std::uniform_int_distribution<size_t> pick(0, a.data.size() - 1);
  const double h = 1e-6;
  for (int trial = 0; trial < 40; ++trial) {
    const size_t idx = pick(rng);
    const double orig = a.data[idx];
    a.data[idx] = orig + h;
    const double up = ssim(a, b);
    a.data[idx] = orig - h;
    const double down = ssim(a, b);
    a.data[idx] = orig;
    const double fd = (up - down) / (2.0 * h);
    CHECK(grad.data[idx] == doctest::Approx(fd).epsilon(1e-4));
  }
}
