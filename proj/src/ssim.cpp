#include "artsplat/ssim.hpp"

#include <array>
#include <cmath>
#include <stdexcept>
#include <vector>

namespace artsplat {

namespace {

constexpr int kWin = 11;
constexpr int kHalf = kWin / 2;
constexpr double kC1 = 0.01 * 0.01;
constexpr double kC2 = 0.03 * 0.03;

std::array<double, kWin * kWin> make_window() {
  std::array<double, kWin * kWin> w{};
  const double sigma = 1.5;
  double total = 0.0;
  for (int r = 0; r < kWin; ++r) {
    for (int c = 0; c < kWin; ++c) {
      const double dr = r - kHalf, dc = c - kHalf;
      w[r * kWin + c] = std::exp(-(dr * dr + dc * dc) / (2.0 * sigma * sigma));
      total += w[r * kWin + c];
    }
  }
  for (auto& v : w) v /= total;
  return w;
}

}  // namespace

double ssim(const Image3& a, const Image3& b, Image3* grad_a) {
  if (a.height != b.height || a.width != b.width) {
    throw std::invalid_argument("ssim: dimension mismatch");
  }
  if (a.height < kWin || a.width < kWin) {
    throw std::invalid_argument("ssim: images must be at least 11x11");
  }
  static const auto window = make_window();
  const int vh = a.height - kWin + 1;  // valid region
  const int vw = a.width - kWin + 1;
  if (grad_a) {
    *grad_a = Image3(a.height, a.width);
  }
  const double count = double(vh) * vw * 3.0;
  double total = 0.0;
  for (int ch = 0; ch < 3; ++ch) {
    for (int r = 0; r < vh; ++r) {
      for (int c = 0; c < vw; ++c) {
        double mx = 0, my = 0, sxx = 0, syy = 0, sxy = 0;
        for (int wr = 0; wr < kWin; ++wr) {
          for (int wc = 0; wc < kWin; ++wc) {
            const double wgt = window[wr * kWin + wc];
            const double x = a.at(r + wr, c + wc, ch);
            const double y = b.at(r + wr, c + wc, ch);
            mx += wgt * x;
            my += wgt * y;
            sxx += wgt * x * x;
            syy += wgt * y * y;
            sxy += wgt * x * y;
          }
        }
        const double vx = sxx - mx * mx;
        const double vy = syy - my * my;
        const double cov = sxy - mx * my;
        const double a1 = 2.0 * mx * my + kC1;
        const double a2 = 2.0 * cov + kC2;
        const double b1 = mx * mx + my * my + kC1;
        const double b2 = vx + vy + kC2;
        const double s = (a1 * a2) / (b1 * b2);
        total += s;
        if (grad_a) {
          // dS/dmu_x, dS/dvar_x, dS/dcov, then scatter through the window.
          const double d_mx = 2.0 * my * a2 / (b1 * b2) - 2.0 * mx * s / b1;
          const double d_vx = -s / b2;
          const double d_cov = 2.0 * a1 / (b1 * b2);
          for (int wr = 0; wr < kWin; ++wr) {
            for (int wc = 0; wc < kWin; ++wc) {
              const double wgt = window[wr * kWin + wc];
              const double x = a.at(r + wr, c + wc, ch);
              const double y = b.at(r + wr, c + wc, ch);
              grad_a->at(r + wr, c + wc, ch) +=
                  wgt * (d_mx + 2.0 * (x - mx) * d_vx + (y - my) * d_cov) / count;
            }
          }
        }
      }
    }
  }
  return total / count;
}

}  // namespace artsplat
