#include "artsplat/image.hpp"

#include <cmath>
#include <stdexcept>

namespace artsplat {

double mean_abs_diff(const Image3& a, const Image3& b) {
  if (a.height != b.height || a.width != b.width) {
    throw std::invalid_argument("mean_abs_diff: dimension mismatch");
  }
  double total = 0.0;
  for (size_t i = 0; i < a.data.size(); ++i) total += std::abs(a.data[i] - b.data[i]);
  return a.data.empty() ? 0.0 : total / static_cast<double>(a.data.size());
}

double mean_abs_diff(const Image1& a, const Image1& b) {
  if (a.height != b.height || a.width != b.width) {
    throw std::invalid_argument("mean_abs_diff: dimension mismatch");
  }
  double total = 0.0;
  for (size_t i = 0; i < a.data.size(); ++i) total += std::abs(a.data[i] - b.data[i]);
  return a.data.empty() ? 0.0 : total / static_cast<double>(a.data.size());
}

}  // namespace artsplat
