#pragma once

#include "artsplat/image.hpp"

namespace artsplat {

// Structural similarity (Wang et al.): 11x11 Gaussian window sigma=1.5,
// C1=0.01^2, C2=0.03^2 on [0,1] range, averaged over the valid (fully
// windowed) region and over channels. Requires dimensions >= 11x11.
// When grad_a is non-null it receives d(ssim)/d(a).
double ssim(const Image3& a, const Image3& b, Image3* grad_a = nullptr);

}  // namespace artsplat
