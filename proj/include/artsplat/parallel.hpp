#pragma once

#include <functional>

namespace artsplat {

// Process-wide worker count for tile/pair parallelism. All reductions in
// the library happen in fixed index order, so results are identical for
// any thread count.
void set_num_threads(int n);
int num_threads();

// Runs fn(i) for i in [0, n) on up to num_threads() workers with static
// contiguous chunking. Blocks until done.
void parallel_for(int n, const std::function<void(int)>& fn);

}  // namespace artsplat
