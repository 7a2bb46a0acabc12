#pragma once

#if defined(_OPENMP)
#include <omp.h>
#else
static inline int omp_get_max_threads() { return 1; }
static inline int omp_get_thread_num() { return 0; }
#endif

namespace pm {

// Loops below this many output elements are not worth a parallel region.
inline constexpr long kParallelCutoff = 4096;

}  // namespace pm
