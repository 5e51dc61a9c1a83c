#pragma once

#if defined(__GLIBC__)
#include <malloc.h>
#endif

namespace cola {

// Keeps large activation buffers on the heap between training steps instead
// of returning them to the OS (and page-faulting them back in) every step.
inline void tune_allocator() {
#if defined(__GLIBC__)
  mallopt(M_MMAP_THRESHOLD, static_cast<int>(4 * 1024 * 1024 * sizeof(long)));
  mallopt(M_TRIM_THRESHOLD, 1 << 30);
  mallopt(M_TOP_PAD, 256 << 20);
#endif
}

}  // namespace cola
