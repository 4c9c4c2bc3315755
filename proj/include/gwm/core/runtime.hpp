// SPDX-License-Identifier: Apache-2.0
#pragma once

#if defined(__GLIBC__) || defined(__linux__)
#include <malloc.h>
#endif

namespace gwm {

// Keeps large allocations on the heap freelist instead of mmap/munmap per
// tensor. The op graph allocates and frees multi-megabyte buffers every
// forward pass; without this, page faults dominate the small-model profile.
inline void tune_allocator() {
#if defined(__GLIBC__) || defined(__linux__)
  mallopt(M_MMAP_THRESHOLD, 512 * 1024 * 1024);
  mallopt(M_TRIM_THRESHOLD, 512 * 1024 * 1024);
#endif
}

}  // namespace gwm
