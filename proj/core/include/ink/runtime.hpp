#pragma once

namespace ink {

// Keeps freed blocks in the heap instead of returning them to the OS. The
// autodiff tape allocates and releases many mid-sized matrices per step, and
// the default glibc thresholds turn each of those into page faults.
void configure_allocator();

}  // namespace ink
