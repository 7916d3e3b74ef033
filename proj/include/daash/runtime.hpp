#pragma once

namespace daash {

/// Keeps large tensor buffers on the heap instead of fresh mmap pages,
/// which otherwise dominate runtime on small graphs. No-op off glibc.
void configure_allocator();

}  // namespace daash
