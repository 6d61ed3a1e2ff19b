// Copyright (c) 2026, The ReCo-KD Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstddef>
#include <functional>

namespace recokd::detail {

/// Worker cap from RECO_KD_THREADS (default: hardware concurrency, min 1).
std::size_t kernel_threads();

/// Runs fn(begin, end) over contiguous chunks of [0, n). Each index is visited
/// by exactly one worker, so kernels that write disjoint outputs per index stay
/// bit-deterministic regardless of the thread count.
void parallel_for(std::size_t n, const std::function<void(std::size_t, std::size_t)>& fn);

}  // namespace recokd::detail
