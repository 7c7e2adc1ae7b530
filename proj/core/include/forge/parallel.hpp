// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstddef>
#include <functional>

namespace forge {

// Worker cap: FORGE_THREADS when set to a positive integer, otherwise
// hardware concurrency.
std::size_t thread_cap();

// Runs body(i) for i in [0, n) on up to thread_cap() threads. Exceptions from
// workers are rethrown on the calling thread (first one wins).
void parallel_for(std::size_t n, const std::function<void(std::size_t)>& body);

}  // namespace forge
