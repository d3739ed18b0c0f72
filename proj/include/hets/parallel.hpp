// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstddef>
#include <functional>

namespace hets {

/// Worker count used by parallel_for on the calling thread. Defaults to 1.
std::size_t current_workers();

/// True on threads spawned by parallel_for.
bool inside_parallel_worker();

/// Sets the worker count for the calling thread for the lifetime of the guard.
class ScopedWorkers {
public:
    explicit ScopedWorkers(std::size_t workers);
    ~ScopedWorkers();
    ScopedWorkers(const ScopedWorkers&) = delete;
    ScopedWorkers& operator=(const ScopedWorkers&) = delete;

private:
    std::size_t previous_;
};

/// Runs body(i) for i in [0, count). Iterations are split into contiguous blocks
/// over current_workers() threads. Each index is processed exactly once and the
/// body must only write state owned by that index, so results never depend on the
/// worker count. Nested calls from inside a worker run serially. The first
/// exception thrown by any iteration is rethrown on the caller.
void parallel_for(std::size_t count, const std::function<void(std::size_t)>& body);

}  // namespace hets
