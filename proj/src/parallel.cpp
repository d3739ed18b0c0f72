// SPDX-License-Identifier: Apache-2.0
#include "hets/parallel.hpp"

#include <algorithm>
#include <exception>
#include <mutex>
#include <thread>
#include <vector>

#include "hets/trace.hpp"

namespace hets {

namespace {
thread_local std::size_t t_workers = 1;
thread_local std::string t_tag;
thread_local bool t_inside_worker = false;
}  // namespace

std::size_t current_workers() { return t_workers; }

bool inside_parallel_worker() { return t_inside_worker; }

ScopedWorkers::ScopedWorkers(std::size_t workers) : previous_(t_workers) { t_workers = std::max<std::size_t>(1, workers); }

ScopedWorkers::~ScopedWorkers() { t_workers = previous_; }

const std::string& current_trace_tag() { return t_tag; }

ScopedTraceTag::ScopedTraceTag(std::string tag) : previous_(t_tag) { t_tag = std::move(tag); }

ScopedTraceTag::~ScopedTraceTag() { t_tag = previous_; }

void parallel_for(std::size_t count, const std::function<void(std::size_t)>& body) {
    const std::size_t workers = std::min(t_workers, count);
    if (workers <= 1) {
        for (std::size_t i = 0; i < count; ++i) {
            body(i);
        }
        return;
    }

    std::exception_ptr first_error;
    std::mutex error_mutex;
    const std::string tag = t_tag;
    auto run_block = [&](std::size_t begin, std::size_t end) {
        // Workers never fan out again.
        ScopedWorkers serial(1);
        ScopedTraceTag tag_guard(tag);
        const bool was_inside = t_inside_worker;
        t_inside_worker = true;
        try {
            for (std::size_t i = begin; i < end; ++i) {
                body(i);
            }
        } catch (...) {
            std::lock_guard lock(error_mutex);
            if (!first_error) {
                first_error = std::current_exception();
            }
        }
        t_inside_worker = was_inside;
    };

    std::vector<std::jthread> threads;
    threads.reserve(workers - 1);
    const std::size_t base = count / workers;
    const std::size_t extra = count % workers;
    std::size_t begin = 0;
    std::size_t first_end = 0;
    for (std::size_t w = 0; w < workers; ++w) {
        const std::size_t end = begin + base + (w < extra ? 1 : 0);
        if (w == 0) {
            first_end = end;
        } else {
            threads.emplace_back(run_block, begin, end);
        }
        begin = end;
    }
    run_block(0, first_end);
    threads.clear();
    if (first_error) {
        std::rethrow_exception(first_error);
    }
}

}  // namespace hets
