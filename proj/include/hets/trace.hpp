// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <string>

namespace hets {

/// Label attached to backend trace entries recorded on this thread. parallel_for
/// propagates the label into its workers.
const std::string& current_trace_tag();

class ScopedTraceTag {
public:
    explicit ScopedTraceTag(std::string tag);
    ~ScopedTraceTag();
    ScopedTraceTag(const ScopedTraceTag&) = delete;
    ScopedTraceTag& operator=(const ScopedTraceTag&) = delete;

private:
    std::string previous_;
};

}  // namespace hets
