// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "hets/nn.hpp"

namespace hets {

/// Tensor shapes of the published operation tables.
inline constexpr std::size_t kPaperShapes[] = {256, 1024, 4096, 8192, 16384};

struct BenchOptions {
    std::string suite = "unary";  // unary | binary | mnist
    std::string profile = "mnist-8192";
    BackendKind backend = BackendKind::Real;
    /// Empty: the published shapes that fit in one ciphertext.
    std::vector<std::size_t> shapes;
    int rounds = 5;
    int iterations = 10;
    std::size_t workers = 1;
    uint64_t seed = 1;
    /// mnist suite only; the built-in fixtures are used when absent.
    std::optional<Model> model;
    std::optional<PlainTensor> image;
};

struct BenchRow {
    std::string name;
    std::size_t shape = 0;  // 0 for the mnist stages
    double mean_ms = 0;
    double std_ms = 0;
    int rounds = 0;
    int iterations = 0;
    std::size_t workers = 1;
    std::string profile;
    std::optional<double> paper_ms;
};

struct BenchReport {
    std::string suite;
    std::string profile;
    std::string backend;
    std::size_t workers = 1;
    unsigned cpu_count = 0;
    uint64_t seed = 0;
    std::vector<std::size_t> skipped_shapes;
    std::vector<std::size_t> galois_steps;
    std::vector<BenchRow> rows;
    /// Mnist suite: decrypted logits and predicted class of the last run.
    std::vector<double> logits;
    /// Hex digest over every result ciphertext (real backend) and decrypted output.
    std::string digest;
};

/// Reference figure of the published tables (8 vCPUs for the mnist stages), or none.
std::optional<double> paper_reference_ms(const std::string& suite, const std::string& name, std::size_t shape);

/// ShapeTooLarge for a requested shape above the slot count; InvalidParams for an
/// unknown suite or non-positive rounds / iterations.
BenchReport run_bench(const BenchOptions& options);

std::string bench_text(const BenchReport& report);
std::string bench_json(const BenchReport& report);

}  // namespace hets
