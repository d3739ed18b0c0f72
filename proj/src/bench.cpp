// SPDX-License-Identifier: Apache-2.0
#include "hets/bench.hpp"

#include <bit>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <functional>
#include <map>
#include <sstream>
#include <thread>

#include "hets/wire.hpp"
#include "json.hpp"

namespace hets {
namespace {

using Clock = std::chrono::steady_clock;

double ms_since(Clock::time_point t0) {
    return std::chrono::duration<double, std::milli>(Clock::now() - t0).count();
}

// FNV-1a over result bytes; only used to compare runs.
class Digest {
public:
    void bytes(std::span<const uint8_t> b) {
        for (uint8_t x : b) {
            h_ = (h_ ^ x) * 0x100000001b3ULL;
        }
    }
    void doubles(std::span<const double> v) {
        for (double d : v) {
            const uint64_t u = std::bit_cast<uint64_t>(d);
            for (int i = 0; i < 8; ++i) {
                h_ = (h_ ^ ((u >> (8 * i)) & 0xff)) * 0x100000001b3ULL;
            }
        }
    }
    void result(const Backend& b, const EncryptedVector& ev) {
        if (!ev.ct.is_mock()) {
            bytes(wire::serialize_vector(b, ev));
        }
        doubles(decrypt_vector(b, ev).data);
    }
    std::string hex() const {
        char buf[17];
        std::snprintf(buf, sizeof(buf), "%016llx", static_cast<unsigned long long>(h_));
        return buf;
    }

private:
    uint64_t h_ = 0xcbf29ce484222325ULL;
};

struct Stats {
    double mean = 0;
    double std = 0;
};

// Mean and population deviation of the per-round averages.
Stats round_stats(const std::vector<double>& per_round) {
    Stats s;
    for (double x : per_round) {
        s.mean += x;
    }
    s.mean /= static_cast<double>(per_round.size());
    for (double x : per_round) {
        s.std += (x - s.mean) * (x - s.mean);
    }
    s.std = std::sqrt(s.std / static_cast<double>(per_round.size()));
    return s;
}

std::vector<double> random_values(Prng& rng, std::size_t n) {
    std::vector<double> v(n);
    for (auto& x : v) {
        x = rng.uniform_real(-1.0, 1.0);
    }
    return v;
}

Context bench_context(const BenchOptions& o, const std::vector<int>& workload) {
    ContextOptions opts;
    opts.seed = o.seed;
    opts.workload_steps = workload;
    opts.flags.workers = o.workers;
    if (o.backend == BackendKind::Mock) {
        return Context::structural(profile_params(o.profile), opts);
    }
    return Context::create(o.profile, opts);
}

using Op = std::function<EncryptedVector()>;

void run_op_suite(const BenchOptions& o, BenchReport& report) {
    const Context ctx = bench_context(o, {});
    Backend b(ctx, o.backend, o.seed);
    const std::size_t slots = ctx.slot_count();
    report.galois_steps = ctx.galois_steps();

    std::vector<std::size_t> shapes = o.shapes;
    if (shapes.empty()) {
        for (std::size_t s : kPaperShapes) {
            (s <= slots ? shapes : report.skipped_shapes).push_back(s);
        }
    }
    for (std::size_t s : shapes) {
        require(s >= 1, ErrorCode::ShapeError, "shape must be positive");
        require(s <= slots, ErrorCode::ShapeTooLarge,
                "shape [" + std::to_string(s) + "] exceeds the " + std::to_string(slots) + " slots of " + o.profile);
    }

    Prng rng(o.seed ^ 0x9e3779b97f4a7c15ULL);
    Digest digest;
    const std::vector<double> poly = {0.0, 1.0, 2.0};  // 2x^2 + x
    for (std::size_t shape : shapes) {
        const auto xv = random_values(rng, shape);
        const auto yv = random_values(rng, shape);
        const auto x = encrypt_vector(b, PlainTensor::vector(xv));
        const auto y = encrypt_vector(b, PlainTensor::vector(yv));
        const auto p = PlainTensor::vector(yv);

        std::vector<std::pair<std::string, Op>> ops;
        if (o.suite == "unary") {
            ops = {{"negate", [&] { return negate(b, x); }},
                   {"square", [&] { return square(b, x); }},
                   {"polyval", [&] { return polyval(b, x, poly); }}};
        } else {
            ops = {{"add", [&] { return add(b, x, y); }},
                   {"multiply", [&] { return mul(b, x, y); }},
                   {"sub", [&] { return sub(b, x, y); }},
                   {"dot", [&] { return dot(b, x, y); }},
                   {"add_plain", [&] { return add_plain(b, x, p); }},
                   {"multiply_plain", [&] { return mul_plain(b, x, p); }},
                   {"sub_plain", [&] { return sub_plain(b, x, p); }},
                   {"dot_plain", [&] { return dot_plain(b, x, p); }}};
        }
        for (auto& [name, op] : ops) {
            std::vector<double> per_round;
            EncryptedVector last;
            for (int r = 0; r < o.rounds; ++r) {
                const auto t0 = Clock::now();
                for (int i = 0; i < o.iterations; ++i) {
                    last = op();
                }
                per_round.push_back(ms_since(t0) / o.iterations);
            }
            digest.result(b, last);
            const Stats st = round_stats(per_round);
            report.rows.push_back({name, shape, st.mean, st.std, o.rounds, o.iterations, o.workers, o.profile,
                                   paper_reference_ms(o.suite, name, shape)});
        }
    }
    report.digest = digest.hex();
}

void run_mnist_suite(const BenchOptions& o, BenchReport& report) {
    Model model;
    PlainTensor image;
    if (o.model && o.image) {
        model = *o.model;
        image = *o.image;
    } else {
        const FixtureSeeds seeds;
        const auto images = make_fixture_images(seeds.images, seeds.image_count);
        model = o.model ? *o.model : make_fixture_model(seeds.weights, images);
        image = o.image ? *o.image : images.front();
    }
    model.validate();

    const auto stages = stage_names(model);
    std::vector<std::string> names = {"Key generation", "Input preparation"};
    names.insert(names.end(), stages.begin(), stages.end());
    names.push_back("Full forward step");
    std::map<std::string, std::vector<double>> per_round;

    Digest digest;
    for (int r = 0; r < o.rounds; ++r) {
        std::map<std::string, double> total;
        for (int i = 0; i < o.iterations; ++i) {
            auto t0 = Clock::now();
            const Context ctx = bench_context(o, model.rotation_steps());
            total["Key generation"] += ms_since(t0);
            report.galois_steps = ctx.galois_steps();

            Backend b(ctx, o.backend, o.seed);
            t0 = Clock::now();
            const auto input = prepare_input(b, model, image);
            const double prep = ms_since(t0);
            total["Input preparation"] += prep;
            t0 = Clock::now();
            const auto out = encrypted_forward(b, model, input, [&](const LayerEvent& ev) { total[ev.stage] += ev.millis; });
            total["Full forward step"] += prep + ms_since(t0);

            if (r + 1 == o.rounds && i + 1 == o.iterations) {
                digest.result(b, input);
                digest.result(b, out);
                report.logits = decrypt_vector(b, out).data;
            }
        }
        for (const auto& n : names) {
            per_round[n].push_back(total[n] / o.iterations);
        }
    }
    for (const auto& n : names) {
        const Stats st = round_stats(per_round[n]);
        report.rows.push_back(
            {n, 0, st.mean, st.std, o.rounds, o.iterations, o.workers, o.profile, paper_reference_ms("mnist", n, 0)});
    }
    report.digest = digest.hex();
}

std::string fmt(double v, int prec) {
    std::ostringstream s;
    s.setf(std::ios::fixed);
    s.precision(prec);
    s << v;
    return s.str();
}

}  // namespace

std::optional<double> paper_reference_ms(const std::string& suite, const std::string& name, std::size_t shape) {
    using Table = std::map<std::string, std::vector<double>>;
    // columns follow kPaperShapes
    static const Table unary = {
        {"negate", {0.07, 0.07, 0.07, 0.13, 0.26}},
        {"square", {4.29, 4.29, 4.29, 8.49, 17.16}},
        {"polyval", {10.55, 10.46, 10.51, 21.32, 42.68}},
    };
    static const Table binary = {
        {"add", {0.08, 0.08, 0.08, 0.16, 0.31}},
        {"multiply", {4.45, 4.34, 4.43, 8.84, 17.75}},
        {"sub", {0.08, 0.08, 0.08, 0.15, 0.3}},
        {"dot", {20.15, 23.96, 28.11, 55.94, 112.36}},
        {"add_plain", {0.8, 0.86, 1.07, 2.13, 4.19}},
        {"multiply_plain", {1.75, 1.81, 2.03, 4.02, 7.97}},
        {"sub_plain", {0.8, 0.86, 1.08, 2.14, 4.21}},
        {"dot_plain", {17.37, 21.36, 25.63, 51.14, 101.82}},
    };
    static const std::map<std::string, double> mnist = {
        {"Key generation", 940.01},
        {"Input preparation", 9.8},
        {"Convolutional layer evaluation", 236.9},
        {"First activation(square)", 8.47},
        {"FC1", 1084.65},
        {"Second activation(square)", 4.29},
        {"FC2", 121.36},
        {"Full forward step", 1456.29},
    };
    if (suite == "mnist") {
        const auto it = mnist.find(name);
        return it == mnist.end() ? std::nullopt : std::optional<double>(it->second);
    }
    const Table* t = suite == "unary" ? &unary : suite == "binary" ? &binary : nullptr;
    if (!t || !t->count(name)) {
        return std::nullopt;
    }
    for (std::size_t i = 0; i < std::size(kPaperShapes); ++i) {
        if (kPaperShapes[i] == shape) {
            return t->at(name)[i];
        }
    }
    return std::nullopt;
}

BenchReport run_bench(const BenchOptions& o) {
    require(o.suite == "unary" || o.suite == "binary" || o.suite == "mnist", ErrorCode::InvalidParams,
            "unknown bench suite '" + o.suite + "' (unary, binary, mnist)");
    require(o.rounds >= 1 && o.iterations >= 1, ErrorCode::InvalidParams, "rounds and iterations must be positive");
    BenchReport report;
    report.suite = o.suite;
    report.profile = o.profile;
    report.backend = backend_kind_name(o.backend);
    report.workers = o.workers;
    report.cpu_count = std::thread::hardware_concurrency();
    report.seed = o.seed;
    if (o.suite == "mnist") {
        run_mnist_suite(o, report);
    } else {
        run_op_suite(o, report);
    }
    return report;
}

std::string bench_text(const BenchReport& r) {
    std::ostringstream out;
    out << "suite " << r.suite << "  profile " << r.profile << "  backend " << r.backend << "  workers " << r.workers
        << "  cpus " << r.cpu_count << "  seed " << r.seed << "\n";
    if (!r.skipped_shapes.empty()) {
        out << "skipped shapes above the slot count:";
        for (auto s : r.skipped_shapes) {
            out << " [" << s << "]";
        }
        out << "\n";
    }
    std::size_t w = 9;
    for (const auto& row : r.rows) {
        w = std::max(w, row.name.size());
    }
    char line[256];
    std::snprintf(line, sizeof(line), "%-*s %8s %12s %10s %6s %6s %7s  %s\n", static_cast<int>(w), "operation", "shape",
                  "mean ms", "std ms", "rounds", "iters", "workers", "paper (different hardware)");
    out << line;
    for (const auto& row : r.rows) {
        const std::string shape = row.shape ? "[" + std::to_string(row.shape) + "]" : "-";
        const std::string paper = row.paper_ms ? fmt(*row.paper_ms, 2) : "-";
        std::snprintf(line, sizeof(line), "%-*s %8s %12s %10s %6d %6d %7zu  %s\n", static_cast<int>(w),
                      row.name.c_str(), shape.c_str(), fmt(row.mean_ms, 3).c_str(), fmt(row.std_ms, 3).c_str(),
                      row.rounds, row.iterations, row.workers, paper.c_str());
        out << line;
    }
    out << "digest " << r.digest << "\n";
    return out.str();
}

std::string bench_json(const BenchReport& r) {
    nlohmann::json rows = nlohmann::json::array();
    for (const auto& row : r.rows) {
        nlohmann::json j = {{"name", row.name},         {"shape", row.shape},   {"mean_ms", row.mean_ms},
                            {"std_ms", row.std_ms},     {"rounds", row.rounds}, {"iterations", row.iterations},
                            {"worker_count", row.workers}, {"profile", row.profile}};
        j["paper_ms"] = row.paper_ms ? nlohmann::json(*row.paper_ms) : nlohmann::json(nullptr);
        rows.push_back(std::move(j));
    }
    nlohmann::json doc = {
        {"suite", r.suite},
        {"environment",
         {{"cpu_count", r.cpu_count}, {"profile", r.profile}, {"backend", r.backend}, {"workers", r.workers}}},
        {"seed", r.seed},
        {"skipped_shapes", r.skipped_shapes},
        {"galois_steps", r.galois_steps},
        {"rows", rows},
        {"paper_column", "paper (different hardware)"},
        {"digest", r.digest},
    };
    if (!r.logits.empty()) {
        doc["logits"] = r.logits;
    }
    return doc.dump(2) + "\n";
}

}  // namespace hets
