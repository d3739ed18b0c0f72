// SPDX-License-Identifier: Apache-2.0
// hets: key generation, encryption utilities, inference (local or remote),
// the inference service, benchmarks and fixture generation.

#include <chrono>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>

#include "CLI11.hpp"
#include "hets/bench.hpp"
#include "hets/service.hpp"
#include "json.hpp"

using namespace hets;
namespace fs = std::filesystem;
using Clock = std::chrono::steady_clock;

namespace {

struct Global {
    std::string profile = "mnist-8192";
    std::string backend = "real";
    std::size_t workers = 1;
    uint64_t seed = 1;
};

double ms_since(Clock::time_point t0) {
    return std::chrono::duration<double, std::milli>(Clock::now() - t0).count();
}

std::string kb(std::size_t bytes) {
    char buf[64];
    std::snprintf(buf, sizeof(buf), "%zu bytes (%.1f KB)", bytes, static_cast<double>(bytes) / 1000.0);
    return buf;
}

std::string join_steps(const std::vector<std::size_t>& steps) {
    std::ostringstream s;
    for (std::size_t i = 0; i < steps.size(); ++i) {
        s << (i ? "," : "") << steps[i];
    }
    return s.str();
}

// Rotation steps of the built-in MNIST network; only the shapes matter.
std::vector<int> fixture_steps() {
    const FixtureSeeds seeds;
    return make_fixture_model(seeds.weights, make_fixture_images(seeds.images, seeds.image_count)).rotation_steps();
}

Context load_context(const std::string& path, std::size_t workers) {
    return wire::deserialize_context(wire::read_bytes(path), workers);
}

PlainTensor pick_image(const std::string& path, std::size_t index) {
    const auto images = load_images(path);
    require(index < images.size(), ErrorCode::ShapeError,
            path + " holds " + std::to_string(images.size()) + " images, index " + std::to_string(index) +
                " requested");
    return images[index];
}

void print_logits(const PlainTensor& logits) {
    std::printf("logits:");
    for (double v : logits.data) {
        std::printf(" %.4f", v);
    }
    std::printf("\npredicted class: %zu\n", argmax(logits));
}

// ---- keygen ---------------------------------------------------------------

struct KeygenArgs {
    std::string out;
    std::string model;
};

int cmd_keygen(const Global& g, const KeygenArgs& a) {
    std::error_code ec;
    fs::create_directories(a.out, ec);
    require(!ec, ErrorCode::IoError, "cannot create " + a.out + ": " + ec.message());
    ContextOptions opts;
    opts.seed = g.seed;
    opts.flags.workers = g.workers;
    if (!a.model.empty()) {
        opts.workload_steps = load_model(a.model).rotation_steps();
    } else if (g.profile == "mnist-8192") {
        opts.workload_steps = fixture_steps();
    }
    const auto t0 = Clock::now();
    const Context ctx = Context::create(g.profile, opts);
    const double keygen_ms = ms_since(t0);

    const auto priv = wire::serialize_private_context(ctx);
    const auto pub = wire::serialize_public_context(ctx);
    const fs::path dir(a.out);
    wire::write_bytes(dir / "private.ctx", priv);
    wire::write_bytes(dir / "public.ctx", pub);

    std::printf("profile: %s\n", g.profile.c_str());
    std::printf("key generation: %.1f ms (workers %zu)\n", keygen_ms, g.workers);
    std::printf("galois steps (%zu): %s\n", ctx.galois_steps().size(), join_steps(ctx.galois_steps()).c_str());
    std::printf("private context: %s -> %s\n", kb(priv.size()).c_str(), (dir / "private.ctx").c_str());
    std::printf("public context:  %s -> %s\n", kb(pub.size()).c_str(), (dir / "public.ctx").c_str());
    return 0;
}

// ---- encrypt / decrypt ----------------------------------------------------

struct CryptArgs {
    std::string context;
    std::string values;
    std::string input;
    std::string out;
    bool replicate = false;
};

std::vector<double> parse_values(const CryptArgs& a) {
    if (!a.input.empty()) {
        std::ifstream in(a.input);
        require(static_cast<bool>(in), ErrorCode::ParseError, a.input + ": cannot open");
        try {
            return nlohmann::json::parse(in).get<std::vector<double>>();
        } catch (const nlohmann::json::exception& e) {
            fail(ErrorCode::ParseError, a.input + ": expected a JSON array of numbers (" + e.what() + ")");
        }
    }
    std::vector<double> out;
    std::stringstream s(a.values);
    std::string item;
    while (std::getline(s, item, ',')) {
        try {
            std::size_t used = 0;
            out.push_back(std::stod(item, &used));
            require(used == item.size(), ErrorCode::ParseError, "bad number '" + item + "'");
        } catch (const std::logic_error&) {
            fail(ErrorCode::ParseError, "bad number '" + item + "'");
        }
    }
    require(!out.empty(), ErrorCode::ParseError, "no values given (use --values or --input)");
    return out;
}

int cmd_encrypt(const Global& g, const CryptArgs& a) {
    const Context ctx = load_context(a.context, g.workers);
    Backend b(ctx, BackendKind::Real, g.seed);
    const auto ev = encrypt_vector(b, PlainTensor::vector(parse_values(a)), a.replicate);
    const auto bytes = wire::serialize_vector(b, ev);
    wire::write_bytes(a.out, bytes);
    std::printf("encrypted %zu values at level %d: %s -> %s\n", ev.length, ev.level(), kb(bytes.size()).c_str(),
                a.out.c_str());
    return 0;
}

int cmd_decrypt(const Global& g, const CryptArgs& a) {
    const Context ctx = load_context(a.context, g.workers);
    require(ctx.has_secret_key(), ErrorCode::MissingKey, a.context + " is a public context");
    Backend b(ctx, BackendKind::Real, g.seed);
    const auto values = decrypt_vector(b, wire::deserialize_vector(b, wire::read_bytes(a.input)));
    for (std::size_t i = 0; i < values.data.size(); ++i) {
        std::printf("%s%.6f", i ? " " : "", values.data[i]);
    }
    std::printf("\n");
    return 0;
}

// ---- infer ----------------------------------------------------------------

struct InferArgs {
    std::string context;
    std::string model;
    std::string images;
    std::size_t index = 0;
    std::string connect;
};

void stage_row(const std::string& name, const std::string& value, const std::string& note = "") {
    std::printf("%-32s %14s  %s\n", name.c_str(), value.c_str(), note.c_str());
}

std::string ms_text(double ms) {
    char buf[32];
    std::snprintf(buf, sizeof(buf), "%.2f", ms);
    return buf;
}

int cmd_infer(const Global& g, const InferArgs& a) {
    const Model model = load_model(a.model);
    const PlainTensor image = pick_image(a.images, a.index);
    const BackendKind kind = parse_backend_kind(g.backend);

    auto t0 = Clock::now();
    std::string keygen_note = g.profile;
    const Context ctx = [&] {
        if (!a.context.empty()) {
            Context c = load_context(a.context, g.workers);
            require(c.has_secret_key(), ErrorCode::MissingKey,
                    a.context + " is a public context; decryption needs the private one");
            keygen_note = "loaded from " + a.context;
            return c;
        }
        ContextOptions opts;
        opts.seed = g.seed;
        opts.flags.workers = g.workers;
        opts.workload_steps = model.rotation_steps();
        return kind == BackendKind::Mock ? Context::structural(profile_params(g.profile), opts)
                                         : Context::create(g.profile, opts);
    }();
    const double keygen_ms = ms_since(t0);
    require(model.depth() <= ctx.scheme()->top_level(), ErrorCode::LevelExhausted,
            "model depth " + std::to_string(model.depth()) + " exceeds the " + std::to_string(ctx.scheme()->top_level()) +
                " levels of " + ctx.params().name);
    Backend b(ctx, kind, g.seed);

    std::printf("%-32s %14s  %s\n", "stage", "duration (ms)", "");
    stage_row("Key generation", ms_text(keygen_ms), keygen_note);

    PlainTensor logits;
    if (a.connect.empty()) {
        t0 = Clock::now();
        const auto input = prepare_input(b, model, image);
        const double prep = ms_since(t0);
        stage_row("Input preparation", ms_text(prep));
        t0 = Clock::now();
        const auto out = encrypted_forward(b, model, input, [](const LayerEvent& ev) {
            stage_row(ev.stage, ms_text(ev.millis),
                      "level " + std::to_string(ev.level_in) + " -> " + std::to_string(ev.level_out));
        });
        stage_row("Full forward step", ms_text(prep + ms_since(t0)));
        logits = decrypt_vector(b, out);
    } else {
        require(kind == BackendKind::Real, ErrorCode::BackendMismatch, "--connect needs the real backend");
        const auto [host, port] = parse_endpoint(a.connect);
        t0 = Clock::now();
        const auto input = prepare_input(b, model, image);
        const double prep = ms_since(t0);
        stage_row("Input preparation", ms_text(prep));
        t0 = Clock::now();
        const auto reply = remote_infer(b, input, host, port);
        const double round_trip = ms_since(t0);
        for (const auto& stage : stage_names(model)) {
            stage_row(stage, "remote", "evaluated by " + a.connect);
        }
        stage_row("Full forward step", ms_text(prep + round_trip), "includes the network round trip");
        logits = decrypt_vector(b, reply.logits);
        std::printf("bytes sent:     %s\n", kb(reply.bytes_sent).c_str());
        std::printf("bytes received: %s\n", kb(reply.bytes_received).c_str());
        std::printf("total:          %s (published reference: 427 KB, different format)\n",
                    kb(reply.bytes_sent + reply.bytes_received).c_str());
    }
    print_logits(logits);
    std::printf("plain class: %zu\n", argmax(plain_forward(model, image)));
    return 0;
}

// ---- serve ----------------------------------------------------------------

struct ServeArgs {
    std::string context;
    std::string model;
    std::string listen = "127.0.0.1:7700";
};

int cmd_serve(const Global& g, const ServeArgs& a) {
    const Context ctx = load_context(a.context, g.workers).make_public();
    const auto [host, port] = parse_endpoint(a.listen);
    InferenceService service(ctx, load_model(a.model), host, port);
    service.start();
    std::printf("listening on %s:%u (profile %s, workers %zu)\n", host.c_str(), service.port(),
                ctx.params().name.c_str(), g.workers);
    std::fflush(stdout);
    service.wait();
    return 0;
}

// ---- bench ----------------------------------------------------------------

struct BenchArgs {
    std::string suite = "unary";
    std::vector<std::size_t> shapes;
    int rounds = 5;
    int iterations = 10;
    std::string json;
    std::string model;
    std::string images;
    std::size_t index = 0;
};

int cmd_bench(const Global& g, const BenchArgs& a) {
    BenchOptions o;
    o.suite = a.suite;
    o.profile = g.profile;
    o.backend = parse_backend_kind(g.backend);
    o.shapes = a.shapes;
    o.rounds = a.rounds;
    o.iterations = a.iterations;
    o.workers = g.workers;
    o.seed = g.seed;
    if (!a.model.empty()) {
        o.model = load_model(a.model);
    }
    if (!a.images.empty()) {
        o.image = pick_image(a.images, a.index);
    }
    const BenchReport report = run_bench(o);
    std::fputs(bench_text(report).c_str(), stdout);
    const std::string path = a.json.empty() ? "bench-" + a.suite + ".json" : a.json;
    const std::string text = bench_json(report);
    wire::write_bytes(path, std::span(reinterpret_cast<const uint8_t*>(text.data()), text.size()));
    std::printf("report: %s\n", path.c_str());
    return 0;
}

// ---- fixtures -------------------------------------------------------------

struct FixtureArgs {
    std::string out = "fixtures";
    FixtureSeeds seeds;
};

int cmd_fixtures(const FixtureArgs& a) {
    std::error_code ec;
    fs::create_directories(a.out, ec);
    require(!ec, ErrorCode::IoError, "cannot create " + a.out + ": " + ec.message());
    write_fixtures(a.out, a.seeds);
    std::printf("wrote mnist_cnn.json, mnist_images.json, manifest.json to %s\n", a.out.c_str());
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"hets: encrypted tensor computations and inference"};
    app.require_subcommand(1);
    app.fallthrough();

    Global g;
    app.add_option("--profile", g.profile, "Parameter profile")
        ->check(CLI::IsMember(profile_names()))
        ->capture_default_str();
    app.add_option("--backend", g.backend, "real or mock")->check(CLI::IsMember({"real", "mock"}))->capture_default_str();
    app.add_option("--workers", g.workers, "Worker threads")->envname("HETS_WORKERS")->capture_default_str();
    app.add_option("--seed", g.seed, "Seed for keys and encryption noise")->capture_default_str();

    KeygenArgs keygen;
    auto* kg = app.add_subcommand("keygen", "Generate private and public context files");
    kg->add_option("--out", keygen.out, "Output directory")->required();
    kg->add_option("--model", keygen.model, "Model whose rotation steps get dedicated keys");

    CryptArgs enc;
    auto* en = app.add_subcommand("encrypt", "Encrypt a vector into an EncryptedVector frame");
    en->add_option("--context", enc.context, "Context file")->required();
    en->add_option("--values", enc.values, "Comma-separated values");
    en->add_option("--input", enc.input, "JSON array of values");
    en->add_option("--out", enc.out, "Output file")->required();
    en->add_flag("--replicate", enc.replicate, "Fill the slots with copies");

    CryptArgs dec;
    auto* de = app.add_subcommand("decrypt", "Decrypt an EncryptedVector frame");
    de->add_option("--context", dec.context, "Private context file")->required();
    de->add_option("--in", dec.input, "Frame file")->required();

    InferArgs infer;
    auto* in = app.add_subcommand("infer", "Encrypted inference with a per-stage timing table");
    in->add_option("--context", infer.context, "Private context file (generated when absent)");
    in->add_option("--model", infer.model, "Model JSON")->required();
    in->add_option("--images", infer.images, "Images JSON")->required();
    in->add_option("--index", infer.index, "Image index")->capture_default_str();
    in->add_option("--connect", infer.connect, "Run the layers on a service at host:port");

    ServeArgs serve;
    auto* sv = app.add_subcommand("serve", "Serve encrypted inference");
    sv->add_option("--context", serve.context, "Context file (its public part is used)")->required();
    sv->add_option("--model", serve.model, "Model JSON")->required();
    sv->add_option("--listen", serve.listen, "host:port")->capture_default_str();

    BenchArgs bench;
    auto* be = app.add_subcommand("bench", "Operation and MNIST benchmarks");
    be->add_option("--suite", bench.suite, "unary, binary or mnist")
        ->check(CLI::IsMember({"unary", "binary", "mnist"}))
        ->capture_default_str();
    be->add_option("--shapes", bench.shapes, "Comma-separated tensor sizes")->delimiter(',');
    be->add_option("--rounds", bench.rounds, "Rounds")->capture_default_str();
    be->add_option("--iterations", bench.iterations, "Iterations per round")->capture_default_str();
    be->add_option("--json", bench.json, "Report file (default bench-<suite>.json)");
    be->add_option("--model", bench.model, "Model JSON for the mnist suite");
    be->add_option("--images", bench.images, "Images JSON for the mnist suite");
    be->add_option("--index", bench.index, "Image index")->capture_default_str();

    FixtureArgs fixtures;
    auto* fx = app.add_subcommand("fixtures", "Regenerate the fixture model and images");
    fx->add_option("--out", fixtures.out, "Output directory")->capture_default_str();
    fx->add_option("--weights-seed", fixtures.seeds.weights)->capture_default_str();
    fx->add_option("--images-seed", fixtures.seeds.images)->capture_default_str();
    fx->add_option("--count", fixtures.seeds.image_count)->capture_default_str();

    try {
        app.parse(argc, argv);
    } catch (const CLI::CallForHelp& e) {
        return app.exit(e);
    } catch (const CLI::CallForAllHelp& e) {
        return app.exit(e);
    } catch (const CLI::ParseError& e) {
        std::fprintf(stderr, "error: InvalidParams: %s\n", e.what());
        return 2;
    }

    try {
        require(g.workers >= 1, ErrorCode::InvalidWorkerCount, "--workers must be at least 1");
        if (*kg) return cmd_keygen(g, keygen);
        if (*en) return cmd_encrypt(g, enc);
        if (*de) return cmd_decrypt(g, dec);
        if (*in) return cmd_infer(g, infer);
        if (*sv) return cmd_serve(g, serve);
        if (*be) return cmd_bench(g, bench);
        if (*fx) return cmd_fixtures(fixtures);
    } catch (const Error& e) {
        std::fflush(stdout);
        std::fprintf(stderr, "error: %s\n", e.what());
        return 1;
    } catch (const std::exception& e) {
        std::fflush(stdout);
        std::fprintf(stderr, "error: InvalidOperand: %s\n", e.what());
        return 1;
    }
    return 0;
}
