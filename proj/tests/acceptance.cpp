// SPDX-License-Identifier: Apache-2.0
// Acceptance run: one PASS/FAIL line per criterion, exit status 1 if any fails.

#include <bit>
#include <algorithm>
#include <chrono>
#include <cstdlib>
#include <cstdio>
#include <filesystem>
#include <functional>
#include <numeric>
#include <sstream>

#include "diff_harness.hpp"
#include "hets/bench.hpp"
#include "hets/service.hpp"
#include "oracles.hpp"

using namespace hets;
using difftest::uniform;
namespace fs = std::filesystem;

namespace {

const fs::path kFixtures = HETS_FIXTURE_DIR;

struct Verdict {
    std::vector<std::string> failures;
    std::ostringstream detail;

    bool pass() const { return failures.empty(); }
    void check(bool ok, const std::string& what) {
        if (!ok) {
            failures.push_back(what);
        }
    }
    std::string text() const {
        std::string out = detail.str();
        for (const auto& f : failures) {
            out += (out.empty() ? "" : " | ") + f;
        }
        return out;
    }
};

// Entries whose innermost tag component equals `leaf` (layer tags prefix it).
std::vector<TraceEntry> tagged(const TraceRecorder& rec, const std::string& leaf) {
    std::vector<TraceEntry> out;
    for (const auto& e : rec.entries()) {
        const auto slash = e.tag.rfind('/');
        if ((slash == std::string::npos ? e.tag : e.tag.substr(slash + 1)) == leaf) {
            out.push_back(e);
        }
    }
    return out;
}

PlainTensor vec(std::vector<double> v) { return PlainTensor::vector(std::move(v)); }

const Model& fixture_model() {
    static const Model m = load_model(kFixtures / "mnist_cnn.json");
    return m;
}

const std::vector<PlainTensor>& fixture_images() {
    static const auto imgs = load_images(kFixtures / "mnist_images.json");
    return imgs;
}

const Context& mnist_context() {
    static const Context ctx = [] {
        ContextOptions opts;
        opts.seed = 2024;
        opts.workload_steps = fixture_model().rotation_steps();
        return Context::create("mnist-8192", opts);
    }();
    return ctx;
}

std::string num(double v) {
    char buf[32];
    std::snprintf(buf, sizeof(buf), "%.3g", v);
    return buf;
}

// ---- 1 ----------------------------------------------------------------------

void oracle_equivalence(Verdict& v) {
    ContextOptions opts;
    opts.seed = 101;
    difftest::BackendPair pair(Context::create("test-4096", opts), 102);
    Prng rng(103);
    const std::size_t slots = pair.real->slot_count();
    constexpr int kTrials = 50;
    constexpr double kElementwise = 1e-3;
    constexpr double kReduction = 1e-2;

    using Op = std::function<EncryptedVector(Backend&)>;
    struct Case {
        std::string name;
        double eps;
        std::function<Op()> make;  // draws fresh random inputs
    };
    auto len = [&] { return 1 + rng.uniform_below(slots / 2); };
    const std::vector<Case> cases = {
        {"negate", kElementwise, [&]() -> Op {
             const auto x = uniform(rng, len(), -1, 1);
             return [x](Backend& b) { return negate(b, encrypt_vector(b, vec(x))); };
         }},
        {"square", kElementwise, [&]() -> Op {
             const auto x = uniform(rng, len(), -1, 1);
             return [x](Backend& b) { return square(b, encrypt_vector(b, vec(x))); };
         }},
        {"power", kElementwise, [&]() -> Op {
             const auto x = uniform(rng, len(), -1, 1);
             const unsigned p = 1 + static_cast<unsigned>(rng.uniform_below(4));
             return [x, p](Backend& b) { return power(b, encrypt_vector(b, vec(x)), p); };
         }},
        {"add", kElementwise, [&]() -> Op {
             const std::size_t n = len();
             const auto x = uniform(rng, n, -1, 1), y = uniform(rng, n, -1, 1);
             return [x, y](Backend& b) { return add(b, encrypt_vector(b, vec(x)), encrypt_vector(b, vec(y))); };
         }},
        {"sub", kElementwise, [&]() -> Op {
             const std::size_t n = len();
             const auto x = uniform(rng, n, -1, 1), y = uniform(rng, n, -1, 1);
             return [x, y](Backend& b) { return sub(b, encrypt_vector(b, vec(x)), encrypt_vector(b, vec(y))); };
         }},
        {"mul", kElementwise, [&]() -> Op {
             const std::size_t n = len();
             const auto x = uniform(rng, n, -1, 1), y = uniform(rng, n, -1, 1);
             return [x, y](Backend& b) { return mul(b, encrypt_vector(b, vec(x)), encrypt_vector(b, vec(y))); };
         }},
        {"add_plain", kElementwise, [&]() -> Op {
             const std::size_t n = len();
             const auto x = uniform(rng, n, -1, 1), y = uniform(rng, n, -1, 1);
             return [x, y](Backend& b) { return add_plain(b, encrypt_vector(b, vec(x)), vec(y)); };
         }},
        {"sub_plain", kElementwise, [&]() -> Op {
             const std::size_t n = len();
             const auto x = uniform(rng, n, -1, 1), y = uniform(rng, n, -1, 1);
             return [x, y](Backend& b) { return sub_plain(b, encrypt_vector(b, vec(x)), vec(y)); };
         }},
        {"mul_plain", kElementwise, [&]() -> Op {
             const std::size_t n = len();
             const auto x = uniform(rng, n, -1, 1), y = uniform(rng, n, -1, 1);
             return [x, y](Backend& b) { return mul_plain(b, encrypt_vector(b, vec(x)), vec(y)); };
         }},
        {"polyval", kReduction, [&]() -> Op {
             const auto x = uniform(rng, len(), -1, 1);
             // degree 2 is the deepest polynomial the two-level test chain holds
             const auto c = uniform(rng, 1 + rng.uniform_below(3), -1, 1);
             return [x, c](Backend& b) { return polyval(b, encrypt_vector(b, vec(x)), c); };
         }},
        {"dot", kReduction, [&]() -> Op {
             const std::size_t n = 1 + rng.uniform_below(256);
             const auto x = uniform(rng, n, -1, 1), y = uniform(rng, n, -1, 1);
             return [x, y](Backend& b) { return dot(b, encrypt_vector(b, vec(x)), encrypt_vector(b, vec(y))); };
         }},
        {"dot_plain", kReduction, [&]() -> Op {
             const std::size_t n = 1 + rng.uniform_below(256);
             const auto x = uniform(rng, n, -1, 1), y = uniform(rng, n, -1, 1);
             return [x, y](Backend& b) { return dot_plain(b, encrypt_vector(b, vec(x)), vec(y)); };
         }},
        {"sum", kReduction, [&]() -> Op {
             const auto x = uniform(rng, 1 + rng.uniform_below(256), -1, 1);
             return [x](Backend& b) { return sum(b, encrypt_vector(b, vec(x))); };
         }},
        {"replicate", kReduction, [&]() -> Op {
             const auto x = uniform(rng, len(), -1, 1);
             return [x](Backend& b) { return replicate(b, encrypt_vector(b, vec(x))); };
         }},
        {"dot_plain_matrix", kReduction, [&]() -> Op {
             const std::size_t n = 1 + rng.uniform_below(64), m = 1 + rng.uniform_below(64);
             const auto x = uniform(rng, n, -1, 1), w = uniform(rng, n * m, -1, 1);
             return [x, w, n, m](Backend& b) {
                 return dot_plain_matrix(b, encrypt_vector(b, vec(x), true), PlainTensor::matrix(w, n, m));
             };
         }},
        {"conv2d_im2col", kReduction, [&]() -> Op {
             const std::size_t k = 2 + rng.uniform_below(2), ch = 1 + rng.uniform_below(4);
             const auto img = uniform(rng, 64, 0, 1);
             std::vector<PlainTensor> kernels;
             for (std::size_t c = 0; c < ch; ++c) {
                 kernels.push_back(PlainTensor::matrix(uniform(rng, k * k, -1, 1), k, k));
             }
             const auto bias = uniform(rng, ch, -0.5, 0.5);
             return [img, kernels, bias, k](Backend& b) {
                 return conv2d_im2col(b, encrypt_windows(b, im2col_encode(PlainTensor::matrix(img, 8, 8), k, k, 1)),
                                      kernels, bias);
             };
         }},
    };
    for (const auto& c : cases) {
        double worst = 0;
        bool meta = true;
        try {
            for (int t = 0; t < kTrials; ++t) {
                const auto out = difftest::run(pair, c.make());
                worst = std::max(worst, out.max_error);
                meta = meta && out.metadata_equal;
            }
        } catch (const Error& e) {
            v.check(false, c.name + ": " + e.what());
            continue;
        }
        v.check(worst <= c.eps, c.name + " error " + num(worst));
        v.check(meta, c.name + " metadata differs");
    }
    v.detail << cases.size() << " ops x " << kTrials << " trials within tolerance";
}

// ---- 2 ----------------------------------------------------------------------

void depth_budget(Verdict& v) {
    const Model& m = fixture_model();
    ContextOptions opts;
    opts.workload_steps = m.rotation_steps();
    const SchemeParams full = profile_params("mnist-8192");
    Backend b(Context::structural(full, opts), BackendKind::Mock);
    int consumed = 0;
    std::vector<int> trace;
    const auto in = prepare_input(b, m, fixture_images()[0]);
    encrypted_forward(b, m, in, [&](const LayerEvent& e) {
        consumed += e.level_in - e.level_out;
        trace.push_back(e.level_in - e.level_out);
    });
    v.check(full.chain_length() == 8, "mnist-8192 chain has " + std::to_string(full.chain_length()) + " primes");
    v.check(consumed == 6, "levels consumed " + std::to_string(consumed));

    SchemeParams shorter = make_params("mnist-7", 8192, std::vector<int>{31, 25, 25, 25, 25, 25, 25}, full.scale);
    Backend s(Context::structural(shorter, opts), BackendKind::Mock);
    std::string failed_at;
    std::vector<std::string> done;
    try {
        encrypted_forward(s, m, prepare_input(s, m, fixture_images()[0]),
                          [&](const LayerEvent& e) { done.push_back(e.stage); });
        failed_at = "(completed)";
    } catch (const Error& e) {
        failed_at = e.code() == ErrorCode::LevelExhausted ? stage_names(m)[done.size()] : std::string(e.what());
    }
    v.check(failed_at == "FC2", "7-prime chain stopped at " + failed_at);
    v.detail << "per-layer levels";
    for (int d : trace) {
        v.detail << " " << d;
    }
    v.detail << " = " << consumed << "; 7-prime chain: LevelExhausted at " << failed_at;
}

// ---- 3 ----------------------------------------------------------------------

void rotation_complexity(Verdict& v) {
    const Model& m = fixture_model();
    ContextOptions opts;
    opts.workload_steps = m.rotation_steps();
    Backend b(Context::structural(profile_params("mnist-8192"), opts), BackendKind::Mock);
    TraceRecorder rec;
    b.set_trace(rec.sink());
    encrypted_forward(b, m, prepare_input(b, m, fixture_images()[0]));
    b.set_trace({});

    const auto& conv = std::get<Conv2dLayer>(m.layers[0]);
    const int rounds = std::bit_width(conv.kernel_h * conv.kernel_w - 1);  // ceil(log2 49)
    for (std::size_t k = 0; k < conv.channels; ++k) {
        const std::string tag = "conv.ch" + std::to_string(k);
        std::size_t products = 0, rotations = 0, adds = 0;
        for (const auto& e : tagged(rec, tag + ".product")) {
            products += e.op.rfind("mul_plain", 0) == 0;
        }
        for (const auto& e : tagged(rec, tag + ".fold")) {
            rotations += e.op == "rotate";
            adds += e.op == "add";
        }
        std::size_t mask_products = 0;
        for (const auto& e : tagged(rec, tag + ".mask")) {
            mask_products += e.op.rfind("mul_plain", 0) == 0;
        }
        v.check(products == 1, tag + " products before masking " + std::to_string(products));
        v.check(rotations == static_cast<std::size_t>(rounds) && adds == rotations,
                tag + " rotate-add rounds " + std::to_string(rotations));
        v.check(mask_products == 1, tag + " mask products " + std::to_string(mask_products));
    }
    std::size_t left = 0, other = 0;
    for (const auto& e : tagged(rec, "dot_plain_matrix")) {
        if (e.op == "rotate") {
            (e.step > 0 ? left : other) += 1;
        }
    }
    v.check(left > 0 && other == 0, "dot_plain_matrix rotations: " + std::to_string(other) + " not left");
    v.detail << conv.channels << " channels x (1 product, " << rounds << " rotate-add rounds); dot_plain_matrix "
             << left << " left rotations, " << other << " others";
}

// ---- 4 ----------------------------------------------------------------------

void non_power_of_two(Verdict& v) {
    ContextOptions opts;
    opts.seed = 401;
    Backend b(Context::create("test-4096", opts), BackendKind::Real, 402);
    Prng rng(403);
    double worst = 0;
    for (int t = 0; t < 100; ++t) {
        std::size_t n = 0;
        do {
            n = 3 + rng.uniform_below(62);
        } while (std::has_single_bit(n));
        const std::size_t m = 1 + rng.uniform_below(64);
        const auto x = uniform(rng, n, -1, 1), w = uniform(rng, n * m, -1, 1);
        const auto out = dot_plain_matrix(b, encrypt_vector(b, vec(x), true), PlainTensor::matrix(w, n, m));
        worst = std::max(worst, oracle::max_abs_diff(decrypt_vector(b, out).data, oracle::vec_mat(x, w, m)));
    }
    v.check(worst <= 1e-2, "single dot error " + num(worst));

    // chains of two dots with sizes drawn so that some hit the margin
    std::size_t successes = 0, refusals = 0, mismatched = 0;
    double chain_worst = 0;
    const std::size_t slots = b.slot_count();
    for (int t = 0; t < 40; ++t) {
        std::vector<std::size_t> dims{2 + rng.uniform_below(600)};
        dims.push_back(1 + rng.uniform_below(1400));
        dims.push_back(1 + rng.uniform_below(1400));
        auto x = uniform(rng, dims[0], -1, 1);
        EncryptedVector ev = encrypt_vector(b, vec(x), true);
        for (std::size_t step = 0; step + 1 < dims.size(); ++step) {
            const std::size_t n = dims[step], m = dims[step + 1];
            const auto w = uniform(rng, n * m, -1.0 / std::sqrt(double(n)), 1.0 / std::sqrt(double(n)));
            // margin rule predicted from the metadata alone
            const bool fits = ev.valid_span >= n - 1 + m && m <= slots;
            try {
                ev = dot_plain_matrix(b, ev, PlainTensor::matrix(w, n, m));
                x = oracle::vec_mat(x, w, m);
                ++successes;
                mismatched += !fits;
                const auto all = b.decrypt(ev.ct);
                for (std::size_t r = 0; r < ev.replicas; ++r) {
                    for (std::size_t i = 0; i < m; ++i) {
                        chain_worst = std::max(chain_worst, std::abs(all[r * m + i] - x[i]));
                    }
                }
            } catch (const Error& e) {
                const bool margin = e.code() == ErrorCode::ReplicationExhausted;
                refusals += margin;
                mismatched += fits || !margin;
                break;
            }
        }
    }
    v.check(chain_worst <= 1e-2, "chained dot error " + num(chain_worst));
    v.check(mismatched == 0, std::to_string(mismatched) + " chain steps disagree with the margin rule");
    v.check(refusals > 0 && successes > 0, "chains did not exercise both outcomes");
    v.detail << "100 shapes max error " << num(worst) << "; chains: " << successes << " steps correct (max error "
             << num(chain_worst) << "), " << refusals << " ReplicationExhausted as predicted";
}

// ---- 5 ----------------------------------------------------------------------

void inference_parity(Verdict& v) {
    Backend b(mnist_context(), BackendKind::Real, 501);
    std::size_t agree = 0;
    double worst = 0;
    const auto t0 = std::chrono::steady_clock::now();
    for (const auto& img : fixture_images()) {
        const auto got = decrypt_vector(b, encrypted_forward(b, fixture_model(), prepare_input(b, fixture_model(), img)));
        const auto want = plain_forward(fixture_model(), img);
        agree += argmax(got) == argmax(want);
        worst = std::max(worst, oracle::max_abs_diff(got.data, want.data));
    }
    const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    const std::size_t n = fixture_images().size();
    v.check(n == 20, "fixture count " + std::to_string(n));
    v.check(agree >= 19, "argmax agreement " + std::to_string(agree) + "/" + std::to_string(n));
    v.check(worst < 0.5, "max logit error " + num(worst));
    v.detail << "argmax " << agree << "/" << n << ", max logit error " << num(worst) << ", "
             << num(secs / static_cast<double>(n)) << " s per image";
}

// ---- 6 ----------------------------------------------------------------------

void communication_size(Verdict& v) {
    Backend b(mnist_context(), BackendKind::Real, 601);
    const auto input = prepare_input(b, fixture_model(), fixture_images()[0]);
    const std::size_t size = wire::serialize_ciphertext(b.scheme(), input.ct.real()).size();
    const double bound = 2.0 * 8192 * 206 / 8;  // the stated lower bound
    std::size_t packed_bits = 0;
    for (int i = 0; i <= b.top_level(); ++i) {
        packed_bits += static_cast<std::size_t>(std::bit_width(b.scheme().chain_prime(i)));
    }
    const double own = 2.0 * 8192 * static_cast<double>(packed_bits) / 8;
    v.check(size >= bound && size <= 1.1 * bound,
            "fresh ciphertext " + std::to_string(size) + " bytes outside [" + num(bound) + ", " + num(1.1 * bound) +
                "]");

    InferenceService service(mnist_context().make_public(), fixture_model());
    service.start();
    const auto res = client_infer(b, fixture_model(), fixture_images()[0], "127.0.0.1", service.port());
    service.stop();
    const std::size_t total = res.bytes_sent + res.bytes_received;
    v.check(total < 1500000, "loopback total " + std::to_string(total) + " bytes");
    v.detail << "fresh ciphertext " << size << " bytes (" << packed_bits << "-bit modulus, own packing bound "
             << static_cast<std::size_t>(own) << "); loopback " << res.bytes_sent << " sent + " << res.bytes_received
             << " received = " << total << " bytes (published figure 427 KB)";
}

// ---- 7 ----------------------------------------------------------------------

void scheme_properties(Verdict& v) {
    ContextOptions opts;
    opts.seed = 701;
    const Context ctx = Context::create("test-4096", opts);
    const Scheme& s = *ctx.scheme();
    Prng rng(702);
    double enc_err = 0, crypt_err = 0;
    for (int t = 0; t < 100; ++t) {
        const auto x = uniform(rng, s.slot_count(), -1, 1);
        const Plaintext pt = s.encode(x, s.top_level(), s.params().scale);
        enc_err = std::max(enc_err, oracle::max_abs_diff(s.decode(pt), x));
        const Ciphertext ct = s.encrypt(pt, ctx.public_key(), rng);
        crypt_err = std::max(crypt_err, oracle::max_abs_diff(s.decode(s.decrypt(ct, ctx.secret_key())), x));
    }
    v.check(enc_err < 1e-6, "encode/decode error " + num(enc_err));
    v.check(crypt_err < 1e-4, "encrypt/decrypt error " + num(crypt_err));

    std::size_t ring_mismatch = 0;
    for (std::size_t n : {4, 8, 16, 32, 64}) {
        RingParams rp{n, {}};
        for (int bits : {20, 45, 60}) {
            rp.primes.push_back(next_ntt_prime(n, uint64_t{1} << (bits - 1), rp.primes));
        }
        const auto ring = std::make_shared<const RingContext>(rp);
        std::vector<std::size_t> ids(rp.primes.size());
        std::iota(ids.begin(), ids.end(), 0);
        for (int t = 0; t < 10; ++t) {
            const RingPoly a = sample_poly(ring, ids, SampleKind::Uniform, rng);
            const RingPoly c = sample_poly(ring, ids, SampleKind::Uniform, rng);
            const RingPoly prod = ntt_transform(poly_mul(a, c), NttDirection::Inverse);
            for (std::size_t k = 0; k < ids.size(); ++k) {
                const std::vector<uint64_t> ra(a.row(k).begin(), a.row(k).end());
                const std::vector<uint64_t> rc(c.row(k).begin(), c.row(k).end());
                const std::vector<uint64_t> got(prod.row(k).begin(), prod.row(k).end());
                ring_mismatch += got != oracle::negacyclic_schoolbook(ra, rc, rp.primes[k]);
            }
        }
    }
    v.check(ring_mismatch == 0, std::to_string(ring_mismatch) + " ring products differ from schoolbook");

    std::size_t roundtrips = 0, wire_mismatch = 0;
    for (const std::string name : {"test-4096", "mnist-8192"}) {
        const Scheme sc(profile_params(name));
        for (int t = 0; t < 100; ++t) {
            Ciphertext ct;
            ct.level = static_cast<int>(rng.uniform_below(static_cast<uint64_t>(sc.top_level()) + 1));
            ct.scale = rng.uniform_real(0x1.0p10, 0x1.0p50);
            for (std::size_t p = 0; p < 2 + rng.uniform_below(2); ++p) {
                RingPoly poly(sc.ring(), sc.level_primes(ct.level), Domain::Evaluation);
                for (std::size_t k = 0; k < poly.prime_count(); ++k) {
                    for (auto& x : poly.row(k)) {
                        x = rng.uniform_below(poly.modulus(k).value());
                    }
                }
                ct.parts.push_back(std::move(poly));
            }
            wire_mismatch += !(wire::deserialize_ciphertext(sc, wire::serialize_ciphertext(sc, ct)) == ct);
            ++roundtrips;
        }
    }
    v.check(wire_mismatch == 0, std::to_string(wire_mismatch) + " serialization round trips differ");
    v.detail << "encode " << num(enc_err) << ", encrypt " << num(crypt_err) << " over 100 trials; ring products "
             << "exact at N<=64; " << roundtrips << " ciphertext round trips identical";
}

// ---- 8 ----------------------------------------------------------------------

void determinism(Verdict& v) {
    auto run = [](const std::string& suite, const std::string& profile, std::size_t workers) {
        BenchOptions o;
        o.suite = suite;
        o.profile = profile;
        o.shapes = suite == "mnist" ? std::vector<std::size_t>{} : std::vector<std::size_t>{256, 2048};
        o.rounds = 1;
        o.iterations = 1;
        o.workers = workers;
        o.seed = 801;
        return run_bench(o);
    };
    for (const std::string suite : {"unary", "binary"}) {
        const auto one = run(suite, "test-4096", 1), eight = run(suite, "test-4096", 8);
        v.check(one.digest == eight.digest, suite + " bench digests differ");
    }
    const auto one = run("mnist", "mnist-8192", 1), eight = run("mnist", "mnist-8192", 8);
    v.check(one.digest == eight.digest, "mnist digests differ");
    v.check(one.logits == eight.logits, "mnist logits differ");
    v.detail << "unary, binary and mnist runs at --workers 1 and 8 agree bit for bit (mnist digest " << one.digest
             << ")";
}

}  // namespace

int main(int argc, char** argv) {
    // optional arguments select criteria by number; the default runs all of them
    std::vector<int> only;
    for (int i = 1; i < argc; ++i) {
        only.push_back(std::atoi(argv[i]));
    }
    struct Criterion {
        const char* name;
        void (*run)(Verdict&);
    };
    const Criterion criteria[] = {
        {"oracle equivalence", oracle_equivalence},   {"depth budget", depth_budget},
        {"rotation complexity", rotation_complexity}, {"non-power-of-two dot product", non_power_of_two},
        {"encrypted inference parity", inference_parity}, {"communication size", communication_size},
        {"scheme properties", scheme_properties},     {"determinism", determinism},
    };
    int failures = 0;
    int index = 1;
    for (const auto& c : criteria) {
        if (!only.empty() && std::find(only.begin(), only.end(), index) == only.end()) {
            ++index;
            continue;
        }
        Verdict v;
        const auto t0 = std::chrono::steady_clock::now();
        try {
            c.run(v);
        } catch (const std::exception& e) {
            v.check(false, std::string("exception: ") + e.what());
        }
        const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
        std::printf("%s %d %s (%.1f s): %s\n", v.pass() ? "PASS" : "FAIL", index++, c.name, secs, v.text().c_str());
        std::fflush(stdout);
        failures += !v.pass();
    }
    return failures == 0 ? 0 : 1;
}
