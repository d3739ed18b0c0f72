// SPDX-License-Identifier: Apache-2.0
#include <cmath>

#include "doctest.h"
#include "hets/backend.hpp"
#include "hets/trace.hpp"

using namespace hets;

namespace {

ErrorCode code_of(auto&& fn) {
    try {
        fn();
    } catch (const Error& e) {
        return e.code();
    }
    FAIL("expected an error");
    return ErrorCode::InvalidOperand;
}

const Context& shared_ctx() {
    static const Context ctx = [] {
        ContextOptions opts;
        opts.seed = 11;
        return Context::create("test-4096", opts);
    }();
    return ctx;
}

double max_err(const std::vector<double>& a, const std::vector<double>& b) {
    double m = 0;
    for (std::size_t i = 0; i < a.size(); ++i) {
        m = std::max(m, std::abs(a[i] - b[i]));
    }
    return m;
}

}  // namespace

TEST_CASE("backend kinds parse") {
    CHECK(parse_backend_kind("real") == BackendKind::Real);
    CHECK(parse_backend_kind("mock") == BackendKind::Mock);
    CHECK(backend_kind_name(BackendKind::Mock) == "mock");
    CHECK(code_of([] { (void)parse_backend_kind("gpu"); }) == ErrorCode::InvalidParams);
}

TEST_CASE("mock rotation and exact arithmetic") {
    Backend mock(Context::structural(profile_params("test-4096")), BackendKind::Mock);
    std::vector<double> v(mock.slot_count());
    for (std::size_t i = 0; i < v.size(); ++i) {
        v[i] = static_cast<double>(i + 1);
    }
    const auto r = mock.decrypt(mock.rotate(mock.encrypt(v), 2));
    CHECK(r[0] == 3);
    CHECK(r[1] == 4);
    CHECK(r[v.size() - 2] == 1);
    CHECK(r[v.size() - 1] == 2);
    const auto right = mock.decrypt(mock.rotate(mock.encrypt(v), -1));
    CHECK(right[0] == static_cast<double>(v.size()));
    CHECK(right[1] == 1);

    const std::vector<double> a{0.1, 0.2};
    const auto sq = mock.decrypt(mock.mul(mock.encrypt(a), mock.encrypt(a)));
    CHECK(sq[0] == 0.1 * 0.1);
}

TEST_CASE("mock and real fail at the same point") {
    Backend mock(Context::structural(profile_params("test-4096")), BackendKind::Mock);
    Backend real(shared_ctx(), BackendKind::Real, 1);
    const std::vector<double> v{1.1, 0.9};
    for (Backend* b : {&mock, &real}) {
        Cipher c = b->encrypt(v);
        c = b->mul(c, c);
        c = b->mul(c, c);
        CHECK(c.level() == 0);
        CHECK(code_of([&] { (void)b->mul(c, c); }) == ErrorCode::LevelExhausted);
        CHECK(code_of([&] { (void)b->mul_plain(c, v); }) == ErrorCode::LevelExhausted);
    }
}

TEST_CASE("operands from another backend are rejected") {
    Backend a(Context::structural(profile_params("test-4096")), BackendKind::Mock);
    Backend b(Context::structural(profile_params("test-4096")), BackendKind::Mock);
    const std::vector<double> v{1};
    const Cipher ca = a.encrypt(v);
    const Cipher cb = b.encrypt(v);
    CHECK(code_of([&] { (void)a.add(ca, cb); }) == ErrorCode::BackendMismatch);
    CHECK(code_of([&] { (void)b.decrypt(ca); }) == ErrorCode::BackendMismatch);
    CHECK(code_of([&] { (void)Backend(Context::structural(profile_params("test-4096")), BackendKind::Real); }) ==
          ErrorCode::MissingKey);
}

TEST_CASE("plain multiplication returns to the default scale") {
    for (auto kind : {BackendKind::Real, BackendKind::Mock}) {
        const Context ctx = kind == BackendKind::Real ? shared_ctx() : Context::structural(profile_params("test-4096"));
        Backend b(ctx, kind, 2);
        const std::vector<double> v{2, -3};
        const Cipher c = b.encrypt(v);
        const Cipher sq = b.mul(c, c);
        CHECK(sq.scale() != b.default_scale());
        const Cipher back = b.mul_plain(sq, v);
        CHECK(back.scale() == doctest::Approx(b.default_scale()).epsilon(1e-12));
        const auto d = b.decrypt(back);
        CHECK(d[0] == doctest::Approx(8).epsilon(1e-4));
        CHECK(d[1] == doctest::Approx(-27).epsilon(1e-4));
    }
}

TEST_CASE("metadata lockstep over random op sequences") {
    Backend real(shared_ctx(), BackendKind::Real, 3);
    ContextOptions opts;
    Backend mock(Context::structural(profile_params("test-4096"), opts), BackendKind::Mock);
    TraceRecorder real_trace, mock_trace;
    real.set_trace(real_trace.sink());
    mock.set_trace(mock_trace.sink());

    Prng rng(21);
    for (int seq = 0; seq < 12; ++seq) {
        std::vector<double> v(16);
        for (auto& x : v) {
            x = rng.uniform_real(-1, 1);
        }
        std::vector<Cipher> rs{real.encrypt(v), real.encrypt(v)};
        std::vector<Cipher> ms{mock.encrypt(v), mock.encrypt(v)};
        // values are only comparable while every scale on the path keeps precision
        std::vector<bool> precise{true, true};
        for (int step = 0; step < 8; ++step) {
            const int op = static_cast<int>(rng.uniform_below(8));
            const std::size_t i = rng.uniform_below(rs.size());
            const std::size_t j = rng.uniform_below(rs.size());
            const long long rot = static_cast<long long>(rng.uniform_below(40)) - 20;
            const int drop = static_cast<int>(rng.uniform_below(3));
            auto apply = [&](Backend& b, std::vector<Cipher>& pool) -> std::optional<Cipher> {
                try {
                    switch (op) {
                        case 0: return b.add(pool[i], pool[j]);
                        case 1: return b.sub(pool[i], pool[j]);
                        case 2: return b.mul(pool[i], pool[j]);
                        case 3: return b.mul_plain(pool[i], v);
                        case 4: return b.rotate(pool[i], rot);
                        case 5: return b.rescale(pool[i]);
                        case 6: return b.mod_drop(pool[i], drop);
                        default: return b.negate(pool[i]);
                    }
                } catch (const Error&) {
                    return std::nullopt;
                }
            };
            auto r = apply(real, rs);
            auto m = apply(mock, ms);
            REQUIRE(r.has_value() == m.has_value());
            if (r) {
                const bool binary = op <= 2;
                const bool ok = precise[i] && (!binary || precise[j]) && r->scale() > 0x1.0p20;
                if (ok) {
                    CHECK(max_err(real.decrypt(*r), mock.decrypt(*m)) < 1e-2);
                }
                rs.push_back(*r);
                ms.push_back(*m);
                precise.push_back(ok);
            }
        }
    }
    const auto rt = real_trace.entries();
    const auto mt = mock_trace.entries();
    REQUIRE(rt.size() == mt.size());
    std::size_t failures = 0;
    for (std::size_t k = 0; k < rt.size(); ++k) {
        CHECK(rt[k] == mt[k]);
        failures += rt[k].error.has_value() ? 1 : 0;
    }
    CHECK(failures > 0);  // the sequences do exercise error paths
}

TEST_CASE("trace tags follow the calling scope") {
    Backend mock(Context::structural(profile_params("test-4096")), BackendKind::Mock);
    TraceRecorder rec;
    mock.set_trace(rec.sink());
    const std::vector<double> v{1, 2};
    {
        ScopedTraceTag tag("block");
        (void)mock.rotate(mock.encrypt(v), 3);
    }
    (void)mock.encrypt(v);
    const auto tagged = rec.entries_with_tag("block");
    REQUIRE(tagged.size() == 2);
    CHECK(tagged[1].op == "rotate");
    CHECK(tagged[1].step == 3);
    CHECK(rec.entries().size() == 3);
}
