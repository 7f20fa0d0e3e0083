#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include "rmsolve/parallel.hpp"
#include "rmsolve/rng.hpp"

#include <cmath>
#include <vector>

using namespace rmsolve;

TEST_CASE("philox known-answer vectors") {
    // Random123 kat_vectors: philox4x32_10
    auto a = philox4x32({0, 0, 0, 0}, {0, 0});
    CHECK(a == PhiloxCounter{0x6627e8d5u, 0xe169c58du, 0xbc57ac4cu, 0x9b00dbd8u});
    auto b = philox4x32({0xffffffffu, 0xffffffffu, 0xffffffffu, 0xffffffffu}, {0xffffffffu, 0xffffffffu});
    CHECK(b == PhiloxCounter{0x408f276du, 0x41c83b0eu, 0xa20bc7c6u, 0x6d5451fdu});
    auto c = philox4x32({0x243f6a88u, 0x85a308d3u, 0x13198a2eu, 0x03707344u}, {0xa4093822u, 0x299f31d0u});
    CHECK(c == PhiloxCounter{0xd16cfe09u, 0x94fdccebu, 0x5001e420u, 0x24126ea1u});
}

TEST_CASE("stream draws are addressable and reproducible") {
    StreamRng r1(42, 7), r2(42, 7), r3(42, 8);
    CHECK(r1.normals(3, 0) == r2.normals(3, 0));
    CHECK(r1.normals(3, 0) != r3.normals(3, 0));
    CHECK(r1.normals(3, 0) != r1.normals(4, 0));
    for (std::uint32_t k = 0; k < 1000; ++k) {
        auto u = r1.uniforms(k, 0);
        CHECK(u[0] > 0.0);
        CHECK(u[0] < 1.0);
        CHECK(u[1] > 0.0);
        CHECK(u[1] < 1.0);
    }
}

TEST_CASE("normal moments") {
    StreamRng r(1, 0);
    const int n = 200000;
    double s = 0, s2 = 0, s4 = 0;
    for (int k = 0; k < n / 2; ++k) {
        for (double z : r.normals(k, 0)) {
            s += z;
            s2 += z * z;
            s4 += z * z * z * z;
        }
    }
    CHECK(std::abs(s / n) < 4.0 / std::sqrt(n));
    CHECK(std::abs(s2 / n - 1.0) < 4.0 * std::sqrt(2.0 / n));
    CHECK(std::abs(s4 / n - 3.0) < 4.0 * std::sqrt(96.0 / n));
}

TEST_CASE("stage seeds differ and are stable") {
    CHECK(derive_seed(1, "particles") == derive_seed(1, "particles"));
    CHECK(derive_seed(1, "particles") != derive_seed(1, "initial"));
    CHECK(derive_seed(1, "particles") != derive_seed(2, "particles"));
    CHECK(fnv1a("") == 0xcbf29ce484222325ull);
    CHECK(fnv1a("a") == 0xaf63dc4c8601ec8cull);
}

TEST_CASE("parallel_for covers every index once for any worker count") {
    for (int k : {1, 2, 3, 8}) {
        std::vector<int> hit(1001, 0);
        parallel_for(hit.size(), k, [&](std::size_t b, std::size_t e) {
            for (std::size_t i = b; i < e; ++i) hit[i] += 1;
        });
        for (int h : hit) CHECK(h == 1);
    }
}

TEST_CASE("pairwise and compensated sums") {
    std::vector<double> v(10000, 0.1);
    CHECK(std::abs(pairwise_sum(v) - 1000.0) < 1e-10);
    CompensatedSum c;
    c.add(1e16);
    c.add(1.0);
    c.add(-1e16);
    CHECK(c.value() == 1.0);
}
