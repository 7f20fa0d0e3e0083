#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include "rmsolve/errors.hpp"
#include "rmsolve/sde.hpp"

#include <cmath>

using namespace rmsolve;
using Eigen::MatrixXd;
using Eigen::VectorXd;

namespace {

VectorXd v1(double a) { return VectorXd::Constant(1, a); }
MatrixXd m1(double a) { return MatrixXd::Constant(1, 1, a); }

struct Stats {
    double mean = 0, var = 0;
};
Stats terminal_stats(const PathBundle& b) {
    Stats s;
    const std::size_t r = b.records() - 1;
    for (std::size_t p = 0; p < b.particles; ++p) s.mean += b.position(p, r)[0];
    s.mean /= b.particles;
    for (std::size_t p = 0; p < b.particles; ++p) s.var += std::pow(b.position(p, r)[0] - s.mean, 2);
    s.var /= (b.particles - 1);
    return s;
}

} // namespace

TEST_CASE("deterministic drift reaches its ODE solution") {
    auto m = DiffusionModel::arithmetic_bm(v1(1.0), m1(0.0));
    std::vector<double> x0{0.0};
    for (std::size_t steps : {1, 7, 1024}) {
        TimeGrid g{0.0, 1.0, steps};
        for (auto scheme : {Scheme::automatic, Scheme::euler}) {
            SimulationOptions o;
            o.scheme = scheme;
            auto b = simulate(m, x0, g, 1, o);
            CHECK(std::abs(b.position(0, b.records() - 1)[0] - 1.0) < 1e-13);
            if (steps == 1024) CHECK(b.position(0, b.records() - 1)[0] == 1.0);
        }
    }
}

TEST_CASE("exact OU update agrees with refined Euler") {
    auto m = DiffusionModel::ou(1.0, 0.0, 1.0);
    const std::size_t n = 4000;
    std::vector<double> x0(n, 2.0);
    SimulationOptions o;
    o.checkpoints = 2;
    auto exact = simulate(m, x0, TimeGrid{0.0, 1.0, 400}, 11, o);
    o.scheme = Scheme::euler;
    auto euler = simulate(m, x0, TimeGrid{0.0, 1.0, 1 << 14}, 12, o);
    CHECK(exact.scheme == "exact-ou");
    const auto se = terminal_stats(exact), sf = terminal_stats(euler);
    const double target = 2.0 * std::exp(-1.0);
    const double sd = std::sqrt((1 - std::exp(-2.0)) / 2.0 / n);
    CHECK(std::abs(se.mean - target) < 3 * sd);
    CHECK(std::abs(se.mean - sf.mean) < 3 * std::sqrt(2.0) * sd);
    CHECK(std::abs(se.var - (1 - std::exp(-2.0)) / 2.0) < 0.05);
}

TEST_CASE("worker count does not change paths") {
    auto m = DiffusionModel::ou(0.7, 0.3, 0.9);
    std::vector<double> x0(333);
    for (std::size_t i = 0; i < x0.size(); ++i) x0[i] = 0.01 * i;
    auto g = FitnessFunction::polynomial({0.0, 0.2, -1.0});
    SimulationOptions o;
    o.fitness = &g;
    o.checkpoints = 9;
    o.threads = 1;
    auto a = simulate(m, x0, TimeGrid{0.0, 1.0, 200}, 5, o);
    o.threads = 8;
    auto b = simulate(m, x0, TimeGrid{0.0, 1.0, 200}, 5, o);
    CHECK(a.positions == b.positions);
    CHECK(a.log_weights == b.log_weights);
}

TEST_CASE("removing a particle leaves the others unchanged") {
    auto m = DiffusionModel::arithmetic_bm(v1(0.0), m1(1.0));
    std::vector<double> x0{0.0, 1.0, 2.0, 3.0};
    auto full = simulate(m, x0, TimeGrid{0.0, 1.0, 50}, 9);
    std::vector<double> fewer{0.0, 1.0, 3.0};
    SimulationOptions o;
    o.stream_keys = {0, 1, 3};
    auto part = simulate(m, fewer, TimeGrid{0.0, 1.0, 50}, 9, o);
    for (std::size_t r = 0; r < full.records(); ++r) {
        CHECK(part.position(2, r)[0] == full.position(3, r)[0]);
        CHECK(part.position(1, r)[0] == full.position(1, r)[0]);
    }
}

TEST_CASE("CIR full truncation") {
    auto det = DiffusionModel::cir(1.0, 0.0, 0.0);
    std::vector<double> one{1.0};
    auto b = simulate_cir(det, one, TimeGrid{0.0, 1.0, 1024}, 1);
    CHECK(b.position(0, b.records() - 1)[0] == 2.0);

    auto m = DiffusionModel::cir(1.0, -1.0, 1.0);
    const std::size_t n = 100000;
    std::vector<double> x0(n, 1.0);
    SimulationOptions o;
    o.checkpoints = 32;
    auto paths = simulate_cir(m, x0, TimeGrid{0.0, 1.0, 400}, 3, o);
    for (double v : paths.positions) REQUIRE(v >= 0.0);
    const auto s = terminal_stats(paths);
    CHECK(std::abs(s.mean - 1.0) < 3.0 * std::sqrt(s.var / n));
    CHECK(paths.scheme == "euler-full-truncation");
    CHECK_THROWS_AS(simulate_cir(DiffusionModel::cir(0.3, -1.0, 1.0), one, TimeGrid{}, 1), ConfigError);

    // a harsher regime that does hit zero still records nonnegative states
    auto rough = DiffusionModel::cir(0.5, -2.0, 1.0);
    auto pr = simulate_cir(rough, std::vector<double>(2000, 0.05), TimeGrid{0.0, 1.0, 100}, 4);
    for (double v : pr.positions) REQUIRE(v >= 0.0);
}

TEST_CASE("arithmetic BM weak moments") {
    MatrixXd s(1, 1);
    s << std::sqrt(2.0);
    auto m = DiffusionModel::arithmetic_bm(v1(0.4), s);
    const std::size_t n = 100000;
    std::vector<double> x0(n, 0.5);
    SimulationOptions o;
    o.checkpoints = 2;
    auto b = simulate(m, x0, TimeGrid{0.0, 1.5, 600}, 21, o);
    const auto st = terminal_stats(b);
    CHECK(std::abs(st.mean - (0.5 + 0.4 * 1.5)) < 4 * std::sqrt(3.0 / n));
    CHECK(std::abs(st.var - 3.0) < 4 * 3.0 * std::sqrt(2.0 / n));
}

TEST_CASE("log weights by the trapezoid rule") {
    auto still = DiffusionModel::arithmetic_bm(v1(0.0), m1(0.0));
    auto move = DiffusionModel::arithmetic_bm(v1(1.0), m1(0.0));
    std::vector<double> x0{0.0};

    auto c = FitnessFunction::constant(1, 0.8);
    auto bc = simulate(still, x0, TimeGrid{0.0, 1.0, 16}, 1);
    auto wc = accumulate_log_weight(bc, c);
    for (std::size_t r = 0; r < wc.records; ++r) {
        CHECK(wc.values[r] == 0.0);
        CHECK(std::abs(wc.unshifted(0, r, bc) - 0.8 * bc.times[r]) < 1e-15);
    }

    auto lin = FitnessFunction::linear(v1(1.0), 0.0, 0.0);
    auto bl = simulate(move, x0, TimeGrid{0.0, 1.0, 1024}, 1);
    auto wl = accumulate_log_weight(bl, lin);
    CHECK(std::abs(wl.unshifted(0, wl.records - 1, bl) - 0.5) < 1e-6);

    auto sn = FitnessFunction::custom(1, [](std::span<const double> x) { return std::sin(3 * x[0]); }, 1.0, true, {3.0});
    auto coarse = accumulate_log_weight(simulate(move, x0, TimeGrid{0.0, 1.0, 64}, 1), sn);
    auto mid = accumulate_log_weight(simulate(move, x0, TimeGrid{0.0, 1.0, 128}, 1), sn);
    auto fine = accumulate_log_weight(simulate(move, x0, TimeGrid{0.0, 1.0, 256}, 1), sn);
    const double e1 = coarse.values.back() - mid.values.back(), e2 = mid.values.back() - fine.values.back();
    CHECK(std::abs(e1 / e2 - 4.0) < 0.2);
}

TEST_CASE("inline weights match post-hoc accumulation and split additively") {
    MatrixXd s(1, 1);
    s << 1.3;
    auto m = DiffusionModel::arithmetic_bm(v1(0.2), s);
    auto g = FitnessFunction::polynomial({0.3, 0.5, -1.0});
    std::vector<double> x0{0.0, 0.5, -0.5};
    SimulationOptions o;
    o.fitness = &g;
    auto b = simulate(m, x0, TimeGrid{0.0, 1.0, 400}, 2, o);
    auto w = accumulate_log_weight(b, g);
    for (std::size_t i = 0; i < w.values.size(); ++i) CHECK(std::abs(w.values[i] - b.log_weights[i]) < 1e-13);
    for (std::size_t i = 0; i < b.particles; ++i)
        for (std::size_t r = 1; r < b.records(); ++r) CHECK(b.log_weight(i, r) <= b.log_weight(i, r - 1));

    // split at node 200: L(1) = L(1/2) + trapezoid over the second half
    PathBundle tail = b;
    tail.record_steps.assign(b.record_steps.begin() + 200, b.record_steps.end());
    for (auto& k : tail.record_steps) k -= 200;
    tail.times.assign(b.times.begin() + 200, b.times.end());
    tail.grid.t0 = 0.5;
    tail.positions.clear();
    for (std::size_t p = 0; p < b.particles; ++p)
        for (std::size_t r = 200; r < b.records(); ++r) tail.positions.push_back(b.position(p, r)[0]);
    auto wt = accumulate_log_weight(tail, g);
    for (std::size_t p = 0; p < b.particles; ++p)
        CHECK(std::abs(w.values[p * w.records + 400] - (w.values[p * w.records + 200] + wt.values[p * wt.records + 200])) < 1e-13);
}

TEST_CASE("non-finite states abort") {
    auto blow = DiffusionModel::custom(
        DomainSpec::full_space(1), 1, [](std::span<const double> x, std::span<double> o) { o[0] = x[0] * x[0] * x[0]; },
        [](std::span<const double>, std::span<double> o) { o[0] = 0.0; }, false);
    std::vector<double> x0{10.0};
    CHECK_THROWS_AS(simulate(blow, x0, TimeGrid{0.0, 1.0, 10}, 1), NumericError);
}

TEST_CASE("tilted drift with time dependence") {
    auto m = DiffusionModel::arithmetic_bm(v1(0.0), m1(0.0));
    TiltedDrift td{m, [](double t, std::span<const double>, std::span<double> o) { o[0] = 2.0 * t; }};
    std::vector<double> x0{0.0};
    auto b = simulate(td, x0, TimeGrid{0.0, 1.0, 1000}, 1);
    // Euler on x' = 2t gives sum 2 t_k dt = 1 - dt
    CHECK(std::abs(b.position(0, b.records() - 1)[0] - (1.0 - 1e-3)) < 1e-12);
}
