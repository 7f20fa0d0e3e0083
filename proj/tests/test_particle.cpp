#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include "rmsolve/errors.hpp"
#include "rmsolve/particle.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

using namespace rmsolve;
using Eigen::MatrixXd;
using Eigen::VectorXd;

namespace {

VectorXd v1(double a) { return VectorXd::Constant(1, a); }
MatrixXd m1(double a) { return MatrixXd::Constant(1, 1, a); }

DiffusionModel bm2() { return DiffusionModel::arithmetic_bm(v1(0.0), m1(std::sqrt(2.0))); }
InitialLaw dirac0() { return InitialLaw::point_cloud({v1(0.0)}); }

} // namespace

TEST_CASE("single particle and zero fitness") {
    auto g0 = FitnessFunction::constant(1, 0.0);
    auto one = run_particles(bm2(), g0, dirac0(), 1, TimeGrid{0, 1, 100}, 3);
    CHECK(one.size() == 1);
    CHECK(mass_estimate(one, 1.0) == 1.0);
    auto e = run_particles(bm2(), g0, InitialLaw::gaussian(v1(0), m1(1)), 500, TimeGrid{0, 1, 100}, 3);
    for (std::size_t p = 0; p < e.size(); ++p)
        for (std::size_t r = 0; r < e.paths.records(); ++r) CHECK(e.paths.log_weight(p, r) == 0.0);
    CHECK(mass_estimate(e, 1.0) == 1.0);
    CHECK(mass_standard_error(e, 1.0) == 0.0);
    CHECK(e.paths.records() == 32);
    CHECK_THROWS_AS(mass_estimate(e, 0.123456), ConfigError);
}

TEST_CASE("normalized measure: constant fitness, t=0 and shift invariance") {
    auto lin = FitnessFunction::linear(v1(1.0), 0.0, 3.0);
    auto rho = InitialLaw::gaussian(v1(0.2), m1(0.5));
    auto c = run_particles(bm2(), FitnessFunction::constant(1, 2.5), rho, 1000, TimeGrid{0, 1, 200}, 9);
    auto mc = normalized_measure(c, 1.0);
    for (double m : mc.masses) CHECK(m == doctest::Approx(1e-3).epsilon(1e-13));

    auto a = run_particles(bm2(), lin, rho, 1000, TimeGrid{0, 1, 200}, 9);
    auto b = run_particles(bm2(), lin.plus_constant(5.0), rho, 1000, TimeGrid{0, 1, 200}, 9);
    auto m0 = normalized_measure(a, 0.0);
    for (double m : m0.masses) CHECK(m == doctest::Approx(1e-3).epsilon(1e-14));
    auto ma = normalized_measure(a, 1.0), mb = normalized_measure(b, 1.0);
    double worst = 0;
    for (std::size_t i = 0; i < ma.size(); ++i) {
        CHECK(ma.atoms[i] == mb.atoms[i]);
        worst = std::max(worst, std::abs(ma.masses[i] - mb.masses[i]));
    }
    CHECK(worst <= 1e-15);
    CHECK(ma.total() == doctest::Approx(1.0).epsilon(1e-14));
}

TEST_CASE("tilted measure and mass identities") {
    auto gm1 = FitnessFunction::constant(1, -1.0).with_g_max(0.0);
    auto e = run_particles(bm2(), gm1, dirac0(), 100, TimeGrid{0, 2, 400}, 1);
    for (double t : e.times()) {
        CHECK(tilted_measure(e, t).total() == doctest::Approx(std::exp(-t)).epsilon(1e-14));
    }
    CHECK(tilted_measure(e, 0.0).total() == doctest::Approx(1.0).epsilon(1e-15));

    auto lin = FitnessFunction::linear(v1(1.0), 0.0, 3.0);
    auto f = run_particles(bm2(), lin, InitialLaw::gaussian(v1(0), m1(1)), 2000, TimeGrid{0, 1, 200}, 4);
    const auto nm = normalized_measure(f, 1.0), tm = tilted_measure(f, 1.0);
    const double h = mass_estimate(f, 1.0);
    CHECK(std::abs(tm.total() - h) <= 1e-15);
    CHECK(h <= 1.0);
    for (std::size_t i = 0; i < nm.size(); ++i) CHECK(std::abs(nm.masses[i] * h - tm.masses[i]) <= 1e-15);
}

TEST_CASE("weighted mean against the Gaussian closed form") {
    auto lin = FitnessFunction::linear(v1(1.0), 0.0, 3.0);
    auto e = run_particles(bm2(), lin, dirac0(), 100000, TimeGrid{0, 1, 400}, 2024);
    const auto mo = weighted_moments(e, 1.0);
    CHECK(std::abs(mo.mean(0) - 1.0) <= 3 * mo.standard_error(0));
    const double h = mass_estimate(e, 1.0), se = mass_standard_error(e, 1.0);
    CHECK(std::abs(h - std::exp(1.0 / 3.0 - 3.0)) <= 3 * se);
}

TEST_CASE("estimator variance scales as 1/N") {
    auto lin = FitnessFunction::linear(v1(1.0), 0.0, 3.0);
    std::vector<double> lx, ly;
    for (std::size_t N : {1000, 10000, 100000}) {
        auto e = run_particles(bm2(), lin, dirac0(), N, TimeGrid{0, 1, 100}, 77);
        const double se = mass_standard_error(e, 1.0);
        lx.push_back(std::log(static_cast<double>(N)));
        ly.push_back(std::log(se * se));
    }
    const double mx = (lx[0] + lx[1] + lx[2]) / 3, my = (ly[0] + ly[1] + ly[2]) / 3;
    double sxy = 0, sxx = 0;
    for (int i = 0; i < 3; ++i) {
        sxy += (lx[i] - mx) * (ly[i] - my);
        sxx += (lx[i] - mx) * (lx[i] - mx);
    }
    CHECK(sxy / sxx == doctest::Approx(-1.0).epsilon(0.2));
}

TEST_CASE("exchangeability and thread independence") {
    auto lin = FitnessFunction::linear(v1(1.0), 0.0, 3.0);
    auto rho = InitialLaw::gaussian(v1(0), m1(1));
    const std::size_t N = 257;
    ParticleOptions o;
    auto a = run_particles(bm2(), lin, rho, N, TimeGrid{0, 1, 100}, 5, o);
    o.stream_keys.resize(N);
    std::iota(o.stream_keys.rbegin(), o.stream_keys.rend(), 0);
    o.threads = 3;
    auto b = run_particles(bm2(), lin, rho, N, TimeGrid{0, 1, 100}, 5, o);
    auto pairs = [](const EmpiricalMeasure& m) {
        std::vector<std::pair<double, double>> v;
        for (std::size_t i = 0; i < m.size(); ++i) v.emplace_back(m.atoms[i], m.masses[i]);
        std::sort(v.begin(), v.end());
        return v;
    };
    auto pa = pairs(normalized_measure(a, 1.0)), pb = pairs(normalized_measure(b, 1.0));
    for (std::size_t i = 0; i < N; ++i) {
        CHECK(pa[i].first == pb[i].first);
        CHECK(pa[i].second == doctest::Approx(pb[i].second).epsilon(1e-14));
    }
    ParticleOptions t1, t4;
    t4.threads = 4;
    auto c1 = run_particles(bm2(), lin, rho, 1000, TimeGrid{0, 1, 100}, 8, t1);
    auto c4 = run_particles(bm2(), lin, rho, 1000, TimeGrid{0, 1, 100}, 8, t4);
    CHECK(c1.paths.positions == c4.paths.positions);
    CHECK(c1.paths.log_weights == c4.paths.log_weights);
    CHECK(mass_estimate(c1, 1.0) == mass_estimate(c4, 1.0));
}

TEST_CASE("CIR ensemble stays on the half-line and log-weights decrease") {
    auto m = DiffusionModel::cir(1.0, -1.0, 1.0);
    auto g = FitnessFunction::linear(v1(-1.0), 0.0, 0.0);
    auto gd = GridDensity::tabulate(0, 6, 512, [](double x) { return x * std::exp(-2 * x); });
    gd.normalize();
    auto e = run_particles(m, g, InitialLaw::grid(gd), 2000, TimeGrid{0, 1, 200}, 12);
    for (std::size_t p = 0; p < e.size(); ++p)
        for (std::size_t r = 0; r < e.paths.records(); ++r) {
            CHECK(e.paths.position(p, r)[0] >= 0.0);
            if (r > 0) CHECK(e.paths.log_weight(p, r) <= e.paths.log_weight(p, r - 1));
        }
}

TEST_CASE("ensemble CSV") {
    auto e = run_particles(bm2(), FitnessFunction::constant(1, 0.0), dirac0(), 3, TimeGrid{0, 1, 10}, 1,
                           ParticleOptions{2});
    const auto csv = ensemble_csv(e);
    CHECK(csv.rfind("particle,t,x0,logw\n", 0) == 0);
    CHECK(std::count(csv.begin(), csv.end(), '\n') == 1 + 3 * 2);
}
