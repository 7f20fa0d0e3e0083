#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include "rmsolve/errors.hpp"
#include "rmsolve/pde.hpp"

#include <cmath>
#include <nlohmann/json.hpp>

using namespace rmsolve;
using Eigen::MatrixXd;
using Eigen::VectorXd;

namespace {

VectorXd v1(double a) { return VectorXd::Constant(1, a); }
MatrixXd m1(double a) { return MatrixXd::Constant(1, 1, a); }
DiffusionModel bm2() { return DiffusionModel::arithmetic_bm(v1(0.0), m1(std::sqrt(2.0))); }
InitialLaw normal(double m, double var) { return InitialLaw::gaussian(v1(m), m1(var)); }

double npdf(double x, double m, double var) {
    return std::exp(-0.5 * (x - m) * (x - m) / var) / std::sqrt(2.0 * M_PI * var);
}

double l1_to(const GridDensity& d, double m, double var) {
    std::vector<double> e(d.size());
    for (std::size_t i = 0; i < d.size(); ++i) e[i] = std::abs(d.values[i] - npdf(d.x[i], m, var));
    return trapezoid(d.x, e);
}

PdeScheme scheme(std::size_t cells, double dt, std::vector<double> times) {
    PdeScheme s;
    s.cells = cells;
    s.dt = dt;
    s.times = std::move(times);
    return s;
}

} // namespace

TEST_CASE("heat equation: zero fitness spreads the Gaussian") {
    const auto tr = solve_rm_pde(bm2(), FitnessFunction::constant(1, 0.0), normal(0.0, 0.25),
                                 scheme(2048, 1e-3, {0.5, 1.0}));
    CHECK(l1_to(tr.at(0.5), 0.0, 1.25) <= 5e-3);
    CHECK(l1_to(tr.at(1.0), 0.0, 2.25) <= 5e-3);
    CHECK(tr.mass_leak < 1e-9);
    CHECK(tr.negative_clips == 0);
    CHECK(tr.steps == 1000);
}

TEST_CASE("linear fitness: Gaussian with drifting mean") {
    const auto g = FitnessFunction::linear(v1(1.0), 0.0, 3.0);
    const auto tr = solve_rm_pde(bm2(), g, normal(0.0, 1.0), scheme(2048, 1e-3, {0.25, 0.5, 1.0}));
    for (double t : {0.25, 0.5, 1.0}) CHECK(l1_to(tr.at(t), t + t * t, 1.0 + 2.0 * t) <= 2e-2);
    CHECK(tr.max_normalization_error <= 1e-9);
    for (const auto& d : tr.densities) CHECK(std::abs(d.integral() - 1.0) <= 1e-9);

    const auto tr_mean = fitness_mean_trace(tr, g);
    for (std::size_t i = 0; i < tr.times.size(); ++i) {
        const double t = tr.times[i];
        CHECK(tr_mean[i] == doctest::Approx(t + t * t).epsilon(2e-2));
    }
}

TEST_CASE("fitness mean: constant fitness and harmonic confinement") {
    const auto c = FitnessFunction::constant(1, 0.7);
    const auto tr = solve_rm_pde(bm2(), c, normal(0.3, 0.5), scheme(512, 1e-2, {0.5, 1.0}));
    for (double m : fitness_mean_trace(tr, c)) CHECK(m == doctest::Approx(0.7).epsilon(1e-12));

    const auto harm = FitnessFunction::polynomial({0.0, 0.0, -1.0});
    const auto th = solve_rm_pde(bm2(), harm, normal(1.0, 1.0), scheme(1024, 5e-3, {1.0, 2.0}));
    for (double m : fitness_mean_trace(th, harm)) {
        CHECK(std::isfinite(m));
        CHECK(m < 0.0);
    }
}

TEST_CASE("spatial and temporal refinement: second order") {
    const auto g = FitnessFunction::linear(v1(1.0), 0.0, 3.0);
    std::vector<double> err;
    for (int k = 0; k < 3; ++k) {
        const std::size_t M = 128u << k;
        const double dt = 0.04 / std::pow(2.0, k);
        const auto tr = solve_rm_pde(bm2(), g, normal(0.0, 1.0), scheme(M, dt, {1.0}));
        err.push_back(l1_to(tr.at(1.0), 2.0, 3.0));
    }
    MESSAGE("errors " << err[0] << " " << err[1] << " " << err[2]);
    CHECK(err[0] / err[1] == doctest::Approx(4.0).epsilon(0.4));
    CHECK(err[1] / err[2] == doctest::Approx(4.0).epsilon(0.4));
}

TEST_CASE("weak-form residual shrinks under refinement") {
    const std::vector<double> centers{-3.0, -2.0, -1.0, 0.0, 1.0, 2.0, 3.0, 4.0};
    const auto tests = bump_test_functions(centers, 1.5);
    const auto g = FitnessFunction::linear(v1(1.0), 0.0, 3.0);
    auto worst = [&](std::size_t M, double dt) {
        const auto tr = solve_rm_pde(bm2(), g, normal(0.0, 1.0), scheme(M, dt, {1.0}), tests);
        double w = 0.0;
        for (double r : tr.weak_residuals) w = std::max(w, r);
        return w;
    };
    const double coarse = worst(256, 0.02);
    const double fine = worst(512, 0.01);
    MESSAGE("weak residuals " << coarse << " " << fine);
    CHECK(coarse / fine >= 3.0);
}

TEST_CASE("bump test functions: derivatives against finite differences") {
    const std::vector<double> c{0.5};
    const auto b = bump_test_functions(c, 1.2);
    const double h = 1e-4;
    for (double x : {-0.3, 0.1, 0.5, 1.2, 1.6}) {
        const double fd1 = (b[0].f(x + h) - b[0].f(x - h)) / (2 * h);
        const double fd2 = (b[0].f(x + h) - 2 * b[0].f(x) + b[0].f(x - h)) / (h * h);
        CHECK(b[0].df(x) == doctest::Approx(fd1).epsilon(1e-6));
        CHECK(b[0].d2f(x) == doctest::Approx(fd2).epsilon(1e-4));
    }
    CHECK(b[0].f(2.0) == 0.0);
    CHECK(b[0].f(-0.7) == 0.0);
}

TEST_CASE("half-line: zero-flux wall conserves mass and the mean ODE") {
    // dX = (1 - X)dt + 0.5 sqrt(X) dW; E X_t = 1 + (m0 - 1) e^{-t}
    const auto cir = DiffusionModel::cir(1.0, -1.0, 0.5);
    PdeScheme s = scheme(2048, 1e-3, {0.5, 1.0});
    s.lo = 0.0;
    s.hi = 8.0;
    const auto tr = solve_rm_pde(cir, FitnessFunction::constant(1, 0.0), normal(2.0, 0.09), s);
    CHECK(tr.mass_leak < 1e-10);
    for (std::size_t i = 0; i < tr.times.size(); ++i) {
        const auto& d = tr.densities[i];
        CHECK(d.x.front() == 0.0);
        for (double v : d.values) CHECK(v >= 0.0);
        CHECK(d.mean() == doctest::Approx(1.0 + std::exp(-tr.times[i])).epsilon(2e-3));
    }
    s.lo = -1.0;
    CHECK_THROWS_AS(solve_rm_pde(cir, FitnessFunction::constant(1, 0.0), normal(2.0, 0.09), s), ConfigError);
}

TEST_CASE("boundary leak and configuration errors") {
    PdeScheme s = scheme(256, 1e-2, {1.0});
    s.lo = -2.0;
    s.hi = 2.0;
    try {
        solve_rm_pde(bm2(), FitnessFunction::constant(1, 0.0), normal(0.0, 1.0), s);
        FAIL("expected leak failure");
    } catch (const NumericError& e) {
        CHECK(std::string(e.what()).find("leak") != std::string::npos);
    }
    PdeScheme off = scheme(256, 0.1, {0.25, 1.0});
    CHECK_THROWS_AS(solve_rm_pde(bm2(), FitnessFunction::constant(1, 0.0), normal(0.0, 1.0), off), ConfigError);
    CHECK_THROWS_AS(solve_rm_pde(bm2(), FitnessFunction::constant(1, 0.0), normal(0.0, 1.0), scheme(4, 0.1, {1.0})),
                    ConfigError);
}

TEST_CASE("trajectory output: csv and summary") {
    const auto tr = solve_rm_pde(bm2(), FitnessFunction::constant(1, 0.0), normal(0.0, 1.0), scheme(64, 0.1, {0.0, 1.0}));
    const auto csv = tr.to_csv();
    CHECK(csv.rfind("t,x,u\n", 0) == 0);
    CHECK(std::count(csv.begin(), csv.end(), '\n') == 1 + 2 * 66);
    const auto j = nlohmann::json::parse(tr.summary_json());
    CHECK(j["steps"].get<std::size_t>() == 10);
    CHECK(j.contains("mass_leak"));
    CHECK(j.contains("runtime_seconds"));
}
