#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include "rmsolve/errors.hpp"
#include "rmsolve/rng.hpp"
#include "rmsolve/spectral.hpp"

#include <boost/math/special_functions/hypergeometric_1F1.hpp>

#include <cmath>
#include <numbers>

using namespace rmsolve;

TEST_CASE("kummer_M identities") {
    CHECK(kummer_M(0.7, 1.3, 0.0) == 1.0);
    CHECK(kummer_M(1, 2, 1) == doctest::Approx(std::exp(1.0) - 1).epsilon(1e-12));
    CHECK(kummer_M(3.5, 3.5, 2) == doctest::Approx(std::exp(2.0)).epsilon(1e-12));
    CHECK(kummer_M(3.5, 3.5, -20) == doctest::Approx(std::exp(-20.0)).epsilon(1e-12));
    CHECK(kummer_M(0.0, 2.0, 40.0) == 1.0);
    // Laguerre: M(-2, 1, z) = 1 - 2z + z^2/2
    CHECK(kummer_M(-2, 1, 3) == doctest::Approx(1 - 6 + 4.5).epsilon(1e-14));
    CHECK_THROWS_AS(kummer_M(1, -2, 1), ConfigError);
    CHECK_THROWS_AS(kummer_M(1, 2, 600), ConfigError);
}

TEST_CASE("kummer_M agrees with Boost and satisfies the contiguous recurrence") {
    StreamRng rng(42, 0);
    for (int i = 0; i < 300; ++i) {
        const auto u = rng.uniforms(i, 0);
        const double a = -0.9 + 4.0 * u[0], b = 0.5 + 4.0 * u[1], z = -50.0 + 100.0 * u[2];
        const double m = kummer_M(a, b, z);
        const double ref = boost::math::hypergeometric_1F1(a, b, z);
        CHECK(std::abs(m - ref) <= 1e-10 * std::max(1.0, std::abs(ref)));
        const double rec = kummer_M(a - 1, b, z) + z / b * kummer_M(a, b + 1, z);
        CHECK(std::abs(m - rec) <= 1e-10 * std::max({1.0, std::abs(m), std::abs(kummer_M(a - 1, b, z))}));
    }
}

TEST_CASE("CIR eigenpair at lambda0") {
    const double a = 1, b = -1, s = 1;
    const double l0 = cir_lambda0(a, b, s);
    auto e = cir_eigenpair(a, b, s, l0);
    const auto p = kummer_params(a, b, s, l0);
    CHECK(p.alpha == doctest::Approx(0.0));
    auto model = DiffusionModel::cir(a, b, s);
    auto g = FitnessFunction::linear(Eigen::VectorXd::Constant(1, -1.0), 0.0, 0.0);
    CHECK(eigenpair_residual(model, g, e, probe_points(1, 64, 0.1, 5.0)) <= 1e-6);
    for (double x = 0.05; x <= 10.0; x += 0.05) {
        CHECK(e.phi(std::span<const double>(&x, 1)) > 0);
        CHECK(e.phi(std::span<const double>(&x, 1)) ==
              doctest::Approx(std::exp((p.kappa - p.gamma) * x / (s * s))).epsilon(1e-14));
        CHECK(cir_tilted_drift(p, x) == doctest::Approx(a - p.gamma * x));
    }
    CHECK_THROWS_AS(cir_eigenpair(a, b, s, l0 + 0.1), PreconditionError);
    CHECK_THROWS_AS(cir_eigenpair(a, b, s, l0 - 0.3), PreconditionError);
    CHECK_THROWS_AS(cir_eigenpair(0.2, b, s, 0.1), ConfigError);
}

TEST_CASE("CIR tilted drift matches the generic formula b + sigma^2 x dlog(phi)") {
    // Other parameters at lambda0 and the generic FD path through grad_log_phi.
    for (double b : {-2.0, 0.5}) {
        const double a = 1.5, s = 0.8;
        const double l0 = cir_lambda0(a, b, s);
        auto e = cir_eigenpair(a, b, s, l0);
        const auto p = kummer_params(a, b, s, l0);
        for (double x : {0.3, 1.0, 4.0}) {
            double gl = 0;
            e.grad_log_phi(std::span<const double>(&x, 1), std::span<double>(&gl, 1));
            CHECK(a + b * x + s * s * x * gl == doctest::Approx(cir_tilted_drift(p, x)).epsilon(1e-12));
        }
    }
}

TEST_CASE("harmonic ground state") {
    SchrodingerProblem pr;
    pr.sigma = 1.0;
    pr.g = FitnessFunction::polynomial({0.0, 0.0, -1.0});
    pr.L = 8.0;
    pr.M = 2048;
    auto gs = schrodinger_ground_state(pr);
    CHECK(std::abs(gs.pair.lambda - 1.0) <= 1e-4);
    double err = 0;
    for (std::size_t i = 0; i < gs.x.size(); ++i)
        err += std::pow(gs.phi[i] - std::pow(std::numbers::pi, -0.25) * std::exp(-0.5 * gs.x[i] * gs.x[i]), 2);
    CHECK(std::sqrt(err * (gs.x[1] - gs.x[0])) <= 1e-3);
    for (std::size_t i = 1; i + 1 < gs.phi.size(); ++i) CHECK(gs.phi[i] > 0);
    auto model = schrodinger_model(1.0);
    CHECK(eigenpair_residual(model, pr.g, gs.pair, probe_points(1, 64, -3, 3)) <= residual_tolerance(EigenSource::schrodinger_grid));
    double gl = 0, x = 1.3;
    gs.pair.grad_log_phi(std::span<const double>(&x, 1), std::span<double>(&gl, 1));
    CHECK(gl == doctest::Approx(-1.3).epsilon(1e-3));
}

TEST_CASE("ground state scaling, shift and grid convergence") {
    SchrodingerProblem pr;
    pr.g = FitnessFunction::polynomial({0.0, 0.0, -1.0});
    pr.sigma = 2.0;
    pr.L = 10.0;
    pr.M = 2048;
    CHECK(std::abs(schrodinger_ground_state(pr).pair.lambda - 2.0) <= 1e-3);

    pr.sigma = 1.0;
    pr.L = 8.0;
    const double base = schrodinger_ground_state(pr).pair.lambda;
    pr.g = pr.g.plus_constant(3.0);
    CHECK(schrodinger_ground_state(pr).pair.lambda == doctest::Approx(base - 3.0).epsilon(1e-10));

    pr.g = FitnessFunction::polynomial({0.0, 0.0, -1.0});
    std::vector<double> lam;
    for (std::size_t M : {257, 513, 1025}) {
        pr.M = M;
        lam.push_back(schrodinger_ground_state(pr).pair.lambda);
    }
    const double ratio = std::abs(lam[0] - lam[1]) / std::abs(lam[1] - lam[2]);
    CHECK(ratio >= 4 * 0.7);
    CHECK(ratio <= 4 * 1.3);
}

TEST_CASE("ground state of a quartic fitness and error paths") {
    SchrodingerProblem pr;
    pr.g = FitnessFunction::polynomial({0.5, 0.3, 0.0, 0.0, -1.0});
    pr.L = 6.0;
    pr.M = 2048;
    auto gs = schrodinger_ground_state(pr);
    CHECK(eigenpair_residual(schrodinger_model(1.0), pr.g, gs.pair, probe_points(1, 64, -2, 2)) <= 1e-3);
    pr.L = 2.0;
    CHECK_THROWS_AS(schrodinger_ground_state(pr), ConfigError);
    pr.M = 100;
    CHECK_THROWS_AS(schrodinger_ground_state(pr), ConfigError);
    pr.M = 512;
    pr.L = 6.0;
    pr.g = FitnessFunction::polynomial({0.0, 1.0}, 100.0);
    CHECK_THROWS_AS(schrodinger_ground_state(pr), ConfigError);
}

TEST_CASE("pinsky diagnostic") {
    auto bm = DiffusionModel::arithmetic_bm(Eigen::VectorXd::Zero(1), Eigen::MatrixXd::Identity(1, 1));
    auto rep = pinsky_diagnostic(bm, [](std::span<const double>) { return 1.0; }, 0.0);
    REQUIRE(rep.rows.size() == 8);
    for (const auto& r : rep.rows) {
        const double L = std::ldexp(1.0, r.k);
        CHECK(r.left == doctest::Approx(L * L / 2).epsilon(1e-6));
        CHECK(r.right == doctest::Approx(L * L / 2).epsilon(1e-6));
    }
    CHECK(rep.left_trend == "consistent with divergence");
    CHECK(rep.right_trend == "consistent with divergence");

    auto ou = DiffusionModel::ou(1.0, 0.0, 1.0);
    auto g = FitnessFunction::quadratic(0.0, Eigen::VectorXd::Zero(1), Eigen::MatrixXd::Identity(1, 1));
    auto sol = affine_engine(ou, g, InitialLaw::gaussian(Eigen::VectorXd::Zero(1), Eigen::MatrixXd::Identity(1, 1)));
    CHECK_NOTHROW(pinsky_diagnostic(ou, sol.eigenpair->phi, 0.0));
}

TEST_CASE("eigenpair CSV") {
    auto e = cir_eigenpair(1, -1, 1, cir_lambda0(1, -1, 1));
    auto csv = eigenpair_csv(e, 0.1, 1.0, 10);
    CHECK(csv.rfind("x,phi,dphi\n", 0) == 0);
    CHECK(std::count(csv.begin(), csv.end(), '\n') == 11);
}
