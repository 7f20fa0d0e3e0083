#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include "rmsolve/gaussian.hpp"
#include "rmsolve/numerics.hpp"
#include "rmsolve/rng.hpp"

#include <cmath>
#include <numbers>

using namespace rmsolve;
using Eigen::MatrixXd;
using Eigen::VectorXd;

namespace {

// RK4 on Y' = A Y, Y(0) = I.
MatrixXd rk4_exp(const MatrixXd& A, double t, int steps = 4000) {
    MatrixXd Y = MatrixXd::Identity(A.rows(), A.cols());
    const double h = t / steps;
    for (int k = 0; k < steps; ++k) {
        MatrixXd k1 = A * Y, k2 = A * (Y + 0.5 * h * k1), k3 = A * (Y + 0.5 * h * k2), k4 = A * (Y + h * k3);
        Y += h / 6.0 * (k1 + 2 * k2 + 2 * k3 + k4);
    }
    return Y;
}

MatrixXd random_stable(int n, std::uint64_t seed) {
    MatrixXd A(n, n);
    for (int i = 0; i < n; ++i)
        for (int j = 0; j < n; ++j) A(i, j) = StreamRng(seed, i * n + j).normals(0, 0)[0];
    return A - (A.eigenvalues().real().maxCoeff() + 0.5) * MatrixXd::Identity(n, n);
}

} // namespace

TEST_CASE("trapezoid integrals") {
    CHECK(integrate([](double) { return 1.0; }, 0.0, 1.0, 101) == doctest::Approx(1.0).epsilon(1e-15));
    const double v = integrate([](double x) { return std::exp(-x * x); }, -8.0, 8.0, 1 << 12);
    CHECK(std::abs(v - std::sqrt(std::numbers::pi)) < 1e-10);
}

TEST_CASE("gauss-hermite moments") {
    CHECK(std::abs(expect_normal([](double x) { return x * x; }, 0.0, 1.0, 64) - 1.0) < 1e-12);
    CHECK(std::abs(expect_normal([](double x) { return x * x * x * x; }, 0.0, 1.0, 64) - 3.0) < 1e-11);
    CHECK(std::abs(expect_normal([](double x) { return std::exp(x); }, 0.5, 2.0, 64) - std::exp(0.5 + 2.0)) < 1e-9);
    auto r = gauss_hermite(20);
    double s = 0;
    for (double w : r.weights) s += w;
    CHECK(std::abs(s - 1.0) < 1e-13);
}

TEST_CASE("matrix exponential examples") {
    CHECK((matrix_exp(MatrixXd::Zero(3, 3), 1.0) - MatrixXd::Identity(3, 3)).norm() == 0.0);
    MatrixXd N(2, 2);
    N << 0, 1, 0, 0;
    MatrixXd E(2, 2);
    E << 1, 1, 0, 1;
    CHECK((matrix_exp(N, 1.0) - E).norm() < 1e-15);
    MatrixXd D = Eigen::Vector2d(-1.0, 2.0).asDiagonal();
    MatrixXd ED = matrix_exp(D, 1.0);
    CHECK(std::abs(ED(0, 0) - std::exp(-1.0)) < 1e-13);
    CHECK(std::abs(ED(1, 1) - std::exp(2.0)) < 1e-13 * std::exp(2.0));
    CHECK(std::abs(ED(0, 1)) == 0.0);
}

TEST_CASE("matrix exponential against an ODE oracle and the semigroup law") {
    for (int n = 2; n <= 6; ++n) {
        const MatrixXd A = random_stable(n, 100 + n);
        const MatrixXd ref = rk4_exp(A, 1.3);
        CHECK((matrix_exp(A, 1.3) - ref).norm() / ref.norm() < 1e-10);
        const MatrixXd st = matrix_exp(A, 0.4) * matrix_exp(A, 0.7);
        CHECK((matrix_exp(A, 1.1) - st).norm() / st.norm() < 1e-10);
    }
}

TEST_CASE("covariance integral") {
    MatrixXd a(2, 2);
    a << 2.0, 0.3, 0.3, 1.0;
    CHECK((covariance_integral(MatrixXd::Zero(2, 2), a, 1.7) - 1.7 * a).norm() < 1e-13);
    CHECK(covariance_integral(random_stable(2, 5), a, 0.0).norm() == 0.0);
    MatrixXd g(1, 1), s(1, 1);
    g << -0.8;
    s << 0.49;
    const double exact = 0.49 * (1 - std::exp(-2 * 0.8 * 1.5)) / (2 * 0.8);
    CHECK(std::abs(covariance_integral(g, s, 1.5)(0, 0) - exact) < 1e-12);
    for (int n = 2; n <= 5; ++n) {
        const MatrixXd G = random_stable(n, 300 + n);
        MatrixXd B = random_stable(n, 400 + n);
        const MatrixXd A = B * B.transpose() + MatrixXd::Identity(n, n);
        const MatrixXd S = covariance_integral(G, A, 0.9);
        CHECK((S - S.transpose()).norm() <= 1e-12);
        CHECK((GaussianMoments{VectorXd::Zero(n), S}).valid());
        // midpoint-free check: d/dt Sigma = G Sigma + Sigma G^T + A
        const double h = 1e-5;
        const MatrixXd dS = (covariance_integral(G, A, 0.9 + h) - covariance_integral(G, A, 0.9 - h)) / (2 * h);
        CHECK((dS - (G * S + S * G.transpose() + A)).norm() < 1e-6 * (1 + A.norm()));
    }
}

TEST_CASE("mean integral") {
    MatrixXd g(1, 1);
    g << -2.0;
    VectorXd b(1);
    b << 3.0;
    CHECK(std::abs(mean_integral(g, b, 0.7)(0) - 3.0 * (1 - std::exp(-1.4)) / 2.0) < 1e-13);
}

TEST_CASE("kde of a single point is the kernel") {
    std::vector<double> p{0.0};
    KdeOptions o;
    o.bandwidth = 0.3;
    const auto d = kde(p, {}, o);
    for (double x : {-0.5, 0.0, 0.2, 0.9}) {
        const double exact = std::exp(-0.5 * x * x / 0.09) / (0.3 * std::sqrt(2 * std::numbers::pi));
        CHECK(std::abs(d(x) - exact) < 1e-3 * exact + 1e-6);
    }
    CHECK(std::abs(d.integral() - 1.0) < 1e-8);
}

TEST_CASE("kde of normal samples") {
    const int n = 100000;
    std::vector<double> p(n);
    for (int i = 0; i < n; ++i) p[i] = StreamRng(7, i).normals(0, 0)[0];
    const auto d = kde(p, {});
    const double l1 = l1_distance(d, [](double x) { return std::exp(-0.5 * x * x) / std::sqrt(2 * std::numbers::pi); });
    CHECK(l1 <= 0.02);
    for (double v : d.values) CHECK(v >= 0.0);
    CHECK(std::abs(d.integral() - 1.0) <= 1e-8);
}

TEST_CASE("kde weights equal duplicated points") {
    std::vector<double> a{0.0, 1.0}, wa{1.0, 2.0};
    std::vector<double> b{0.0, 1.0, 1.0};
    KdeOptions o;
    o.bandwidth = 0.4;
    const auto da = kde(a, wa, o), db = kde(b, {}, o);
    for (std::size_t i = 0; i < da.size(); ++i) CHECK(std::abs(da.values[i] - db.values[i]) < 1e-14);
}

TEST_CASE("kde with reflection keeps mass on the half-line") {
    std::vector<double> p;
    for (int i = 0; i < 5000; ++i) p.push_back(-std::log(StreamRng(3, i).uniforms(0, 0)[0]));
    KdeOptions o;
    o.lower_bound = 0.0;
    const auto d = kde(p, {}, o);
    CHECK(d.lo() == 0.0);
    CHECK(std::abs(d.integral() - 1.0) < 1e-8);
    CHECK(d(0.0) > 0.6);
}

TEST_CASE("gaussian multiply matches quadrature") {
    GaussianMixture m({GaussianComponent{std::log(0.3), VectorXd::Constant(1, 0.5), MatrixXd::Constant(1, 1, 0.8)}});
    VectorXd l = VectorXd::Constant(1, 0.7);
    MatrixXd Q = MatrixXd::Constant(1, 1, 0.2);
    const auto r = m.multiply_exp_quadratic(l, Q);
    auto f = [&](double x) {
        return 0.3 * std::exp(0.7 * x - 0.2 * x * x - 0.5 * (x - 0.5) * (x - 0.5) / 0.8) / std::sqrt(2 * std::numbers::pi * 0.8);
    };
    const double Z = integrate(f, -30, 30, 20001);
    const double mean = integrate([&](double x) { return x * f(x); }, -30, 30, 20001) / Z;
    CHECK(std::abs(std::exp(r.log_total()) - Z) < 1e-10 * Z);
    CHECK(std::abs(r.mean()(0) - mean) < 1e-10);
    // point mass: multiply by exp(l x) gives weight e^{l x0}
    GaussianMixture pm({GaussianComponent{0.0, VectorXd::Constant(1, 2.0), MatrixXd::Zero(1, 1)}});
    CHECK(std::abs(pm.multiply_exp_quadratic(l, MatrixXd::Zero(1, 1)).log_total() - 1.4) < 1e-15);
    // divergent integral is reported
    CHECK_THROWS(m.multiply_exp_quadratic(l, MatrixXd::Constant(1, 1, -1.0)));
}

TEST_CASE("grid density basics") {
    auto g = GridDensity::tabulate(-10, 10, 4001, [](double x) { return std::exp(-0.5 * x * x); });
    g.normalize();
    CHECK(std::abs(g.integral() - 1.0) < 1e-12);
    CHECK(std::abs(g.mean()) < 1e-12);
    CHECK(std::abs(g.variance() - 1.0) < 1e-4);
    CHECK(g(20.0) == 0.0);
    CHECK_THROWS(GridDensity({0.0, 0.0}, {1.0, 1.0}));
    CHECK_THROWS(GridDensity({0.0, 1.0}, {1.0, -1.0}));
}
