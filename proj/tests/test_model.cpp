#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include "rmsolve/errors.hpp"
#include "rmsolve/model.hpp"

#include <cmath>
#include <numbers>

using namespace rmsolve;
using Eigen::MatrixXd;
using Eigen::VectorXd;

namespace {

VectorXd v1(double a) { return VectorXd::Constant(1, a); }
MatrixXd m1(double a) { return MatrixXd::Constant(1, 1, a); }

} // namespace

TEST_CASE("validate_model flags") {
    auto ok = validate_model(DiffusionModel::cir(1.0, -1.0, 1.0));
    CHECK_FALSE(ok.hard_failure);
    CHECK(ok.feller_ok.value());

    auto bad = validate_model(DiffusionModel::cir(0.3, -1.0, 1.0));
    CHECK(bad.hard_failure);
    CHECK_FALSE(bad.feller_ok.value());
    CHECK(bad.messages.at(0).find("2a >= sigma^2") != std::string::npos);
    CHECK_THROWS_AS(require_valid(DiffusionModel::cir(0.3, -1.0, 1.0)), ConfigError);

    auto bm = validate_model(DiffusionModel::arithmetic_bm(v1(0.3), m1(1.2)));
    CHECK_FALSE(bm.hard_failure);
    CHECK(bm.max_drift_ratio == 0.0);
    CHECK(bm.max_diffusion_ratio == 0.0);

    MatrixXd s(2, 1);
    s << 1.0, 1.0;
    auto sing = validate_model(DiffusionModel::affine(VectorXd::Zero(2), -MatrixXd::Identity(2, 2), s));
    CHECK(sing.hard_failure);

    // purity
    auto a = validate_model(DiffusionModel::ou(1.0, 0.5, 0.7));
    auto b = validate_model(DiffusionModel::ou(1.0, 0.5, 0.7));
    CHECK(a.max_drift_ratio == b.max_drift_ratio);
    CHECK(a.messages == b.messages);
    CHECK(std::abs(a.max_drift_ratio - 1.0) < 1e-9);
}

TEST_CASE("fitness modulus checks") {
    auto lin = FitnessFunction::linear(v1(1.0), 0.0, 3.0);
    std::vector<std::pair<std::vector<double>, std::vector<double>>> pairs;
    for (int i = -5; i <= 5; ++i) pairs.push_back({{0.37 * i}, {1.3 * i - 0.2}});
    CHECK(check_fitness_modulus(lin, pairs).violations.empty());

    auto quad = FitnessFunction::polynomial({0.0, 0.0, -1.0});
    CHECK(quad.g_max() == 0.0);
    std::vector<std::pair<std::vector<double>, std::vector<double>>> one{{{1.0}, {3.0}}};
    auto withr = quad.with_modulus({0.0, 1.0});
    auto r = check_fitness_modulus(withr, one);
    CHECK(r.violations.empty());
    auto r2 = check_fitness_modulus(quad.with_modulus({1.0}), one);
    REQUIRE(r2.violations.size() == 1);
    CHECK(r2.violations[0].lhs == 8.0);
    CHECK(r2.violations[0].rhs == 2.0);
    // derived modulus of -x^2 is 1 * r
    CHECK(quad.modulus_at(4.0) == doctest::Approx(4.0));
}

TEST_CASE("fitness never exceeds g_max on quasi-random probes") {
    std::vector<FitnessFunction> fs{
        FitnessFunction::polynomial({0.0, 0.0, -1.0}),
        FitnessFunction::polynomial({0.5, 1.0, -2.0, 0.3, -0.25}),
        FitnessFunction::quadratic(0.2, Eigen::Vector2d(0.3, -1.0), MatrixXd::Identity(2, 2)),
        FitnessFunction::constant(1, -0.4),
    };
    for (const auto& g : fs) {
        const double mx = probe_fitness_max(g, DomainSpec::full_space(g.dim()), 1000);
        CHECK(mx <= g.g_max() + 1e-12);
    }
    // sup of a confining quartic is attained
    auto q = FitnessFunction::polynomial({0.5, 1.0, -2.0, 0.3, -0.25});
    CHECK(q.g_max() >= probe_fitness_max(q, DomainSpec::full_space(1), 200000, 3.0) - 1e-12);
    CHECK_THROWS_AS(FitnessFunction::polynomial({0.0, 0.0, 0.0, 1.0}), ConfigError);
}

TEST_CASE("shifted fitness bookkeeping") {
    auto g = FitnessFunction::linear(v1(2.0), 1.0, 3.0);
    auto h = g.plus_constant(5.0);
    double x = 0.7;
    CHECK(h(x) == doctest::Approx(g(x) + 5.0));
    CHECK(h.g_max() == 8.0);
    CHECK(h.linear_form()->c0 == 6.0);
    CHECK(h.quadratic_form()->alpha == -6.0);
    CHECK(std::abs(h.shifted(std::span<const double>(&x, 1)) - g.shifted(std::span<const double>(&x, 1))) < 1e-15);
}

TEST_CASE("sample_initial examples") {
    auto law = InitialLaw::gaussian(v1(0.0), m1(1.0));
    const std::size_t n = 100000;
    auto s = sample_initial(law, n, 7);
    double mean = 0.0;
    for (double v : s) mean += v;
    mean /= n;
    CHECK(std::abs(mean) < 4.0 / std::sqrt(static_cast<double>(n)));
    CHECK(sample_initial(law, 1000, 7) == sample_initial(law, 1000, 7));
    // prefix stability: point i depends only on (seed, i)
    auto a = sample_initial(law, 10, 9), b = sample_initial(law, 20, 9);
    for (int i = 0; i < 10; ++i) CHECK(a[i] == b[i]);

    auto cloud = InitialLaw::point_cloud({v1(1.0), v1(2.0)});
    CHECK(sample_initial(cloud, 2, 1) == std::vector<double>{1.0, 2.0});
    auto many = sample_initial(cloud, 1000, 1);
    int ones = 0;
    for (double v : many) ones += v == 1.0;
    CHECK(ones > 400);
    CHECK(ones < 600);

    auto half = DomainSpec::half_line();
    CHECK_THROWS_AS(sample_initial(law, 10, 1, &half), ConfigError);
    CHECK_THROWS_AS(sample_initial(InitialLaw::point_cloud({v1(-1.0)}), 1, 1, &half), ConfigError);
}

TEST_CASE("grid law sampling and normalization") {
    auto g = GridDensity::tabulate(0.0, 20.0, 4001, [](double x) { return x * std::exp(-x); });
    g.normalize();
    auto law = InitialLaw::grid(g);
    CHECK(std::abs(g.integral() - 1.0) <= 1e-8);
    auto half = DomainSpec::half_line();
    auto s = sample_initial(law, 200000, 3, &half);
    double mean = 0.0;
    for (double v : s) {
        CHECK(v >= 0.0);
        mean += v;
    }
    mean /= s.size();
    CHECK(std::abs(mean - 2.0) < 4.0 * std::sqrt(2.0 / s.size()) + 1e-3);
    CHECK(std::abs(law.moment(1) - 2.0) < 1e-3);
    auto bad = GridDensity::tabulate(0.0, 1.0, 11, [](double) { return 2.0; });
    CHECK_THROWS_AS(InitialLaw::grid(bad), ConfigError);
}

TEST_CASE("initial law moments and mixtures") {
    auto law = InitialLaw::gaussian(v1(1.0), m1(4.0));
    CHECK(std::abs(law.moment(2) - 5.0) < 1e-10);
    auto mix = InitialLaw::mixture({1.0, 3.0}, {InitialLaw::gaussian(v1(-1.0), m1(1.0)), InitialLaw::gaussian(v1(2.0), m1(0.5))});
    double x = 0.3;
    const double d = 0.25 * std::exp(-0.5 * 1.69) / std::sqrt(2 * std::numbers::pi) +
                     0.75 * std::exp(-0.5 * 2.89 / 0.5) / std::sqrt(2 * std::numbers::pi * 0.5);
    CHECK(std::abs(mix.density(std::span<const double>(&x, 1)) - d) < 1e-14);
    auto s = sample_initial(mix, 100000, 5);
    double mean = 0;
    for (double v : s) mean += v;
    CHECK(std::abs(mean / s.size() - 1.25) < 0.02);
    auto law2 = InitialLaw::gaussian(Eigen::Vector2d(1.0, 0.0), MatrixXd::Identity(2, 2));
    CHECK(std::abs(law2.moment(2) - 3.0) < 0.03);
}

TEST_CASE("generator by finite differences") {
    auto ou = DiffusionModel::ou(1.5, 0.2, 0.8);
    ScalarFn f = [](std::span<const double> x) { return std::sin(x[0]) + x[0] * x[0]; };
    for (double x : {-2.0, 0.0, 0.7, 3.0}) {
        const double exact = 1.5 * (0.2 - x) * (std::cos(x) + 2 * x) + 0.5 * 0.64 * (-std::sin(x) + 2.0);
        CHECK(std::abs(apply_generator(ou, f, std::span<const double>(&x, 1)) - exact) < 1e-8);
    }
    MatrixXd s(2, 2);
    s << 1.0, 0.0, 0.5, 0.8;
    auto aff = DiffusionModel::affine(Eigen::Vector2d(0.1, -0.2), -MatrixXd::Identity(2, 2), s);
    ScalarFn q = [](std::span<const double> x) { return x[0] * x[1] + 0.5 * x[0] * x[0]; };
    std::vector<double> p{0.4, -1.1};
    const MatrixXd a = s * s.transpose();
    const double b0 = 0.1 - 0.4, b1 = -0.2 + 1.1;
    const double exact = b0 * (p[1] + p[0]) + b1 * p[0] + 0.5 * (a(0, 0) * 1.0 + 2 * a(0, 1) * 1.0);
    CHECK(std::abs(apply_generator(aff, q, p) - exact) < 1e-8);
}
