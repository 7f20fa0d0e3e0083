#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include "rmsolve/errors.hpp"
#include "rmsolve/metric.hpp"
#include "rmsolve/rng.hpp"

#include <chrono>
#include <memory>
#include <cmath>
#include <numbers>

using namespace rmsolve;
using Eigen::MatrixXd;
using Eigen::VectorXd;

namespace {

CompactifiedMeasure dirac(double x, double m = 1.0) {
    std::vector<double> a{x}, w{m};
    return compactify(a, w);
}

// Random atomic sub-probability measure with up to `k` atoms.
CompactifiedMeasure random_measure(StreamRng& rng, std::uint64_t step, std::size_t k, double spread) {
    std::vector<double> a, w;
    double tot = 0;
    for (std::size_t i = 0; i < k; ++i) {
        const auto u = rng.uniforms(step, i);
        a.push_back(std::round((u[0] - 0.5) * spread * 8) / 8);  // shared grid so atoms coincide
        w.push_back(u[1]);
        tot += u[1];
    }
    const double keep = rng.uniforms(step, 999)[0];
    for (double& x : w) x *= keep / tot;
    return compactify(a, w);
}

double brute_force_two_point(double dx_mass, double star_mass_diff, double lx) {
    // max dx*psi_x + ds*psi_s over |psi| <= s, |psi_x - psi_s| <= (1 - s) lx
    double best = -1, cs = 0.5, cx = 0, cst = 0, span = 1.0;
    for (int zoom = 0; zoom < 60; ++zoom) {
        double bs = cs, bx = cx, bst = cst;
        for (int i = -10; i <= 10; ++i)
            for (int j = -10; j <= 10; ++j)
                for (int k = -10; k <= 10; ++k) {
                    const double s = cs + span * i / 10, px = cx + span * j / 10, ps = cst + span * k / 10;
                    if (s < 0 || s > 1 || std::abs(px) > s || std::abs(ps) > s) continue;
                    if (std::abs(px - ps) > (1 - s) * lx) continue;
                    const double v = dx_mass * px + star_mass_diff * ps;
                    if (v > best) {
                        best = v;
                        bs = s;
                        bx = px;
                        bst = ps;
                    }
                }
        cs = bs;
        cx = bx;
        cst = bst;
        span *= 0.6;
    }
    return best;
}

} // namespace

TEST_CASE("dstar values and triangle inequality") {
    StarMetric m;
    CHECK(dstar(2.0, 2.0) == 0.0);
    CHECK(dstar(0.0, 5.0) == doctest::Approx(7.0 / 6.0).epsilon(1e-15));
    CHECK(dstar(3.0, std::nullopt) == 0.25);
    CHECK(dstar(std::nullopt, std::nullopt) == 0.0);
    StreamRng rng(1, 0);
    double worst = -1;
    for (std::uint64_t i = 0; i < 10000; ++i) {
        std::optional<double> p[3];
        for (std::uint32_t k = 0; k < 3; ++k) {
            const auto u = rng.uniforms(i, k);
            if (u[0] > 0.05) p[k] = (u[1] - 0.5) * 40;
        }
        worst = std::max(worst, dstar(p[0], p[2]) - dstar(p[0], p[1]) - dstar(p[1], p[2]));
        CHECK(dstar(p[0], p[1]) == dstar(p[1], p[0]));
        CHECK(dstar(p[0], p[1]) <= 2.0);
    }
    CHECK(worst <= 1e-12);
}

TEST_CASE("compactify") {
    CHECK(dirac(1.0).star_mass == 0.0);
    auto t = dirac(1.0, std::exp(-1.0));
    CHECK(t.star_mass == doctest::Approx(1 - std::exp(-1.0)).epsilon(1e-15));
    auto e = compactify(std::vector<double>{}, std::vector<double>{});
    CHECK(e.star_mass == 1.0);
    CHECK_THROWS_AS(dirac(0.0, 1.1), PreconditionError);
    std::vector<double> a{2, 1, 2}, w{0.25, 0.25, 0.25};
    auto c = compactify(a, w);
    REQUIRE(c.atoms.size() == 2);
    CHECK(c.atoms[0] == 1);
    CHECK(c.masses[1] == 0.5);
}

TEST_CASE("Dirac pairs match 2d/(2+d)") {
    StreamRng rng(2, 0);
    StarMetric m;
    for (std::uint64_t i = 0; i < 100; ++i) {
        const auto u = rng.uniforms(i, 0);
        const double x = (u[0] - 0.5) * 20, y = (u[1] - 0.5) * 20;
        const double d = m(x, y);
        auto r = bl_distance(dirac(x), dirac(y));
        CHECK(std::abs(r.value - 2 * d / (2 + d)) <= 1e-9);
        CHECK(certificate_violation(r) <= 1e-9);
    }
    CHECK(bl_distance(dirac(0.5), dirac(0.5)).value == 0.0);
    // d = 2 gives 1: x = -y with l(x) + l(y) = 2 only at 0, so use the star.
    auto r = bl_distance(dirac(0.0), compactify(std::vector<double>{}, std::vector<double>{}));
    CHECK(r.value == doctest::Approx(2.0 / 3.0).epsilon(1e-12));
}

TEST_CASE("Dirac against a half Dirac agrees with brute force") {
    for (double x : {0.0, 1.5, -4.0}) {
        auto r = bl_distance(dirac(x), dirac(x, 0.5));
        const double l = 1 / (1 + std::abs(x));
        CHECK(std::abs(r.value - brute_force_two_point(0.5, -0.5, l)) <= 1e-9);
        CHECK(r.value == doctest::Approx(l / (2 + l)).epsilon(1e-12));
    }
}

TEST_CASE("network formulation agrees with the all-pairs dense LP") {
    StreamRng rng(3, 0);
    for (std::uint64_t i = 0; i < 60; ++i) {
        auto mu = random_measure(rng, 2 * i, 1 + i % 9, 6.0);
        auto nu = random_measure(rng, 2 * i + 1, 1 + (i * 7) % 11, 6.0);
        auto a = bl_distance(mu, nu), b = bl_distance_dense(mu, nu);
        CHECK(std::abs(a.value - b.value) <= 1e-9);
        CHECK(certificate_violation(a) <= 1e-9);
        CHECK(certificate_violation(b) <= 1e-9);
        CHECK(std::abs(certificate_objective(a) - a.value) <= 1e-12);
    }
}

TEST_CASE("bl_distance metric axioms and bounds") {
    StreamRng rng(4, 0);
    for (std::uint64_t i = 0; i < 150; ++i) {
        auto a = random_measure(rng, 3 * i, 20, 10.0);
        auto b = random_measure(rng, 3 * i + 1, 20, 10.0);
        auto c = random_measure(rng, 3 * i + 2, 20, 10.0);
        const double ab = bl_distance(a, b).value, ba = bl_distance(b, a).value;
        const double bc = bl_distance(b, c).value, ac = bl_distance(a, c).value;
        CHECK(std::abs(ab - ba) <= 1e-10);
        CHECK(ac <= ab + bc + 1e-9);
        CHECK(bl_distance(a, a).value <= 1e-12);
        auto r = bl_distance(a, b);
        double l1 = std::abs(r.delta_star);
        for (double d : r.delta) l1 += std::abs(d);
        CHECK(ab <= l1 + 1e-12);
        CHECK(ab <= 2.0);
    }
}

TEST_CASE("large supports solve quickly with feasible certificates") {
    Binning b{-10, 12, 1024};
    auto ref = discretize([](double x) { return std::exp(-0.5 * (x - 1) * (x - 1)) / std::sqrt(2 * std::numbers::pi); },
                          0.8, b);
    StreamRng rng(5, 0);
    std::vector<double> a, w;
    for (std::uint64_t i = 0; i < 4000; ++i) {
        a.push_back(1 + rng.normals(i, 0)[0] * 1.1);
        w.push_back(0.7 / 4000);
    }
    auto emp = bin(compactify(a, w), b).measure;
    const auto t0 = std::chrono::steady_clock::now();
    auto r = bl_distance(emp, ref);
    const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    MESSAGE("K=" << r.support.size() << " evaluations=" << r.evaluations << " pivots=" << r.pivots << " time=" << secs);
    CHECK(r.value > 0.0);
    CHECK(r.upper_bound - r.value <= 1e-9);
    CHECK(certificate_violation(r) <= 1e-9);
    CHECK_THROWS_AS(bl_distance_dense(emp, ref), PreconditionError);
}

TEST_CASE("binning preserves mass and bounds the displacement") {
    std::vector<double> a{-20.0, 0.013, 0.014, 3.3}, w{0.1, 0.2, 0.3, 0.1};
    auto c = compactify(a, w);
    auto b = bin(c, Binning{-1, 1, 10});
    CHECK(b.measure.total() == doctest::Approx(c.total()).epsilon(1e-15));
    CHECK(b.measure.atoms.front() == -20.0);
    CHECK(b.error <= 0.1 * (0.2 + 0.3) + 1e-15);
    CHECK(bl_distance(c, b.measure).value <= b.error + 1e-12);
}

TEST_CASE("Wasserstein-1 in 1D") {
    std::vector<double> a{0.0}, b{1.0}, w{1.0};
    CHECK(wasserstein1_1d(a, w, b, w) == 1.0);
    CHECK(wasserstein1_1d(a, w, a, w) == 0.0);
    std::vector<double> half{0.5};
    CHECK_THROWS_AS(wasserstein1_1d(a, w, b, half), PreconditionError);
    StreamRng rng(6, 0);
    std::vector<double> xs, ws;
    for (std::uint64_t i = 0; i < 100000; ++i) {
        xs.push_back(rng.normals(i, 0)[0]);
        ws.push_back(1e-5);
    }
    const double d = wasserstein1_to_cdf(xs, ws, [](double x) { return 0.5 * std::erfc(-x / std::sqrt(2.0)); }, -8, 8, 20001);
    CHECK(d <= 0.02);
}

TEST_CASE("dqt estimate: self reference and boundedness") {
    auto model = DiffusionModel::arithmetic_bm(VectorXd::Zero(1), MatrixXd::Constant(1, 1, std::sqrt(2.0)));
    auto g = FitnessFunction::linear(VectorXd::Constant(1, 1.0), 0.0, 3.0);
    auto rho = InitialLaw::gaussian(VectorXd::Zero(1), MatrixXd::Constant(1, 1, 0.25));
    DqtOptions o;
    o.reps = 3;
    o.grid = TimeGrid{0, 1, 100};
    o.checkpoints = 4;
    o.binning = Binning{-10, 12, 256};
    o.bootstrap = 200;
    // self reference: rebuild the same ensemble the estimator will draw
    ReferenceFn self;
    std::size_t calls = 0;
    {
        const std::uint64_t seed = derive_seed(o.seed, "dqt/N=50/rep=0");
        ParticleOptions po;
        po.checkpoints = o.checkpoints;
        auto ens = std::make_shared<WeightedParticleEnsemble>(run_particles(model, g, rho, 50, o.grid, seed, po));
        self = [ens, &o, &calls](double t) {
            ++calls;
            return bin(compactify(tilted_measure(*ens, t)), o.binning).measure;
        };
    }
    o.reps = 1;
    auto d0 = dqt_estimate(model, g, rho, self, 50, o);
    CHECK(d0.value <= 1e-12);
    CHECK(calls == 4);

    auto sol = linear_engine(model, g, rho);
    o.reps = 3;
    auto d1 = dqt_estimate(model, g, rho, closed_form_reference(sol, o.binning), 1, o);
    CHECK(d1.value > 0.0);
    CHECK(d1.value <= 2.0);
    CHECK(d1.ci_low <= d1.value);
    CHECK(d1.ci_high >= d1.value);
    CHECK(d1.lp_solves == 12);
}
