#include "rmsolve/invariants.hpp"

#include "rmsolve/closed_form.hpp"
#include "rmsolve/errors.hpp"
#include "rmsolve/metric.hpp"
#include "rmsolve/particle.hpp"
#include "rmsolve/pde.hpp"
#include "rmsolve/rng.hpp"
#include "rmsolve/spectral.hpp"

#include <boost/math/quadrature/gauss.hpp>
#include <fmt/format.h>

#include <cmath>
#include <functional>

namespace rmsolve {

namespace {

using Eigen::MatrixXd;
using Eigen::VectorXd;

VectorXd v1(double a) { return VectorXd::Constant(1, a); }
MatrixXd m1(double a) { return MatrixXd::Constant(1, 1, a); }
DiffusionModel bm2() { return DiffusionModel::arithmetic_bm(v1(0.0), m1(std::sqrt(2.0))); }

enum class Sense { at_most, at_least };

// exp(int_0^t <u_s, g> ds): Gauss-Legendre in s, trapezoid in x.
double mean_fitness_mass(const ClosedFormSolution& sol, const std::function<double(double)>& g, double t) {
    boost::math::quadrature::gauss<double, 20> gl;
    const double integral = gl.integrate(
        [&](double s) {
            const auto d = sol.on_grid(s, -25.0, 25.0, 20001);
            std::vector<double> gu(d.size());
            for (std::size_t i = 0; i < d.size(); ++i) gu[i] = g(d.x[i]) * d.values[i];
            return trapezoid(d.x, gu) / d.integral();
        },
        0.0, t);
    return std::exp(integral);
}

struct Check {
    std::string id;
    std::string description;
    Sense sense;
    std::function<double(const Tolerances&)> threshold;
    std::function<double(const Tolerances&, int)> measure;
};

double riccati_residual_value(const MatrixXd& a, const MatrixXd& B, const MatrixXd& G, const MatrixXd& H) {
    return (2.0 * H * a * H - B.transpose() * H - H * B - G).norm() / (1.0 + G.norm());
}

std::vector<Check> checks() {
    std::vector<Check> c;
    c.push_back({"model.fitness_below_gmax", "g <= g_max on 1e3 quasi-random points", Sense::at_most,
                 [](const Tolerances&) { return 0.0; },
                 [](const Tolerances&, int) {
                     double worst = -1e300;
                     for (const auto& g : {FitnessFunction::quadratic(0.2, v1(0.5), m1(1.0)),
                                           FitnessFunction::polynomial({0.5, 0.3, 0.0, 0.0, -1.0}),
                                           FitnessFunction::constant(1, 0.7)})
                         worst = std::max(worst, probe_fitness_max(g, DomainSpec::full_space(1), 1000) - g.g_max());
                     return worst;
                 }});
    c.push_back({"model.grid_normalization", "grid initial law integrates to 1", Sense::at_most,
                 [](const Tolerances& t) { return t.grid_normalization; },
                 [](const Tolerances&, int) {
                     auto g = GridDensity::tabulate(-8, 8, 4001, [](double x) { return std::exp(-0.5 * x * x) * (1.5 + std::sin(x)); });
                     g.normalize();
                     const auto law = InitialLaw::grid(g);
                     return std::abs(integrate([&](double x) { return law.density(std::span<const double>(&x, 1)); }, -8, 8, 16001) - 1.0);
                 }});
    c.push_back({"numerics.kde_normalization", "weighted KDE integrates to 1", Sense::at_most,
                 [](const Tolerances& t) { return t.kde_normalization; },
                 [](const Tolerances&, int) {
                     const auto pts = sample_initial(InitialLaw::gaussian(v1(0), m1(1)), 5000, 3);
                     std::vector<double> w(pts.size());
                     for (std::size_t i = 0; i < w.size(); ++i) w[i] = std::exp(-0.3 * pts[i]);
                     return std::abs(kde(pts, w).integral() - 1.0);
                 }});
    c.push_back({"closed_form.constant_condition", "constant condition detected for BM with linear g", Sense::at_most,
                 [](const Tolerances& t) { return t.constant_condition; },
                 [](const Tolerances& t, int) {
                     const auto r = detect_constant_condition(bm2(), FitnessFunction::linear(v1(1.0), 0.0, 3.0), 32, t);
                     if (!r) throw InvariantError("rejected: " + r.reason);
                     return std::max(r.max_dev_c1, r.max_dev_c2);
                 }});
    c.push_back({"closed_form.linear_mass_identity", "h_1 = exp(int_0^1 <u_s, g> ds) by quadrature (g = x, N(0,1))", Sense::at_most,
                 [](const Tolerances& t) { return t.solution_normalization * 1e-2; },
                 [](const Tolerances&, int) {
                     const auto s = linear_engine(bm2(), FitnessFunction::linear(v1(1.0), 0.0, 3.0), InitialLaw::gaussian(v1(0), m1(1)));
                     return std::abs(mean_fitness_mass(s, [](double x) { return x; }, 1.0) / s.mass_factor(1.0) - 1.0);
                 }});
    c.push_back({"closed_form.riccati_residual", "Newton-Kleinman residual on random 3x3 systems", Sense::at_most,
                 [](const Tolerances& t) { return t.riccati_residual; },
                 [](const Tolerances& t, int) {
                     StreamRng rng(11, 0);
                     double worst = 0.0;
                     for (std::uint32_t k = 0; k < 10; ++k) {
                         MatrixXd S(3, 3), B(3, 3), R(3, 3);
                         for (int i = 0; i < 9; ++i) {
                             S(i / 3, i % 3) = rng.normals(k, static_cast<std::uint32_t>(i))[0];
                             B(i / 3, i % 3) = rng.normals(k, static_cast<std::uint32_t>(i))[1];
                             R(i / 3, i % 3) = rng.normals(k, static_cast<std::uint32_t>(i + 9))[0];
                         }
                         const MatrixXd a = S * S.transpose() + MatrixXd::Identity(3, 3);
                         const MatrixXd G = R * R.transpose();
                         const auto res = solve_riccati(a, B, G, t.riccati_residual > 0 ? t : default_tolerances());
                         worst = std::max(worst, riccati_residual_value(a, B, G, res.H));
                     }
                     return worst;
                 }});
    c.push_back({"closed_form.affine_eigen_residual", "affine eigenpair residual (OU, quadratic g)", Sense::at_most,
                 [](const Tolerances& t) { return t.eigen_residual_analytic; },
                 [](const Tolerances&, int) {
                     const auto m = DiffusionModel::ou(1.0, 0.5, 0.8);
                     const auto g = FitnessFunction::quadratic(0.1, v1(0.3), m1(0.7));
                     const auto s = affine_engine(m, g, InitialLaw::gaussian(v1(0), m1(1)));
                     return eigenpair_residual(m, g, *s.eigenpair, probe_points(1, 64, -3, 3));
                 }});
    c.push_back({"spectral.kummer_eigen_residual", "CIR Kummer eigenpair residual at lambda0", Sense::at_most,
                 [](const Tolerances& t) { return t.eigen_residual_analytic; },
                 [](const Tolerances&, int) {
                     const auto m = DiffusionModel::cir(1.0, -1.0, 0.5);
                     const auto e = cir_eigenpair(1.0, -1.0, 0.5, cir_lambda0(1.0, -1.0, 0.5));
                     return eigenpair_residual(m, FitnessFunction::linear(v1(-1.0), 0.0, 0.0), e, probe_points(1, 64, 0.1, 5));
                 }});
    c.push_back({"spectral.kummer_recurrence", "contiguous relation of M(a, b, z)", Sense::at_most,
                 [](const Tolerances& t) { return t.kummer_recurrence; },
                 [](const Tolerances&, int) {
                     double worst = 0.0;
                     StreamRng rng(5, 0);
                     for (std::uint32_t k = 0; k < 200; ++k) {
                         const auto u = rng.uniforms(k, 0), w = rng.uniforms(k, 1);
                         const double a = -2.0 + 5.0 * u[0], b = 0.5 + 4.0 * u[1], z = -10.0 + 30.0 * w[0];
                         const double lhs = (b - a) * kummer_M(a - 1, b, z) + (2 * a - b + z) * kummer_M(a, b, z) - a * kummer_M(a + 1, b, z);
                         const double scale = std::abs((b - a) * kummer_M(a - 1, b, z)) + std::abs((2 * a - b + z) * kummer_M(a, b, z)) +
                                              std::abs(a * kummer_M(a + 1, b, z));
                         worst = std::max(worst, std::abs(lhs) / std::max(scale, 1e-300));
                     }
                     return worst;
                 }});
    c.push_back({"spectral.schrodinger_residual", "harmonic ground state residual", Sense::at_most,
                 [](const Tolerances& t) { return t.eigen_residual_grid; },
                 [](const Tolerances&, int) {
                     SchrodingerProblem p;
                     p.g = FitnessFunction::polynomial({0.0, 0.0, -1.0});
                     p.M = 1024;
                     const auto gs = schrodinger_ground_state(p);
                     return eigenpair_residual(schrodinger_model(1.0), p.g, gs.pair, probe_points(1, 64, -3, 3));
                 }});
    c.push_back({"spectral.harmonic_lambda0", "|lambda0 - 1| for -phi'' + x^2 phi", Sense::at_most,
                 [](const Tolerances&) { return 1e-4; },
                 [](const Tolerances&, int) {
                     SchrodingerProblem p;
                     p.g = FitnessFunction::polynomial({0.0, 0.0, -1.0});
                     return std::abs(schrodinger_ground_state(p).pair.lambda - 1.0);
                 }});
    c.push_back({"sde.cir_positivity", "full-truncation CIR states stay >= 0 (negative mass)", Sense::at_most,
                 [](const Tolerances&) { return 0.0; },
                 [](const Tolerances&, int th) {
                     ParticleOptions po;
                     po.checkpoints = 0;
                     po.threads = th;
                     const auto e = run_particles(DiffusionModel::cir(0.5, -1.0, 1.0), FitnessFunction::linear(v1(-1.0), 0.0, 0.0),
                                                  InitialLaw::point_cloud({v1(0.05)}), 2000, TimeGrid{0, 1, 200}, 17, po);
                     double worst = 0.0;
                     for (double x : e.paths.positions) worst = std::max(worst, -x);
                     return worst;
                 }});
    c.push_back({"particle.shift_invariance", "normalized measure unchanged by g -> g + c", Sense::at_most,
                 [](const Tolerances& t) { return t.shift_invariance; },
                 [](const Tolerances&, int th) {
                     const auto g = FitnessFunction::linear(v1(1.0), 0.0, 3.0);
                     const auto rho = InitialLaw::gaussian(v1(0.2), m1(0.5));
                     ParticleOptions po;
                     po.threads = th;
                     const auto a = run_particles(bm2(), g, rho, 1000, TimeGrid{0, 1, 200}, 9, po);
                     const auto b = run_particles(bm2(), g.plus_constant(-0.75, false), rho, 1000, TimeGrid{0, 1, 200}, 9, po);
                     const auto ma = normalized_measure(a, 1.0), mb = normalized_measure(b, 1.0);
                     double worst = 0.0;
                     for (std::size_t i = 0; i < ma.size(); ++i) worst = std::max(worst, std::abs(ma.masses[i] - mb.masses[i]));
                     return worst;
                 }});
    c.push_back({"particle.mass_identity", "tilted measure total equals mass estimate", Sense::at_most,
                 [](const Tolerances& t) { return t.mass_identity; },
                 [](const Tolerances&, int th) {
                     ParticleOptions po;
                     po.threads = th;
                     const auto e = run_particles(bm2(), FitnessFunction::linear(v1(1.0), 0.0, 3.0), InitialLaw::gaussian(v1(0), m1(1)),
                                                  2000, TimeGrid{0, 1, 200}, 4, po);
                     double worst = 0.0;
                     for (double t : e.times()) {
                         const auto nm = normalized_measure(e, t), tm = tilted_measure(e, t);
                         const double h = mass_estimate(e, t);
                         worst = std::max(worst, std::abs(tm.total() - h));
                         for (std::size_t i = 0; i < nm.size(); ++i) worst = std::max(worst, std::abs(nm.masses[i] * h - tm.masses[i]));
                     }
                     return worst;
                 }});
    c.push_back({"particle.thread_independence", "bitwise equal ensembles for 1 and 4 threads (differing values)", Sense::at_most,
                 [](const Tolerances&) { return 0.0; },
                 [](const Tolerances&, int) {
                     const auto g = FitnessFunction::linear(v1(1.0), 0.0, 3.0);
                     const auto rho = InitialLaw::gaussian(v1(0), m1(1));
                     ParticleOptions p1, p4;
                     p4.threads = 4;
                     const auto a = run_particles(bm2(), g, rho, 3000, TimeGrid{0, 1, 100}, 21, p1);
                     const auto b = run_particles(bm2(), g, rho, 3000, TimeGrid{0, 1, 100}, 21, p4);
                     std::size_t diff = 0;
                     for (std::size_t i = 0; i < a.paths.positions.size(); ++i) diff += a.paths.positions[i] != b.paths.positions[i];
                     for (std::size_t i = 0; i < a.paths.log_weights.size(); ++i) diff += a.paths.log_weights[i] != b.paths.log_weights[i];
                     return static_cast<double>(diff);
                 }});
    c.push_back({"metric.dirac_closed_form", "d_BL(delta_x, delta_y) = 2d/(2+d) on 100 pairs", Sense::at_most,
                 [](const Tolerances& t) { return t.lp_feasibility; },
                 [](const Tolerances&, int) {
                     StreamRng rng(31, 0);
                     StarMetric m;
                     double worst = 0.0;
                     for (std::uint32_t k = 0; k < 100; ++k) {
                         const auto n = rng.normals(k, 0);
                         const double x = 3.0 * n[0], y = 3.0 * n[1];
                         const double one = 1.0;
                         const auto r = bl_distance(compactify(std::span<const double>(&x, 1), std::span<const double>(&one, 1)),
                                                    compactify(std::span<const double>(&y, 1), std::span<const double>(&one, 1)));
                         const double d = m(x, y);
                         worst = std::max(worst, std::abs(r.value - 2.0 * d / (2.0 + d)));
                     }
                     return worst;
                 }});
    auto random_measure = [](StreamRng& rng, std::uint32_t k, std::uint32_t slot) {
        std::vector<double> atoms, masses;
        const auto u = rng.uniforms(k, slot);
        const std::size_t n = 1 + static_cast<std::size_t>(u[0] * 4);
        double total = 0.0;
        for (std::size_t i = 0; i < n; ++i) {
            const auto z = rng.normals(k, slot + 1 + static_cast<std::uint32_t>(i));
            const auto w = rng.uniforms(k, slot + 10 + static_cast<std::uint32_t>(i));
            atoms.push_back(2.0 * z[0]);
            masses.push_back(w[0]);
            total += w[0];
        }
        const double cap = 0.3 + 0.7 * u[1];
        for (double& m : masses) m *= cap / total;
        return compactify(atoms, masses);
    };
    c.push_back({"metric.symmetry", "|d(mu, nu) - d(nu, mu)| on 300 pairs", Sense::at_most,
                 [](const Tolerances& t) { return t.metric_symmetry; },
                 [random_measure](const Tolerances&, int) {
                     StreamRng rng(41, 0);
                     double worst = 0.0;
                     for (std::uint32_t k = 0; k < 300; ++k) {
                         const auto a = random_measure(rng, k, 0), b = random_measure(rng, k, 40);
                         worst = std::max(worst, std::abs(bl_distance(a, b).value - bl_distance(b, a).value));
                     }
                     return worst;
                 }});
    c.push_back({"metric.triangle", "triangle inequality slack on 300 triples", Sense::at_most,
                 [](const Tolerances& t) { return t.metric_triangle; },
                 [random_measure](const Tolerances&, int) {
                     StreamRng rng(43, 0);
                     double worst = -1.0;
                     for (std::uint32_t k = 0; k < 300; ++k) {
                         const auto a = random_measure(rng, k, 0), b = random_measure(rng, k, 40), c3 = random_measure(rng, k, 80);
                         worst = std::max(worst, bl_distance(a, c3).value - bl_distance(a, b).value - bl_distance(b, c3).value);
                     }
                     return std::max(worst, 0.0);
                 }});
    c.push_back({"metric.lp_certificate", "certificate feasibility and value on random pairs", Sense::at_most,
                 [](const Tolerances& t) { return t.lp_feasibility; },
                 [random_measure](const Tolerances&, int) {
                     StreamRng rng(47, 0);
                     double worst = 0.0;
                     for (std::uint32_t k = 0; k < 100; ++k) {
                         const auto r = bl_distance(random_measure(rng, k, 0), random_measure(rng, k, 40));
                         worst = std::max({worst, certificate_violation(r), std::abs(certificate_objective(r) - r.value)});
                     }
                     return worst;
                 }});
    c.push_back({"metric.dense_agreement", "network and dense simplex agree", Sense::at_most,
                 [](const Tolerances& t) { return t.lp_feasibility; },
                 [random_measure](const Tolerances&, int) {
                     StreamRng rng(53, 0);
                     double worst = 0.0;
                     for (std::uint32_t k = 0; k < 40; ++k) {
                         const auto a = random_measure(rng, k, 0), b = random_measure(rng, k, 40);
                         worst = std::max(worst, std::abs(bl_distance(a, b).value - bl_distance_dense(a, b).value));
                     }
                     return worst;
                 }});
    auto pde_case = [](std::size_t M, double dt, const std::vector<TestFunction>& tests) {
        PdeScheme s;
        s.cells = M;
        s.dt = dt;
        s.times = {1.0};
        return solve_rm_pde(bm2(), FitnessFunction::linear(v1(1.0), 0.0, 3.0), InitialLaw::gaussian(v1(0), m1(1)), s, tests);
    };
    c.push_back({"pde.normalization", "mass 1 after every step", Sense::at_most,
                 [](const Tolerances& t) { return t.pde_normalization; },
                 [pde_case](const Tolerances&, int) { return pde_case(512, 1e-2, {}).max_normalization_error; }});
    c.push_back({"pde.mass_leak", "boundary leak on the linear scenario", Sense::at_most,
                 [](const Tolerances& t) { return t.pde_mass_leak; },
                 [pde_case](const Tolerances&, int) { return pde_case(512, 1e-2, {}).mass_leak; }});
    c.push_back({"pde.weak_form_order", "weak-form residual reduction when halving (dt, dx)", Sense::at_least,
                 [](const Tolerances&) { return 3.0; },
                 [pde_case](const Tolerances&, int) {
                     const std::vector<double> centers{-3, -2, -1, 0, 1, 2, 3, 4};
                     const auto tests = bump_test_functions(centers, 1.5);
                     auto worst = [&](std::size_t M, double dt) {
                         const auto r = pde_case(M, dt, tests).weak_residuals;
                         return *std::max_element(r.begin(), r.end());
                     };
                     return worst(256, 0.02) / worst(512, 0.01);
                 }});
    c.push_back({"pde.refinement_order", "L1 error ratio under refinement (second order, 4 +- 40%)", Sense::at_most,
                 [](const Tolerances&) { return 0.4; },
                 [pde_case](const Tolerances&, int) {
                     auto err = [&](std::size_t M, double dt) {
                         const auto d = pde_case(M, dt, {}).at(1.0);
                         std::vector<double> e(d.size());
                         for (std::size_t i = 0; i < d.size(); ++i)
                             e[i] = std::abs(d.values[i] - std::exp(-(d.x[i] - 2) * (d.x[i] - 2) / 6.0) / std::sqrt(6.0 * M_PI));
                         return trapezoid(d.x, e);
                     };
                     return std::abs(err(256, 0.02) / err(512, 0.01) / 4.0 - 1.0);
                 }});
    return c;
}

} // namespace

std::vector<std::string> invariant_ids() {
    std::vector<std::string> ids;
    for (const auto& c : checks()) ids.push_back(c.id);
    return ids;
}

std::vector<InvariantResult> run_invariants(const Tolerances& tol, int threads) {
    std::vector<InvariantResult> out;
    for (const auto& c : checks()) {
        InvariantResult r;
        r.id = c.id;
        r.description = c.description;
        r.threshold = c.threshold(tol);
        try {
            r.value = c.measure(tol, threads);
            r.pass = std::isfinite(r.value) && (c.sense == Sense::at_most ? r.value <= r.threshold : r.value >= r.threshold);
        } catch (const std::exception& e) {
            r.pass = false;
            r.value = std::numeric_limits<double>::quiet_NaN();
            r.detail = e.what();
        }
        out.push_back(std::move(r));
    }
    return out;
}

std::string format_matrix(const std::vector<InvariantResult>& rows) {
    std::string o = fmt::format("{:<36} {:<6} {:>12} {:>12}  {}\n", "invariant", "status", "value", "threshold", "description");
    for (const auto& r : rows) {
        o += fmt::format("{:<36} {:<6} {:>12.3e} {:>12.3e}  {}\n", r.id, r.pass ? "PASS" : "FAIL", r.value, r.threshold, r.description);
        if (!r.detail.empty()) o += fmt::format("{:<36} error: {}\n", "", r.detail);
    }
    return o;
}

} // namespace rmsolve
