// Acceptance run: one PASS/FAIL line per criterion, nonzero exit on failure.
#include "rmsolve/closed_form.hpp"
#include "rmsolve/errors.hpp"
#include "rmsolve/invariants.hpp"
#include "rmsolve/metric.hpp"
#include "rmsolve/particle.hpp"
#include "rmsolve/pde.hpp"
#include "rmsolve/rng.hpp"
#include "rmsolve/scenario.hpp"
#include "rmsolve/spectral.hpp"

#include <fmt/format.h>

#include <chrono>
#include <cmath>
#include <functional>
#include <iostream>
#include <map>

using namespace rmsolve;
using Eigen::MatrixXd;
using Eigen::VectorXd;

namespace {

VectorXd v1(double a) { return VectorXd::Constant(1, a); }
MatrixXd m1(double a) { return MatrixXd::Constant(1, 1, a); }

double npdf(double x, double m, double var) { return std::exp(-0.5 * (x - m) * (x - m) / var) / std::sqrt(2.0 * M_PI * var); }

struct Outcome {
    bool pass = false;
    std::string detail;
};

double elapsed(std::chrono::steady_clock::time_point t0) {
    return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

// Unnormalized Feynman-Kac density for dX = sqrt(a) dW, g(x) = x, by
// quadrature over the start point: given X_0 = y and X_t = x, the integral of
// the Brownian bridge is N(t (x + y)/2, a t^3 / 12).
double bridge_kernel(double y, double x, double t, double a) {
    return npdf(x, y, a * t) * std::exp(0.5 * t * (x + y) + a * t * t * t / 24.0);
}

std::vector<double> bridge_unnormalized(const std::vector<double>& xs, double m0, double s0sq, double t, double a) {
    const double lo = m0 - 14.0 * std::sqrt(s0sq), hi = m0 + 14.0 * std::sqrt(s0sq);
    const auto ys = linspace(lo, hi, 8001);
    std::vector<double> out(xs.size()), f(ys.size());
    for (std::size_t i = 0; i < xs.size(); ++i) {
        for (std::size_t k = 0; k < ys.size(); ++k) f[k] = npdf(ys[k], m0, s0sq) * bridge_kernel(ys[k], xs[i], t, a);
        out[i] = trapezoid(ys, f);
    }
    return out;
}

const double sqrt2 = std::sqrt(2.0);

Outcome criterion1() {
    const double m0 = 0.3, s0sq = 0.8, a = 2.0;
    const auto model = DiffusionModel::arithmetic_bm(v1(0.0), m1(sqrt2));
    const auto g = FitnessFunction::linear(v1(1.0), 0.0, 3.0);
    const auto t0 = std::chrono::steady_clock::now();
    const auto sol = linear_engine(model, g, InitialLaw::gaussian(v1(m0), m1(s0sq)));
    std::map<double, std::vector<double>> engine_vals;
    std::vector<double> xs_all;
    for (double t : {0.25, 0.5, 1.0}) {
        const double m = m0 + s0sq * t + t * t, v = s0sq + 2.0 * t;
        const auto xs = linspace(m - 8.0 * std::sqrt(v), m + 8.0 * std::sqrt(v), 801);
        auto& e = engine_vals[t];
        for (double x : xs) e.push_back(sol.density1(t, x));
    }
    const double runtime = elapsed(t0);
    double worst_quad = 0.0, worst_closed = 0.0;
    for (double t : {0.25, 0.5, 1.0}) {
        const double m = m0 + s0sq * t + t * t, v = s0sq + 2.0 * t;
        const auto xs = linspace(m - 8.0 * std::sqrt(v), m + 8.0 * std::sqrt(v), 801);
        // normalizer of the quadrature oracle on a wide fine grid
        const auto wide = linspace(m - 16.0 * std::sqrt(v), m + 16.0 * std::sqrt(v), 4001);
        const double Z = trapezoid(wide, bridge_unnormalized(wide, m0, s0sq, t, a));
        const auto q = bridge_unnormalized(xs, m0, s0sq, t, a);
        double qmax = 0.0, dq = 0.0, dc = 0.0, cmax = 0.0;
        for (std::size_t i = 0; i < xs.size(); ++i) {
            const double e = engine_vals[t][i];
            qmax = std::max(qmax, q[i] / Z);
            dq = std::max(dq, std::abs(e - q[i] / Z));
            cmax = std::max(cmax, npdf(xs[i], m, v));
            dc = std::max(dc, std::abs(e - npdf(xs[i], m, v)));
        }
        worst_quad = std::max(worst_quad, dq / qmax);
        worst_closed = std::max(worst_closed, dc / cmax);
    }
    const bool pass = worst_quad <= 1e-6 && worst_closed <= 1e-6 && runtime < 1.0;
    return {pass, fmt::format("sup rel err vs quadrature {:.2e}, vs N(m0+s0^2 t+t^2, s0^2+2t) {:.2e} (<= 1e-6); engine {:.3f} s (< 1 s)",
                              worst_quad, worst_closed, runtime)};
}

Outcome criterion2() {
    const double a = 2.0, t = 1.0;
    const auto model = DiffusionModel::arithmetic_bm(v1(0.0), m1(sqrt2));
    const auto sol = linear_engine(model, FitnessFunction::linear(v1(1.0), 0.0, 3.0), InitialLaw::gaussian(v1(0.0), m1(1.0)));
    // total unnormalized mass by double quadrature of the bridge representation
    const auto xs = linspace(-22.0, 26.0, 6001);
    const double mass = trapezoid(xs, bridge_unnormalized(xs, 0.0, 1.0, t, a));
    const double h = sol.mass_factor(t);
    const double closed = std::exp(t * t / 2.0 + a * t * t * t / 6.0);
    const double rel = std::abs(mass / h - 1.0), rel2 = std::abs(closed / h - 1.0);
    return {rel <= 1e-8 && rel2 <= 1e-8,
            fmt::format("h_1 engine {:.15g}, quadrature {:.15g} (rel {:.2e}), exp(5/6) rel {:.2e} (<= 1e-8)", h, mass, rel, rel2)};
}

Outcome criterion3() {
    const auto t0 = std::chrono::steady_clock::now();
    auto cfg = builtin_scenario("linear-bm");
    cfg.times = {1.0};
    const auto s = build_scenario(cfg);
    std::vector<EngineOutput> outs;
    std::string modes;
    for (const char* e : {"linear", "affine", "pde", "particles"}) {
        outs.push_back(run_engine(s, e));
        if (!outs.back().ok) return {false, fmt::format("engine {} failed: {}", e, outs.back().error)};
    }
    const bool degenerate = !outs[1].notes.empty() && outs[1].notes.front() == "mode degenerate";
    double worst = 0.0;
    for (const auto& r : pairwise_l1(outs)) worst = std::max(worst, r.l1);
    const double pde_exact = l1_distance(outs[2].densities[0], [](double x) { return npdf(x, 2.0, 3.0); });
    const double runtime = elapsed(t0);
    return {worst <= 5e-2 && pde_exact <= 2e-2 && degenerate && runtime < 60.0,
            fmt::format("max pairwise L1 {:.3e} (<= 5e-2), PDE vs analytic {:.3e} (<= 2e-2), affine mode {}, {:.1f} s (< 60 s)", worst,
                        pde_exact, degenerate ? "degenerate" : "other", runtime)};
}

Outcome criterion4() {
    const auto t0 = std::chrono::steady_clock::now();
    SchrodingerProblem p;
    p.sigma = 1.0;
    p.g = FitnessFunction::polynomial({0.0, 0.0, -1.0});
    p.M = 2048;
    const auto gs = schrodinger_ground_state(p);
    auto cfg = builtin_scenario("harmonic");
    cfg.times = {1.0};
    cfg.tilted.paths = 100000;
    const auto s = build_scenario(cfg);
    const auto tilted = run_engine(s, "tilted");
    const auto pde = run_engine(s, "pde");
    if (!tilted.ok || !pde.ok) return {false, "engine failure: " + tilted.error + pde.error};
    const double l1 = l1_distance(tilted.densities[0], pde.densities[0]);
    const double runtime = elapsed(t0);
    return {std::abs(gs.pair.lambda - 1.0) <= 1e-4 && l1 <= 5e-2 && runtime < 120.0,
            fmt::format("lambda0 {:.8f} (1 +- 1e-4), tilted vs PDE L1 {:.3e} at t=1 (<= 5e-2), {:.1f} s (< 120 s)", gs.pair.lambda, l1,
                        runtime)};
}

Outcome criterion5() {
    const auto t0 = std::chrono::steady_clock::now();
    auto cfg = builtin_scenario("cir-linear");
    cfg.times = {0.5};
    const auto s = build_scenario(cfg);
    const auto& m = cfg.model;
    const double sig = m.sigma[0][0];
    const auto pair = cir_eigenpair(m.a, m.b, sig, cir_lambda0(m.a, m.b, sig));
    const double res = eigenpair_residual(s.model, s.fitness, pair, probe_points(1, 64, 0.1, 5.0));
    ParticleOptions po;
    po.checkpoints = 0;
    const auto ens = run_particles(s.model, s.fitness, s.initial, 100000, TimeGrid::per_unit(0.5, 400), stage_seed(cfg, "particles"), po);
    double minx = std::numeric_limits<double>::infinity();
    for (double x : ens.paths.positions) minx = std::min(minx, x);
    const auto tilted = run_engine(s, "tilted");
    const auto pde = run_engine(s, "pde");
    if (!tilted.ok || !pde.ok) return {false, "engine failure: " + tilted.error + pde.error};
    const double l1 = l1_distance(tilted.densities[0], pde.densities[0]);
    const double runtime = elapsed(t0);
    return {res <= 1e-6 && minx >= 0.0 && l1 <= 8e-2 && runtime < 120.0,
            fmt::format("eigen residual {:.2e} (<= 1e-6), min state {:.3g} over {} values (>= 0), tilted vs half-line PDE L1 {:.3e} "
                        "at t=0.5 (<= 8e-2), {:.1f} s (< 120 s)",
                        res, minx, ens.paths.positions.size(), l1, runtime)};
}

Outcome criterion6() {
    const auto t0 = std::chrono::steady_clock::now();
    const auto model = DiffusionModel::arithmetic_bm(v1(0.0), m1(sqrt2));
    const auto g = FitnessFunction::linear(v1(1.0), 0.0, 3.0);
    ParticleOptions po;
    po.checkpoints = 2;
    const auto e = run_particles(model, g, InitialLaw::point_cloud({v1(0.0)}), 1000000, TimeGrid::per_unit(1.0, 400), 20240601, po);
    const double shift = std::exp(g.g_max());
    const double h = mass_estimate(e, 1.0) * shift, se = mass_standard_error(e, 1.0) * shift;
    const double target = std::exp(1.0 / 3.0);
    const double z = (h - target) / se;
    const double runtime = elapsed(t0);
    return {std::abs(z) <= 3.0 && runtime < 60.0,
            fmt::format("h_1 estimate {:.6f} +- {:.6f}, exp(1/3) = {:.6f}, z = {:+.2f} (|z| <= 3), {:.1f} s (< 60 s)", h, se, target, z,
                        runtime)};
}

CompactifiedMeasure random_measure(StreamRng& rng, std::uint32_t k, std::uint32_t slot) {
    std::vector<double> atoms, masses;
    const auto u = rng.uniforms(k, slot);
    const std::size_t n = 1 + static_cast<std::size_t>(u[0] * 5);
    double total = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
        atoms.push_back(2.5 * rng.normals(k, slot + 1 + static_cast<std::uint32_t>(i))[0]);
        masses.push_back(rng.uniforms(k, slot + 20 + static_cast<std::uint32_t>(i))[0]);
        total += masses.back();
    }
    const double cap = 0.2 + 0.8 * u[1];
    for (double& m : masses) m *= cap / total;
    return compactify(atoms, masses);
}

Outcome criterion7() {
    const auto t0 = std::chrono::steady_clock::now();
    StreamRng rng(777, 0);
    StarMetric sm;
    double dirac = 0.0, cert = 0.0;
    const double one = 1.0;
    for (std::uint32_t k = 0; k < 100; ++k) {
        const auto n = rng.normals(k, 0);
        const double x = 4.0 * n[0], y = 4.0 * n[1];
        const auto r = bl_distance(compactify(std::span<const double>(&x, 1), std::span<const double>(&one, 1)),
                                   compactify(std::span<const double>(&y, 1), std::span<const double>(&one, 1)));
        const double d = sm(x, y);
        dirac = std::max(dirac, std::abs(r.value - 2.0 * d / (2.0 + d)));
        cert = std::max({cert, certificate_violation(r), std::abs(certificate_objective(r) - r.value)});
    }
    double sym = 0.0, tri = 0.0, self = 0.0;
    std::size_t nonpositive = 0;
    for (std::uint32_t k = 0; k < 10000; ++k) {
        const auto a = random_measure(rng, 1000 + k, 0), b = random_measure(rng, 1000 + k, 50), c = random_measure(rng, 1000 + k, 100);
        const auto ab = bl_distance(a, b), ba = bl_distance(b, a), bc = bl_distance(b, c), ac = bl_distance(a, c);
        sym = std::max(sym, std::abs(ab.value - ba.value));
        tri = std::max(tri, ac.value - ab.value - bc.value);
        self = std::max(self, bl_distance(a, a).value);
        if (!(ab.value > 0.0)) ++nonpositive;
        cert = std::max({cert, certificate_violation(ab), certificate_violation(ac)});
    }
    const double runtime = elapsed(t0);
    return {dirac <= 1e-9 && sym <= 1e-9 && tri <= 1e-9 && self == 0.0 && nonpositive == 0 && cert <= 1e-9 && runtime < 60.0,
            fmt::format("Dirac err {:.2e}, symmetry {:.2e}, triangle slack {:.2e}, d(mu,mu) {:.1e}, {} non-positive distances, "
                        "certificate violation {:.2e} (all <= 1e-9), {:.1f} s (< 60 s)",
                        dirac, sym, std::max(tri, 0.0), self, nonpositive, cert, runtime)};
}

Outcome criterion8() {
    const auto t0 = std::chrono::steady_clock::now();
    const auto s = build_scenario(builtin_scenario("linear-bm"));
    const auto st = run_chaos(s);
    const double runtime = elapsed(t0);
    const double d_first = st.rows.front().value, d_last = st.rows.back().value;
    std::string table;
    for (const auto& r : st.rows) table += fmt::format(" D({})={:.4f}", r.N, r.value);
    return {st.slope >= -0.75 && st.slope <= -0.30 && d_last < d_first && runtime < 600.0,
            fmt::format("slope {:.3f} CI [{:.3f}, {:.3f}] (in [-0.75, -0.30]);{}; {:.0f} s (< 600 s)", st.slope, st.slope_ci_low,
                        st.slope_ci_high, table, runtime)};
}

Outcome criterion9() {
    const auto rows = run_invariants();
    const std::vector<std::string> wanted{"particle.shift_invariance", "particle.mass_identity", "pde.weak_form_order",
                                          "closed_form.riccati_residual", "particle.thread_independence"};
    bool pass = true;
    std::string detail;
    for (const auto& id : wanted) {
        const auto it = std::find_if(rows.begin(), rows.end(), [&](const InvariantResult& r) { return r.id == id; });
        if (it == rows.end()) return {false, "missing invariant " + id};
        pass = pass && it->pass;
        detail += fmt::format("{}{} {:.2e} ({} {:.0e})", detail.empty() ? "" : ", ", id, it->value,
                              id == "pde.weak_form_order" ? ">=" : "<=", it->threshold);
    }
    return {pass, detail};
}

} // namespace

int main() {
    const std::vector<std::pair<std::string, std::function<Outcome()>>> criteria{
        {"1 linear closed form", criterion1},   {"2 normalization identity", criterion2}, {"3 triangulation", criterion3},
        {"4 harmonic confinement", criterion4}, {"5 CIR scenario", criterion5},           {"6 mass factor", criterion6},
        {"7 BL metric", criterion7},            {"8 chaos rate", criterion8},             {"9 exact invariants", criterion9},
    };
    int failures = 0;
    for (const auto& [name, run] : criteria) {
        Outcome o;
        try {
            o = run();
        } catch (const std::exception& e) {
            o = {false, std::string("exception: ") + e.what()};
        }
        if (!o.pass) ++failures;
        std::cout << fmt::format("[{}] {}: {}\n", o.pass ? "PASS" : "FAIL", name, o.detail) << std::flush;
    }
    std::cout << fmt::format("{} of {} criteria passed\n", criteria.size() - static_cast<std::size_t>(failures), criteria.size());
    return failures == 0 ? 0 : 1;
}
