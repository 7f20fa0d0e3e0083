#include "rmsolve/pde.hpp"

#include "rmsolve/errors.hpp"
#include "rmsolve/parallel.hpp"

#include <nlohmann/json.hpp>
#include <fmt/format.h>

#include <algorithm>
#include <chrono>
#include <cmath>

namespace rmsolve {

std::vector<TestFunction> bump_test_functions(std::span<const double> centers, double radius) {
    std::vector<TestFunction> out;
    for (double c : centers) {
        const double r = radius;
        auto base = [c, r](double x, double& y, double& q) {
            y = (x - c) / r;
            q = 1.0 - y * y;
            return q > 0.0;
        };
        TestFunction t;
        t.f = [=](double x) {
            double y, q;
            return base(x, y, q) ? std::exp(-1.0 / q) : 0.0;
        };
        t.df = [=](double x) {
            double y, q;
            if (!base(x, y, q)) return 0.0;
            return std::exp(-1.0 / q) * (-2.0 * y) / (r * q * q);
        };
        t.d2f = [=](double x) {
            double y, q;
            if (!base(x, y, q)) return 0.0;
            const double phi = -2.0 * y / (r * q * q);
            const double dphi = -2.0 / (r * r) * (1.0 / (q * q) + 4.0 * y * y / (q * q * q));
            return std::exp(-1.0 / q) * (phi * phi + dphi);
        };
        out.push_back(std::move(t));
    }
    return out;
}

const GridDensity& PdeTrajectory::at(double t) const {
    for (std::size_t i = 0; i < times.size(); ++i)
        if (std::abs(times[i] - t) <= 1e-9 * (1.0 + std::abs(t))) return densities[i];
    throw ConfigError(fmt::format("pde trajectory: time {:g} not stored", t));
}

std::string PdeTrajectory::to_csv() const {
    std::string out = "t,x,u\n";
    for (std::size_t i = 0; i < times.size(); ++i)
        for (std::size_t j = 0; j < densities[i].size(); ++j)
            out += fmt::format("{:.17g},{:.17g},{:.17g}\n", times[i], densities[i].x[j], densities[i].values[j]);
    return out;
}

std::string PdeTrajectory::summary_json() const {
    nlohmann::json j;
    j["mass_leak"] = mass_leak;
    j["steps"] = steps;
    j["runtime_seconds"] = runtime_seconds;
    j["max_normalization_error"] = max_normalization_error;
    j["negative_clips"] = negative_clips;
    j["min_clipped"] = min_clipped;
    j["upwind_interfaces"] = upwind_interfaces;
    j["times"] = times;
    return j.dump(2);
}

namespace {

// Tridiagonal system with fixed coefficients, factored once.
struct Tridiagonal {
    std::vector<double> lower, diag, upper;  // lower[i] couples i to i-1, upper[i] couples i to i+1
    std::vector<double> c, inv;

    void factor() {
        const std::size_t n = diag.size();
        c.assign(n, 0.0);
        inv.assign(n, 0.0);
        double den = diag[0];
        inv[0] = 1.0 / den;
        c[0] = upper[0] * inv[0];
        for (std::size_t i = 1; i < n; ++i) {
            den = diag[i] - lower[i] * c[i - 1];
            if (den == 0.0) throw NumericError("solve_rm_pde: singular Crank-Nicolson matrix");
            inv[i] = 1.0 / den;
            c[i] = upper[i] * inv[i];
        }
    }
    void solve(std::vector<double>& r) const {
        const std::size_t n = diag.size();
        r[0] *= inv[0];
        for (std::size_t i = 1; i < n; ++i) r[i] = (r[i] - lower[i] * r[i - 1]) * inv[i];
        for (std::size_t i = n - 1; i-- > 0;) r[i] -= c[i] * r[i + 1];
    }
};

} // namespace

PdeTrajectory solve_rm_pde(const DiffusionModel& model, const FitnessFunction& g, const InitialLaw& u0,
                           const PdeScheme& sc, const std::vector<TestFunction>& tests, double leak_limit) {
    const auto t_start = std::chrono::steady_clock::now();
    if (model.dim() != 1 || g.dim() != 1 || u0.dim() != 1) throw ConfigError("solve_rm_pde: 1D problems only");
    if (!(sc.hi > sc.lo) || sc.cells < 8 || !(sc.dt > 0.0) || sc.times.empty())
        throw ConfigError("solve_rm_pde: invalid scheme");
    const bool wall = model.domain().kind == DomainKind::half_line;
    if (wall && sc.lo != 0.0) throw ConfigError("solve_rm_pde: half-line grids must start at 0");
    if (model.domain().kind == DomainKind::box) throw ConfigError("solve_rm_pde: box domains are not supported");

    const std::size_t M = sc.cells;
    const double h = (sc.hi - sc.lo) / static_cast<double>(M);
    const double T = *std::max_element(sc.times.begin(), sc.times.end());
    const auto steps = static_cast<std::size_t>(std::ceil(T / sc.dt - 1e-9));
    const double dt = T / static_cast<double>(steps);
    std::vector<std::size_t> store;
    for (double t : sc.times) {
        const double k = t / dt;
        if (std::abs(k - std::round(k)) > 1e-6) throw ConfigError(fmt::format("solve_rm_pde: time {:g} not on the step grid", t));
        store.push_back(static_cast<std::size_t>(std::llround(k)));
    }

    std::vector<double> xc(M), D(M), gx(M), react_half(M), react_full(M);
    for (std::size_t i = 0; i < M; ++i) {
        xc[i] = sc.lo + (static_cast<double>(i) + 0.5) * h;
        const double s = model.sigma1(xc[i]);
        D[i] = 0.5 * s * s;
        gx[i] = g(xc[i]) - g.g_max();
        if (!std::isfinite(gx[i])) throw NumericError("solve_rm_pde: fitness not finite on the grid");
    }
    PdeTrajectory tr;
    // Interface drifts b_{i+1/2}, i = -1..M-1.
    std::vector<double> bf(M + 1);
    for (std::size_t i = 0; i <= M; ++i) bf[i] = model.drift1(sc.lo + static_cast<double>(i) * h);

    // Flux J_{i+1/2} = b_{i+1/2} (u_i + u_{i+1})/2 - (D_{i+1} u_{i+1} - D_i u_i)/h, du_i/dt = -(J_{i+1/2} - J_{i-1/2})/h.
    // Where the cell Peclet number |b| h / D exceeds 2 the advective part is
    // upwinded (hybrid scheme); central differences oscillate there.
    // Interface k couples cells k-1 (left) and k (right); wl, wr weight u in the advective flux.
    std::vector<double> wl(M + 1), wr(M + 1);
    for (std::size_t k = 0; k <= M; ++k) {
        const double dl = k > 0 ? D[k - 1] : D[0], dr = k < M ? D[k] : D[M - 1];
        const double dmin = std::min(dl, dr);
        const bool upwind = std::abs(bf[k]) * h > 2.0 * dmin;
        wl[k] = upwind ? (bf[k] > 0.0 ? 1.0 : 0.0) : 0.5;
        wr[k] = 1.0 - wl[k];
    }
    tr.upwind_interfaces = static_cast<std::size_t>(std::count_if(wl.begin(), wl.end(), [](double w) { return w != 0.5; }));
    std::vector<double> Llo(M, 0.0), Ldi(M, 0.0), Lup(M, 0.0);
    for (std::size_t i = 0; i < M; ++i) {
        // right interface i+1/2 (ghost zero beyond hi)
        const double br = bf[i + 1];
        Ldi[i] += -(wl[i + 1] * br + D[i] / h) / h;
        if (i + 1 < M) Lup[i] += -(wr[i + 1] * br - D[i + 1] / h) / h;
        // left interface i-1/2
        if (i == 0 && wall) continue;
        const double bl = bf[i];
        Ldi[i] += (wr[i] * bl - D[i] / h) / h;
        if (i > 0) Llo[i] += (wl[i] * bl + D[i - 1] / h) / h;
    }
    Tridiagonal lhs;
    lhs.lower.resize(M);
    lhs.diag.resize(M);
    lhs.upper.resize(M);
    for (std::size_t i = 0; i < M; ++i) {
        lhs.lower[i] = -0.5 * dt * Llo[i];
        lhs.diag[i] = 1.0 - 0.5 * dt * Ldi[i];
        lhs.upper[i] = -0.5 * dt * Lup[i];
    }
    lhs.factor();
    const double rdt = sc.splitting == Splitting::strang ? 0.5 * dt : dt;
    for (std::size_t i = 0; i < M; ++i) react_half[i] = std::exp(rdt * gx[i]);

    std::vector<double> u(M), rhs(M);
    for (std::size_t i = 0; i < M; ++i) u[i] = u0.density(std::span<const double>(&xc[i], 1));
    auto mass = [&](const std::vector<double>& v) {
        CompensatedSum s;
        for (double x : v) s.add(x);
        return s.value() * h;
    };
    auto renormalize = [&]() {
        const double m = mass(u);
        if (!(m > 0.0) || !std::isfinite(m)) throw NumericError("solve_rm_pde: mass vanished");
        for (double& x : u) x /= m;
    };
    renormalize();

    auto snapshot = [&](double t) {
        std::vector<double> x, v;
        if (wall) {
            x.push_back(0.0);
            v.push_back(std::max(0.0, 1.5 * u[0] - 0.5 * u[1]));
        } else {
            x.push_back(sc.lo);
            v.push_back(0.0);
        }
        x.insert(x.end(), xc.begin(), xc.end());
        v.insert(v.end(), u.begin(), u.end());
        x.push_back(sc.hi);
        v.push_back(0.0);
        tr.times.push_back(t);
        tr.densities.emplace_back(std::move(x), std::move(v));
        tr.densities.back().normalized = true;
    };

    // weak-form integrands at the cell centres
    const std::size_t nt = tests.size();
    std::vector<std::vector<double>> fv(nt, std::vector<double>(M)), afv(nt, std::vector<double>(M));
    for (std::size_t k = 0; k < nt; ++k)
        for (std::size_t i = 0; i < M; ++i) {
            fv[k][i] = tests[k].f(xc[i]);
            afv[k][i] = model.drift1(xc[i]) * tests[k].df(xc[i]) + D[i] * tests[k].d2f(xc[i]);
        }
    std::vector<double> f0(nt), integral(nt, 0.0), prev_integrand(nt);
    auto integrand = [&](std::size_t k) {
        // <u, (A + g) f> - <u, g><u, f>, with the shifted g (the shift cancels)
        double uaf = 0.0, ug = 0.0, uf = 0.0, ugf = 0.0;
        for (std::size_t i = 0; i < M; ++i) {
            uaf += u[i] * afv[k][i];
            ugf += u[i] * gx[i] * fv[k][i];
            ug += u[i] * gx[i];
            uf += u[i] * fv[k][i];
        }
        return h * (uaf + ugf) - h * ug * h * uf;
    };
    auto pairing = [&](std::size_t k) {
        double s = 0.0;
        for (std::size_t i = 0; i < M; ++i) s += u[i] * fv[k][i];
        return s * h;
    };
    for (std::size_t k = 0; k < nt; ++k) {
        f0[k] = pairing(k);
        prev_integrand[k] = integrand(k);
    }

    if (std::find(store.begin(), store.end(), 0) != store.end()) snapshot(0.0);
    for (std::size_t n = 1; n <= steps; ++n) {
        for (std::size_t i = 0; i < M; ++i) u[i] *= react_half[i];
        renormalize();
        // Crank-Nicolson transport
        const double before = mass(u);
        for (std::size_t i = 0; i < M; ++i) {
            double Lu = Ldi[i] * u[i];
            if (i > 0) Lu += Llo[i] * u[i - 1];
            if (i + 1 < M) Lu += Lup[i] * u[i + 1];
            rhs[i] = u[i] + 0.5 * dt * Lu;
        }
        lhs.solve(rhs);
        u.swap(rhs);
        for (double& x : u) {
            if (x < 0.0) {
                if (x < -1e-14) ++tr.negative_clips;
                tr.min_clipped = std::min(tr.min_clipped, x);
                x = 0.0;
            }
        }
        tr.mass_leak += std::max(0.0, before - mass(u));
        if (sc.splitting == Splitting::strang)
            for (std::size_t i = 0; i < M; ++i) u[i] *= react_half[i];
        renormalize();
        tr.max_normalization_error = std::max(tr.max_normalization_error, std::abs(mass(u) - 1.0));
        for (std::size_t k = 0; k < nt; ++k) {
            const double cur = integrand(k);
            integral[k] += 0.5 * dt * (prev_integrand[k] + cur);
            prev_integrand[k] = cur;
        }
        if (std::find(store.begin(), store.end(), n) != store.end()) snapshot(static_cast<double>(n) * dt);
    }
    if (tr.mass_leak > leak_limit)
        throw NumericError(fmt::format("solve_rm_pde: boundary mass leak {:.3g} exceeds {:.3g}; enlarge the grid (try hi - lo = {:g})",
                                       tr.mass_leak, leak_limit, 1.5 * (sc.hi - sc.lo)));
    for (std::size_t k = 0; k < nt; ++k) tr.weak_residuals.push_back(std::abs(pairing(k) - f0[k] - integral[k]));
    tr.steps = steps;
    tr.runtime_seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t_start).count();
    return tr;
}

std::vector<double> fitness_mean_trace(const PdeTrajectory& traj, const FitnessFunction& g) {
    std::vector<double> out;
    for (const auto& d : traj.densities) {
        std::vector<double> gu(d.size());
        for (std::size_t i = 0; i < d.size(); ++i) gu[i] = g(d.x[i]) * d.values[i];
        out.push_back(trapezoid(d.x, gu) / d.integral());
    }
    return out;
}

} // namespace rmsolve
