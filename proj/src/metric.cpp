#include "rmsolve/metric.hpp"

#include "rmsolve/dense_simplex.hpp"
#include "rmsolve/errors.hpp"
#include "rmsolve/network_simplex.hpp"
#include "rmsolve/parallel.hpp"
#include "rmsolve/rng.hpp"

#include <fmt/format.h>

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>

namespace rmsolve {

double dstar(std::optional<double> p, std::optional<double> q, const StarMetric& m) {
    if (!p && !q) return 0.0;
    if (!p) return m.l(*q);
    if (!q) return m.l(*p);
    return m(*p, *q);
}

double CompactifiedMeasure::total() const { return pairwise_sum(masses); }

CompactifiedMeasure compactify(std::span<const double> atoms, std::span<const double> masses) {
    if (atoms.size() != masses.size()) throw ConfigError("compactify: atoms and masses differ in length");
    std::vector<std::size_t> idx(atoms.size());
    std::iota(idx.begin(), idx.end(), 0);
    for (std::size_t i = 0; i < atoms.size(); ++i) {
        if (!std::isfinite(atoms[i])) throw ConfigError("compactify: non-finite atom");
        if (!(masses[i] >= 0.0)) throw ConfigError("compactify: negative or NaN mass");
    }
    std::sort(idx.begin(), idx.end(), [&](std::size_t a, std::size_t b) { return atoms[a] < atoms[b]; });
    CompactifiedMeasure c;
    for (std::size_t i : idx) {
        if (masses[i] == 0.0) continue;
        if (!c.atoms.empty() && c.atoms.back() == atoms[i]) {
            c.masses.back() += masses[i];
        } else {
            c.atoms.push_back(atoms[i]);
            c.masses.push_back(masses[i]);
        }
    }
    const double tot = c.total();
    if (tot > 1.0 + 1e-9) throw PreconditionError(fmt::format("compactify: total mass {:.12g} exceeds 1", tot));
    c.star_mass = 1.0 - tot;
    if (c.star_mass < 0.0) {
        c.clamped = -c.star_mass;
        c.star_mass = 0.0;
    }
    return c;
}

CompactifiedMeasure compactify(const EmpiricalMeasure& m) {
    if (m.dim != 1) throw ConfigError("compactify: 1D measures only");
    return compactify(m.atoms, m.masses);
}

CompactifiedMeasure discretize(const std::function<double(double)>& density, double total_mass, const Binning& b) {
    if (!(b.hi > b.lo) || b.cells == 0) throw ConfigError("discretize: empty binning window");
    std::vector<double> f(b.cells + 1);
    for (std::size_t i = 0; i <= b.cells; ++i) f[i] = density(b.lo + static_cast<double>(i) * b.width());
    std::vector<double> atoms(b.cells), masses(b.cells);
    for (std::size_t i = 0; i < b.cells; ++i) {
        atoms[i] = b.mid(i);
        masses[i] = total_mass * 0.5 * (f[i] + f[i + 1]) * b.width();
    }
    return compactify(atoms, masses);
}

BinnedMeasure bin(const CompactifiedMeasure& m, const Binning& b) {
    std::vector<double> atoms, masses;
    std::vector<double> cell(b.cells, 0.0);
    BinnedMeasure out;
    for (std::size_t i = 0; i < m.atoms.size(); ++i) {
        const double x = m.atoms[i];
        if (x < b.lo || x >= b.hi) {
            atoms.push_back(x);
            masses.push_back(m.masses[i]);
            continue;
        }
        const auto k = std::min(b.cells - 1, static_cast<std::size_t>((x - b.lo) / b.width()));
        cell[k] += m.masses[i];
        out.error += m.masses[i] * std::abs(x - b.mid(k));
    }
    for (std::size_t k = 0; k < b.cells; ++k)
        if (cell[k] > 0.0) {
            atoms.push_back(b.mid(k));
            masses.push_back(cell[k]);
        }
    out.measure = compactify(atoms, masses);
    out.measure.clamped = std::max(out.measure.clamped, m.clamped);
    return out;
}

namespace {

struct Merged {
    std::vector<double> x, d;
    double d_star = 0.0;
};

Merged merge(const CompactifiedMeasure& mu, const CompactifiedMeasure& nu) {
    Merged out;
    std::size_t i = 0, j = 0;
    while (i < mu.atoms.size() || j < nu.atoms.size()) {
        double x, d;
        if (j >= nu.atoms.size() || (i < mu.atoms.size() && mu.atoms[i] < nu.atoms[j])) {
            x = mu.atoms[i];
            d = mu.masses[i++];
        } else if (i >= mu.atoms.size() || nu.atoms[j] < mu.atoms[i]) {
            x = nu.atoms[j];
            d = -nu.masses[j++];
        } else {
            x = mu.atoms[i];
            d = mu.masses[i++] - nu.masses[j++];
        }
        if (d != 0.0) {
            out.x.push_back(x);
            out.d.push_back(d);
        }
    }
    out.d_star = mu.star_mass - nu.star_mass;
    return out;
}

// max over [0, 1] of the lower envelope of lines (1 - l) A + l B.
std::pair<double, double> envelope_max(const std::vector<std::pair<double, double>>& lines) {
    auto env = [&](double l) {
        double v = std::numeric_limits<double>::infinity();
        for (auto [A, B] : lines) v = std::min(v, (1 - l) * A + l * B);
        return v;
    };
    std::vector<double> cand{0.0, 1.0};
    for (std::size_t i = 0; i < lines.size(); ++i)
        for (std::size_t j = i + 1; j < lines.size(); ++j) {
            // (1-l)A1 + l B1 = (1-l)A2 + l B2
            const double da = lines[i].first - lines[j].first;
            const double den = da - (lines[i].second - lines[j].second);
            if (den != 0.0) {
                const double l = da / den;
                if (l > 0.0 && l < 1.0) cand.push_back(l);
            }
        }
    double best_l = 0.0, best = -std::numeric_limits<double>::infinity();
    for (double l : cand) {
        const double v = env(l);
        if (v > best) {
            best = v;
            best_l = l;
        }
    }
    return {best_l, best};
}

} // namespace

BlResult bl_distance(const CompactifiedMeasure& mu, const CompactifiedMeasure& nu, const StarMetric& m) {
    const Merged mg = merge(mu, nu);
    BlResult r;
    r.support = mg.x;
    r.delta = mg.d;
    r.delta_star = mg.d_star;
    const int K = static_cast<int>(mg.x.size());
    r.psi.assign(K, 0.0);
    if (K > 4096) throw PreconditionError(fmt::format("bl_distance: merged support {} exceeds 4096; bin first", K));
    if (K == 0 && mg.d_star == 0.0) return r;

    const int star = K, hub = K + 1;
    TransshipmentSolver ts(K + 2, hub);
    std::vector<int> graph_arcs, hub_arcs;
    std::vector<double> w;
    auto graph_edge = [&](int a, int b, double weight) {
        graph_arcs.push_back(ts.add_arc(a, b));
        w.push_back(weight);
        graph_arcs.push_back(ts.add_arc(b, a));
        w.push_back(weight);
    };
    for (int k = 0; k + 1 < K; ++k) graph_edge(k, k + 1, mg.x[k + 1] - mg.x[k]);
    for (int k = 0; k < K; ++k) graph_edge(k, star, m.l(mg.x[k]));
    for (int v = 0; v <= star; ++v) {
        hub_arcs.push_back(ts.add_arc(v, hub));
        hub_arcs.push_back(ts.add_arc(hub, v));
    }
    std::vector<double> supply(K + 2, 0.0);
    std::copy(mg.d.begin(), mg.d.end(), supply.begin());
    supply[star] = mg.d_star;
    double total_abs = 0.0;
    for (double s : supply) total_abs += std::abs(s);
    ts.set_supplies(supply);

    std::vector<std::pair<double, double>> lines{{total_abs, 0.0}};
    double best = -1.0;
    double l = 0.5;
    for (r.evaluations = 1; r.evaluations <= 200; ++r.evaluations) {
        const double s = 1.0 - l;
        for (std::size_t i = 0; i < graph_arcs.size(); ++i) ts.set_cost(graph_arcs[i], l * w[i]);
        for (int a : hub_arcs) ts.set_cost(a, s);
        const double v = ts.solve();
        double A = 0.0, B = 0.0;
        for (int a : hub_arcs) A += ts.flow(a);
        for (std::size_t i = 0; i < graph_arcs.size(); ++i) B += w[i] * ts.flow(graph_arcs[i]);
        lines.emplace_back(A, B);
        if (v > best) {
            best = v;
            r.s = s;
            r.ell = l;
            for (int k = 0; k < K; ++k) r.psi[k] = ts.potential(k);
            r.psi_star = ts.potential(star);
        }
        const auto [nl, ub] = envelope_max(lines);
        r.upper_bound = ub;
        if (ub - best <= 1e-13 * (1.0 + best)) break;
        l = nl;
    }
    r.pivots = ts.pivots();
    // clip the certificate onto the box |psi| <= s to absorb roundoff
    for (double& p : r.psi) p = std::clamp(p, -r.s, r.s);
    r.psi_star = std::clamp(r.psi_star, -r.s, r.s);
    r.value = std::max(0.0, certificate_objective(r));
    if (r.upper_bound - r.value > 1e-9 * (1.0 + r.value))
        throw NumericError(fmt::format("bl_distance: cutting planes did not close (gap {:.3g})", r.upper_bound - r.value));
    return r;
}

BlResult bl_distance_dense(const CompactifiedMeasure& mu, const CompactifiedMeasure& nu, const StarMetric& m) {
    const Merged mg = merge(mu, nu);
    BlResult r;
    r.support = mg.x;
    r.delta = mg.d;
    r.delta_star = mg.d_star;
    const int K = static_cast<int>(mg.x.size()) + 1;  // last node is the star
    if (K > 61) throw PreconditionError("bl_distance_dense: support too large for the dense LP");
    auto pos = [&](int k) -> std::optional<double> { return k + 1 == K ? std::nullopt : std::optional<double>(mg.x[k]); };
    auto dl = [&](int k) { return k + 1 == K ? mg.d_star : mg.d[k]; };
    // variables: p_k, q_k (psi = p - q), s, ell
    const int nv = 2 * K + 2, S = 2 * K, L = 2 * K + 1;
    const int nc = 2 * K + K * (K - 1) + 1;
    Eigen::MatrixXd A = Eigen::MatrixXd::Zero(nc, nv);
    Eigen::VectorXd b = Eigen::VectorXd::Zero(nc), c(nv);
    int row = 0;
    for (int k = 0; k < K; ++k) {
        A(row, k) = 1;
        A(row, K + k) = -1;
        A(row++, S) = -1;
        A(row, k) = -1;
        A(row, K + k) = 1;
        A(row++, S) = -1;
    }
    for (int j = 0; j < K; ++j)
        for (int k = 0; k < K; ++k) {
            if (j == k) continue;
            A(row, j) = 1;
            A(row, K + j) = -1;
            A(row, k) = -1;
            A(row, K + k) = 1;
            A(row++, L) = -dstar(pos(j), pos(k), m);
        }
    A(row, S) = 1;
    A(row, L) = 1;
    b(row) = 1;
    for (int k = 0; k < K; ++k) {
        c(k) = dl(k);
        c(K + k) = -dl(k);
    }
    c(S) = 0;
    c(L) = 0;
    const LpResult lp = dense_simplex(A, b, c);
    r.s = lp.x(S);
    r.ell = lp.x(L);
    r.psi.resize(K - 1);
    for (int k = 0; k + 1 < K; ++k) r.psi[k] = lp.x(k) - lp.x(K + k);
    r.psi_star = lp.x(K - 1) - lp.x(2 * K - 1);
    r.value = lp.objective;
    r.upper_bound = lp.objective;
    r.evaluations = 1;
    r.pivots = lp.iterations;
    return r;
}

double certificate_objective(const BlResult& r) {
    CompensatedSum s;
    for (std::size_t k = 0; k < r.psi.size(); ++k) s.add(r.psi[k] * r.delta[k]);
    s.add(r.psi_star * r.delta_star);
    return s.value();
}

double certificate_violation(const BlResult& r, const StarMetric& m) {
    double v = std::max({0.0, r.s + r.ell - 1.0, -r.s, -r.ell, std::abs(r.psi_star) - r.s});
    const std::size_t K = r.psi.size();
    for (std::size_t j = 0; j < K; ++j) {
        v = std::max(v, std::abs(r.psi[j]) - r.s);
        v = std::max(v, std::abs(r.psi[j] - r.psi_star) - r.ell * m.l(r.support[j]));
        for (std::size_t k = j + 1; k < K; ++k)
            v = std::max(v, std::abs(r.psi[j] - r.psi[k]) - r.ell * m(r.support[j], r.support[k]));
    }
    return v;
}

double wasserstein1_1d(std::span<const double> atoms_a, std::span<const double> masses_a,
                       std::span<const double> atoms_b, std::span<const double> masses_b) {
    if (atoms_a.size() != masses_a.size() || atoms_b.size() != masses_b.size())
        throw ConfigError("wasserstein1_1d: atoms and masses differ in length");
    std::vector<std::pair<double, double>> ev;
    double ta = 0.0, tb = 0.0;
    for (std::size_t i = 0; i < atoms_a.size(); ++i) {
        ev.emplace_back(atoms_a[i], masses_a[i]);
        ta += masses_a[i];
    }
    for (std::size_t i = 0; i < atoms_b.size(); ++i) {
        ev.emplace_back(atoms_b[i], -masses_b[i]);
        tb += masses_b[i];
    }
    if (std::abs(ta - tb) > 1e-9 * std::max(1.0, ta))
        throw PreconditionError("wasserstein1_1d: unequal total masses; use bl_distance");
    std::sort(ev.begin(), ev.end());
    double F = 0.0, w = 0.0;
    for (std::size_t i = 0; i + 1 < ev.size(); ++i) {
        F += ev[i].second;
        w += std::abs(F) * (ev[i + 1].first - ev[i].first);
    }
    return w;
}

double wasserstein1_to_cdf(std::span<const double> atoms, std::span<const double> masses,
                           const std::function<double(double)>& cdf, double lo, double hi, std::size_t nodes) {
    std::vector<std::size_t> idx(atoms.size());
    std::iota(idx.begin(), idx.end(), 0);
    std::sort(idx.begin(), idx.end(), [&](std::size_t a, std::size_t b) { return atoms[a] < atoms[b]; });
    const auto xs = linspace(lo, hi, nodes);
    std::vector<double> diff(nodes);
    std::size_t p = 0;
    double F = 0.0;
    for (std::size_t i = 0; i < nodes; ++i) {
        while (p < idx.size() && atoms[idx[p]] <= xs[i]) F += masses[idx[p++]];
        diff[i] = std::abs(F - cdf(xs[i]));
    }
    return trapezoid(xs, diff);
}

ReferenceFn closed_form_reference(const ClosedFormSolution& sol, const Binning& b) {
    return [sol, b](double t) {
        return discretize([&](double x) { return sol.density1(t, x); }, sol.shifted_mass_factor(t), b);
    };
}

DqtResult dqt_estimate(const DiffusionModel& model, const FitnessFunction& g, const InitialLaw& rho0,
                       const ReferenceFn& reference, std::size_t N, const DqtOptions& opts) {
    if (opts.q < 1.0) throw ConfigError("dqt_estimate: q must be at least 1");
    if (opts.reps == 0 || N == 0) throw ConfigError("dqt_estimate: need N >= 1 and at least one replication");
    DqtResult out;
    out.N = N;
    ParticleOptions po;
    po.checkpoints = opts.checkpoints;
    std::vector<double> times;
    std::vector<CompactifiedMeasure> refs;
    std::vector<std::vector<double>> dist(opts.reps);
    std::vector<double> berr(opts.reps, 0.0);
    for (std::size_t rep = 0; rep < opts.reps; ++rep) {
        const std::uint64_t seed = derive_seed(opts.seed, fmt::format("dqt/N={}/rep={}", N, rep));
        const auto ens = run_particles(model, g, rho0, N, opts.grid, seed, po);
        if (refs.empty()) {
            times = ens.times();
            for (double t : times) refs.push_back(reference(t));
        }
        std::vector<CompactifiedMeasure> emp(times.size());
        for (std::size_t r = 0; r < times.size(); ++r) {
            auto b = bin(compactify(tilted_measure(ens, times[r])), opts.binning);
            berr[rep] = std::max(berr[rep], b.error);
            emp[r] = std::move(b.measure);
        }
        dist[rep].assign(times.size(), 0.0);
        parallel_for(times.size(), opts.threads, [&](std::size_t lo, std::size_t hi) {
            for (std::size_t r = lo; r < hi; ++r) dist[rep][r] = bl_distance(emp[r], refs[r], opts.metric).value;
        });
        out.lp_solves += times.size();
    }
    for (std::size_t rep = 0; rep < opts.reps; ++rep) {
        out.sups.push_back(*std::max_element(dist[rep].begin(), dist[rep].end()));
        out.max_binning_error = std::max(out.max_binning_error, berr[rep]);
    }
    auto stat = [&](const std::vector<double>& v) {
        double s = 0.0;
        for (double x : v) s += std::pow(x, opts.q);
        return std::pow(s / static_cast<double>(v.size()), 1.0 / opts.q);
    };
    out.value = stat(out.sups);
    if (opts.bootstrap > 0 && opts.reps > 1) {
        StreamRng rng(derive_seed(opts.seed, fmt::format("dqt/bootstrap/N={}", N)), 0);
        std::vector<double> boots(opts.bootstrap), sample(opts.reps);
        for (std::size_t bsi = 0; bsi < opts.bootstrap; ++bsi) {
            for (std::size_t i = 0; i < opts.reps; ++i) {
                const auto u = rng.uniforms(bsi, i);
                sample[i] = out.sups[std::min(opts.reps - 1, static_cast<std::size_t>(u[0] * opts.reps))];
            }
            boots[bsi] = stat(sample);
        }
        std::sort(boots.begin(), boots.end());
        out.ci_low = boots[static_cast<std::size_t>(0.025 * (opts.bootstrap - 1))];
        out.ci_high = boots[static_cast<std::size_t>(0.975 * (opts.bootstrap - 1))];
    } else {
        out.ci_low = out.ci_high = out.value;
    }
    return out;
}

std::pair<double, double> loglog_fit(std::span<const double> x, std::span<const double> y) {
    if (x.size() != y.size() || x.size() < 2) throw ConfigError("loglog_fit: need at least two points");
    double mx = 0, my = 0;
    const double n = static_cast<double>(x.size());
    for (std::size_t i = 0; i < x.size(); ++i) {
        mx += std::log(x[i]) / n;
        my += std::log(y[i]) / n;
    }
    double sxy = 0, sxx = 0;
    for (std::size_t i = 0; i < x.size(); ++i) {
        sxy += (std::log(x[i]) - mx) * (std::log(y[i]) - my);
        sxx += (std::log(x[i]) - mx) * (std::log(x[i]) - mx);
    }
    const double slope = sxy / sxx;
    return {slope, my - slope * mx};
}

RateStudy rate_study(const DiffusionModel& model, const FitnessFunction& g, const InitialLaw& rho0,
                     const ReferenceFn& reference, std::span<const std::size_t> Ns, const DqtOptions& opts) {
    RateStudy st;
    std::vector<double> xs, ys;
    for (std::size_t N : Ns) {
        st.rows.push_back(dqt_estimate(model, g, rho0, reference, N, opts));
        xs.push_back(static_cast<double>(N));
        ys.push_back(st.rows.back().value);
    }
    for (std::size_t i = 1; i < ys.size(); ++i)
        if (ys[i] > ys[i - 1]) ++st.inversions;
    st.reliable = opts.reps > 1 && opts.bootstrap > 0;
    if (Ns.size() < 2) return st;
    std::tie(st.slope, st.intercept) = loglog_fit(xs, ys);
    st.slope_ci_low = st.slope_ci_high = st.slope;
    if (!st.reliable) return st;
    // resample replications independently at every N, refit
    StreamRng rng(derive_seed(opts.seed, "rate/bootstrap"), 0);
    std::vector<double> slopes(opts.bootstrap), yb(Ns.size());
    for (std::size_t b = 0; b < opts.bootstrap; ++b) {
        for (std::size_t k = 0; k < Ns.size(); ++k) {
            const auto& sups = st.rows[k].sups;
            double s = 0.0;
            for (std::size_t i = 0; i < sups.size(); ++i) {
                const auto u = rng.uniforms(static_cast<std::uint32_t>(b), static_cast<std::uint32_t>(k * sups.size() + i));
                s += std::pow(sups[std::min(sups.size() - 1, static_cast<std::size_t>(u[0] * sups.size()))], opts.q);
            }
            yb[k] = std::pow(s / static_cast<double>(sups.size()), 1.0 / opts.q);
        }
        slopes[b] = loglog_fit(xs, yb).first;
    }
    std::sort(slopes.begin(), slopes.end());
    st.slope_ci_low = slopes[static_cast<std::size_t>(0.025 * (opts.bootstrap - 1))];
    st.slope_ci_high = slopes[static_cast<std::size_t>(0.975 * (opts.bootstrap - 1))];
    return st;
}

std::string RateStudy::csv() const {
    std::string out = "N,D,ci_lo,ci_hi\n";
    for (const auto& r : rows) out += fmt::format("{},{:.10g},{:.10g},{:.10g}\n", r.N, r.value, r.ci_low, r.ci_high);
    return out;
}

} // namespace rmsolve
