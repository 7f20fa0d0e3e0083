#include "rmsolve/sde.hpp"

#include "rmsolve/errors.hpp"
#include "rmsolve/parallel.hpp"
#include "rmsolve/rng.hpp"

#include <algorithm>
#include <cmath>
#include <fmt/format.h>

namespace rmsolve {

TimeGrid TimeGrid::per_unit(double T, std::size_t steps_per_unit, double t0) {
    TimeGrid g;
    g.t0 = t0;
    g.T = T;
    g.steps = std::max<std::size_t>(1, static_cast<std::size_t>(std::ceil((T - t0) * steps_per_unit - 1e-9)));
    g.validate();
    return g;
}

void TimeGrid::validate() const {
    if (!(t0 < T) || !std::isfinite(T)) throw ConfigError("TimeGrid: need t0 < T");
    if (steps < 1) throw ConfigError("TimeGrid: need steps >= 1");
}

std::vector<std::size_t> checkpoint_steps(std::size_t steps, std::size_t checkpoints) {
    std::vector<std::size_t> out;
    if (checkpoints == 0 || checkpoints > steps) {
        out.resize(steps + 1);
        for (std::size_t k = 0; k <= steps; ++k) out[k] = k;
        return out;
    }
    const std::size_t c = std::max<std::size_t>(checkpoints, 2);
    for (std::size_t i = 0; i < c; ++i)
        out.push_back(static_cast<std::size_t>(std::llround(static_cast<double>(i) * steps / (c - 1))));
    out.erase(std::unique(out.begin(), out.end()), out.end());
    return out;
}

namespace {

// Standard normals addressed by a running index; two per Philox block.
class NormalStream {
public:
    NormalStream(std::uint64_t seed, std::uint64_t stream) : rng_(seed, stream) {}
    double at(std::uint64_t q) {
        const std::uint64_t pair = q >> 1;
        if (pair != cached_) {
            cache_ = rng_.normals(static_cast<std::uint32_t>(pair), static_cast<std::uint32_t>(pair >> 32));
            cached_ = pair;
        }
        return cache_[q & 1];
    }

private:
    StreamRng rng_;
    std::uint64_t cached_ = ~0ull;
    std::array<double, 2> cache_{};
};

struct ExactAffine {
    Eigen::MatrixXd Phi;
    Eigen::VectorXd c;
    Eigen::MatrixXd L;
};

PathBundle run(const DiffusionModel& model, const TimeFieldFn* extra, std::span<const double> initial,
               const TimeGrid& grid, std::uint64_t seed, const SimulationOptions& opts) {
    grid.validate();
    const int n = model.dim();
    const int m = model.noise_dim();
    if (initial.size() % n != 0 || initial.empty()) throw ConfigError("simulate: initial points do not match dimension");
    const std::size_t P = initial.size() / n;
    if (!opts.stream_keys.empty() && opts.stream_keys.size() != P) throw ConfigError("simulate: stream key count mismatch");
    const auto& dom = model.domain();
    const bool half = dom.kind == DomainKind::half_line;
    for (std::size_t p = 0; p < P; ++p)
        if (!dom.contains(initial.subspan(p * n, n))) throw ConfigError(fmt::format("simulate: initial point {} outside the domain", p));

    PathBundle out;
    out.particles = P;
    out.dim = n;
    out.grid = grid;
    out.seed = seed;
    out.record_steps = opts.record_steps.empty() ? checkpoint_steps(grid.steps, opts.checkpoints) : opts.record_steps;
    std::sort(out.record_steps.begin(), out.record_steps.end());
    out.record_steps.erase(std::unique(out.record_steps.begin(), out.record_steps.end()), out.record_steps.end());
    if (out.record_steps.back() > grid.steps) throw ConfigError("simulate: record step beyond the grid");
    for (auto k : out.record_steps) out.times.push_back(grid.node(k));
    const std::size_t R = out.record_steps.size();
    out.positions.assign(P * R * n, 0.0);
    const FitnessFunction* g = opts.fitness;
    if (g) {
        if (g->dim() != n) throw ConfigError("simulate: fitness dimension mismatch");
        out.log_weights.assign(P * R, 0.0);
        out.shift = g->g_max();
    }

    const double dt = grid.dt();
    const double sdt = std::sqrt(dt);
    const auto* aff = model.affine_coefficients();
    const bool exact = aff && !extra && opts.scheme == Scheme::automatic;
    ExactAffine ex;
    if (exact) {
        ex.Phi = matrix_exp(aff->B, dt);
        ex.c = mean_integral(aff->B, aff->b, dt);
        const Eigen::MatrixXd S = covariance_integral(aff->B, aff->a(), dt);
        Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(S);
        ex.L = es.eigenvectors() * es.eigenvalues().cwiseMax(0.0).cwiseSqrt().asDiagonal();
        out.scheme = model.kind() == ModelKind::arithmetic_bm ? "exact-gaussian" : "exact-ou";
    } else {
        out.scheme = half ? "euler-full-truncation" : "euler-maruyama";
    }
    const int noise = exact ? n : m;
    const double phi1 = exact ? ex.Phi(0, 0) : 0.0, c1 = exact ? ex.c(0) : 0.0, l1 = exact ? ex.L(0, 0) : 0.0;

    parallel_for(P, opts.threads, [&](std::size_t begin, std::size_t end) {
        std::vector<double> x(n), xe(n), xr(n), b(n), bx(n), s(static_cast<std::size_t>(n) * m), z(noise), y(n);
        for (std::size_t p = begin; p < end; ++p) {
            NormalStream ns(seed, opts.stream_keys.empty() ? p : opts.stream_keys[p]);
            std::copy_n(initial.begin() + p * n, n, x.begin());
            auto recorded = [&](std::span<double> dst) {
                for (int j = 0; j < n; ++j) dst[j] = half ? std::max(x[j], 0.0) : x[j];
            };
            std::size_t r = 0;
            CompensatedSum L;
            double gprev = 0.0;
            if (g) {
                recorded(xr);
                gprev = (*g)(xr) - out.shift;
            }
            if (out.record_steps[0] == 0) {
                recorded(std::span<double>(out.positions.data() + (p * R) * n, n));
                r = 1;
            }
            for (std::size_t k = 0; k < grid.steps; ++k) {
                const double t = grid.node(k);
                for (int j = 0; j < noise; ++j) z[j] = ns.at(static_cast<std::uint64_t>(k) * noise + j);
                if (exact && n == 1) {
                    x[0] = phi1 * x[0] + c1 + l1 * z[0];
                } else if (exact) {
                    for (int i = 0; i < n; ++i) {
                        double v = ex.c(i);
                        for (int j = 0; j < n; ++j) v += ex.Phi(i, j) * x[j] + ex.L(i, j) * z[j];
                        y[i] = v;
                    }
                    std::copy(y.begin(), y.end(), x.begin());
                } else {
                    for (int j = 0; j < n; ++j) xe[j] = half ? std::max(x[j], 0.0) : x[j];
                    model.drift(xe, b);
                    if (extra) {
                        (*extra)(t, xe, bx);
                        for (int j = 0; j < n; ++j) b[j] += bx[j];
                    }
                    model.diffusion(xe, s);
                    for (int i = 0; i < n; ++i) {
                        double v = x[i] + b[i] * dt;
                        for (int j = 0; j < m; ++j) v += s[i * m + j] * sdt * z[j];
                        x[i] = v;
                    }
                }
                for (int j = 0; j < n; ++j)
                    if (!std::isfinite(x[j]))
                        throw NumericError(fmt::format("simulate: non-finite state for particle {} at t = {:g}", p, grid.node(k + 1)));
                if (dom.kind == DomainKind::box && !dom.contains(x))
                    throw NumericError(fmt::format("simulate: particle {} left the box domain at t = {:g}", p, grid.node(k + 1)));
                if (g) {
                    recorded(xr);
                    const double gn = (*g)(xr) - out.shift;
                    L.add(0.5 * dt * (gprev + gn));
                    gprev = gn;
                }
                if (r < R && out.record_steps[r] == k + 1) {
                    recorded(std::span<double>(out.positions.data() + (p * R + r) * n, n));
                    if (g) out.log_weights[p * R + r] = L.value();
                    ++r;
                }
            }
        }
    });
    return out;
}

} // namespace

PathBundle simulate(const DiffusionModel& model, std::span<const double> initial, const TimeGrid& grid,
                    std::uint64_t seed, const SimulationOptions& opts) {
    return run(model, nullptr, initial, grid, seed, opts);
}

PathBundle simulate(const TiltedDrift& drift, std::span<const double> initial, const TimeGrid& grid,
                    std::uint64_t seed, const SimulationOptions& opts) {
    if (!drift.extra) return run(drift.base, nullptr, initial, grid, seed, opts);
    return run(drift.base, &drift.extra, initial, grid, seed, opts);
}

PathBundle simulate_cir(const DiffusionModel& model, std::span<const double> initial, const TimeGrid& grid,
                        std::uint64_t seed, const SimulationOptions& opts) {
    if (model.kind() != ModelKind::cir) throw ConfigError("simulate_cir: CIR model required");
    require_valid(model);
    return run(model, nullptr, initial, grid, seed, opts);
}

LogWeights accumulate_log_weight(const PathBundle& paths, const FitnessFunction& g) {
    if (g.dim() != paths.dim) throw ConfigError("accumulate_log_weight: dimension mismatch");
    if (paths.record_steps.empty() || paths.record_steps.front() != 0)
        throw ConfigError("accumulate_log_weight: the first recorded node must be t0");
    LogWeights w;
    w.particles = paths.particles;
    w.records = paths.records();
    w.shift = g.g_max();
    w.values.assign(w.particles * w.records, 0.0);
    for (std::size_t p = 0; p < paths.particles; ++p) {
        CompensatedSum L;
        double prev = g(paths.position(p, 0)) - w.shift;
        for (std::size_t r = 1; r < w.records; ++r) {
            const double cur = g(paths.position(p, r)) - w.shift;
            L.add(0.5 * (paths.times[r] - paths.times[r - 1]) * (prev + cur));
            prev = cur;
            w.values[p * w.records + r] = L.value();
        }
    }
    return w;
}

} // namespace rmsolve
