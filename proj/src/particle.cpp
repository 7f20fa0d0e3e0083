#include "rmsolve/particle.hpp"

#include "rmsolve/errors.hpp"
#include "rmsolve/numerics.hpp"
#include "rmsolve/parallel.hpp"
#include "rmsolve/rng.hpp"

#include <fmt/format.h>

#include <algorithm>
#include <cmath>

namespace rmsolve {

std::size_t WeightedParticleEnsemble::record_of(double t) const {
    for (std::size_t r = 0; r < paths.times.size(); ++r)
        if (std::abs(paths.times[r] - t) <= 1e-9 * (1.0 + std::abs(t))) return r;
    throw ConfigError(fmt::format("particle ensemble: time {:g} is not a stored checkpoint", t));
}

WeightedParticleEnsemble run_particles(const DiffusionModel& model, const FitnessFunction& g, const InitialLaw& rho0,
                                       std::size_t N, const TimeGrid& grid, std::uint64_t seed,
                                       const ParticleOptions& opts) {
    if (N == 0) throw ConfigError("run_particles: N must be positive");
    if (g.dim() != model.dim() || rho0.dim() != model.dim()) throw ConfigError("run_particles: dimension mismatch");
    require_valid(model);
    std::vector<double> x0 = sample_initial(rho0, N, derive_seed(seed, "initial"), &model.domain());
    if (!opts.stream_keys.empty()) {
        if (opts.stream_keys.size() != N) throw ConfigError("run_particles: stream_keys must have N entries");
        const int n = model.dim();
        std::vector<double> perm(x0.size());
        for (std::size_t i = 0; i < N; ++i) {
            if (opts.stream_keys[i] >= N) throw ConfigError("run_particles: stream_keys must be a permutation of 0..N-1");
            std::copy_n(x0.begin() + opts.stream_keys[i] * n, n, perm.begin() + i * n);
        }
        x0 = std::move(perm);
    }
    SimulationOptions so;
    so.fitness = &g;
    so.checkpoints = opts.checkpoints;
    so.record_steps = opts.record_steps;
    so.threads = opts.threads;
    so.stream_keys = opts.stream_keys;
    so.scheme = opts.scheme;
    const std::uint64_t s = derive_seed(seed, "paths");
    WeightedParticleEnsemble e;
    e.paths = model.kind() == ModelKind::cir ? simulate_cir(model, x0, grid, s, so) : simulate(model, x0, grid, s, so);
    return e;
}

double EmpiricalMeasure::total() const { return pairwise_sum(masses); }

namespace {

std::vector<double> log_weights_at(const WeightedParticleEnsemble& e, std::size_t r) {
    std::vector<double> lw(e.size());
    for (std::size_t p = 0; p < e.size(); ++p) lw[p] = e.paths.log_weight(p, r);
    return lw;
}

EmpiricalMeasure atoms_at(const WeightedParticleEnsemble& e, std::size_t r, MeasureKind kind) {
    EmpiricalMeasure m;
    m.dim = e.dim();
    m.kind = kind;
    m.atoms.resize(e.size() * e.dim());
    for (std::size_t p = 0; p < e.size(); ++p) {
        const auto x = e.paths.position(p, r);
        std::copy(x.begin(), x.end(), m.atoms.begin() + p * e.dim());
    }
    return m;
}

} // namespace

EmpiricalMeasure normalized_measure(const WeightedParticleEnsemble& e, double t) {
    const std::size_t r = e.record_of(t);
    const auto lw = log_weights_at(e, r);
    const double lse = log_sum_exp(lw);
    if (!std::isfinite(lse))
        throw NumericError(fmt::format("normalized_measure: all weights underflow at t = {:g}; shorten the horizon", t));
    EmpiricalMeasure m = atoms_at(e, r, MeasureKind::normalized);
    m.masses.resize(lw.size());
    for (std::size_t p = 0; p < lw.size(); ++p) m.masses[p] = std::exp(lw[p] - lse);
    return m;
}

EmpiricalMeasure tilted_measure(const WeightedParticleEnsemble& e, double t) {
    const std::size_t r = e.record_of(t);
    const auto lw = log_weights_at(e, r);
    EmpiricalMeasure m = atoms_at(e, r, MeasureKind::tilted);
    m.masses.resize(lw.size());
    const double inv = 1.0 / static_cast<double>(lw.size());
    for (std::size_t p = 0; p < lw.size(); ++p) m.masses[p] = std::exp(lw[p]) * inv;
    return m;
}

double mass_estimate(const WeightedParticleEnsemble& e, double t) {
    auto w = log_weights_at(e, e.record_of(t));
    for (double& v : w) v = std::exp(v);
    return pairwise_sum(w) / static_cast<double>(w.size());
}

double mass_standard_error(const WeightedParticleEnsemble& e, double t) {
    auto w = log_weights_at(e, e.record_of(t));
    if (w.size() < 2) return 0.0;
    for (double& v : w) v = std::exp(v);
    const double mean = pairwise_sum(w) / static_cast<double>(w.size());
    for (double& v : w) v = (v - mean) * (v - mean);
    return std::sqrt(pairwise_sum(w) / static_cast<double>(w.size() - 1) / static_cast<double>(w.size()));
}

WeightedMoments weighted_moments(const WeightedParticleEnsemble& e, double t) {
    const EmpiricalMeasure m = normalized_measure(e, t);
    const int n = m.dim;
    WeightedMoments out;
    out.mean = Eigen::VectorXd::Zero(n);
    Eigen::VectorXd var = Eigen::VectorXd::Zero(n);
    double w2 = 0.0;
    for (std::size_t p = 0; p < m.size(); ++p) {
        for (int j = 0; j < n; ++j) out.mean(j) += m.masses[p] * m.atoms[p * n + j];
        w2 += m.masses[p] * m.masses[p];
    }
    for (std::size_t p = 0; p < m.size(); ++p)
        for (int j = 0; j < n; ++j) var(j) += m.masses[p] * m.masses[p] * std::pow(m.atoms[p * n + j] - out.mean(j), 2);
    out.standard_error = var.cwiseSqrt();
    out.effective_sample_size = 1.0 / w2;
    return out;
}

std::string ensemble_csv(const WeightedParticleEnsemble& e) {
    std::string out = "particle,t";
    for (int j = 0; j < e.dim(); ++j) out += fmt::format(",x{}", j);
    out += ",logw\n";
    for (std::size_t p = 0; p < e.size(); ++p)
        for (std::size_t r = 0; r < e.paths.records(); ++r) {
            out += fmt::format("{},{:.17g}", p, e.paths.times[r]);
            for (double x : e.paths.position(p, r)) out += fmt::format(",{:.17g}", x);
            out += fmt::format(",{:.17g}\n", e.paths.log_weight(p, r));
        }
    return out;
}

} // namespace rmsolve
