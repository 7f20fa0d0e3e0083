#pragma once

#include "rmsolve/model.hpp"
#include "rmsolve/sde.hpp"

#include <string>
#include <vector>

namespace rmsolve {

struct ParticleOptions {
    std::size_t checkpoints = 32;
    std::vector<std::size_t> record_steps;   // overrides checkpoints
    int threads = 1;
    // Optional permutation of 0..N-1: particle i uses stream and initial draw keys[i].
    std::vector<std::uint64_t> stream_keys;
    Scheme scheme = Scheme::automatic;
};

// N independent weighted paths. Log-weights are int_0^t (g - g_max) ds.
struct WeightedParticleEnsemble {
    PathBundle paths;

    std::size_t size() const { return paths.particles; }
    int dim() const { return paths.dim; }
    double shift() const { return paths.shift; }
    const std::vector<double>& times() const { return paths.times; }
    // Record index of a stored time; ConfigError when t is not stored.
    std::size_t record_of(double t) const;
};

WeightedParticleEnsemble run_particles(const DiffusionModel& model, const FitnessFunction& g, const InitialLaw& rho0,
                                       std::size_t N, const TimeGrid& grid, std::uint64_t seed,
                                       const ParticleOptions& opts = {});

enum class MeasureKind { normalized, tilted };

struct EmpiricalMeasure {
    int dim = 1;
    std::vector<double> atoms;   // [atom][dim]
    std::vector<double> masses;
    MeasureKind kind = MeasureKind::normalized;

    std::size_t size() const { return masses.size(); }
    double total() const;
};

EmpiricalMeasure normalized_measure(const WeightedParticleEnsemble& e, double t);
EmpiricalMeasure tilted_measure(const WeightedParticleEnsemble& e, double t);
// (1/N) sum exp(L_i(t)): estimator of the shifted mass factor.
double mass_estimate(const WeightedParticleEnsemble& e, double t);
double mass_standard_error(const WeightedParticleEnsemble& e, double t);

struct WeightedMoments {
    Eigen::VectorXd mean;
    Eigen::VectorXd standard_error;  // delta-method SE of the self-normalized mean
    double effective_sample_size = 0.0;
};
WeightedMoments weighted_moments(const WeightedParticleEnsemble& e, double t);

// "particle,t,x0[,x1..],logw" rows at the stored times.
std::string ensemble_csv(const WeightedParticleEnsemble& e);

} // namespace rmsolve
