#pragma once

#include "rmsolve/model.hpp"

#include <cstdint>
#include <functional>
#include <span>
#include <string>
#include <vector>

namespace rmsolve {

struct TimeGrid {
    double t0 = 0.0;
    double T = 1.0;
    std::size_t steps = 400;

    static TimeGrid per_unit(double T, std::size_t steps_per_unit = 400, double t0 = 0.0);
    double dt() const { return (T - t0) / static_cast<double>(steps); }
    double node(std::size_t k) const { return k == steps ? T : t0 + dt() * static_cast<double>(k); }
    void validate() const;
};

using TimeFieldFn = std::function<void(double, std::span<const double>, std::span<double>)>;

// Base model plus an extra, possibly time-dependent, drift term.
struct TiltedDrift {
    DiffusionModel base;
    TimeFieldFn extra;
};

enum class Scheme { automatic, euler };

struct SimulationOptions {
    const FitnessFunction* fitness = nullptr;  // accumulate shifted log-weights inline
    std::size_t checkpoints = 0;               // 0 records every node
    std::vector<std::size_t> record_steps;     // explicit node list (overrides checkpoints)
    int threads = 1;
    std::vector<std::uint64_t> stream_keys;    // RNG stream per particle; default is the index
    Scheme scheme = Scheme::automatic;
};

struct PathBundle {
    std::size_t particles = 0;
    int dim = 1;
    TimeGrid grid;
    std::vector<std::size_t> record_steps;
    std::vector<double> times;
    std::vector<double> positions;    // [particle][record][dim]
    std::vector<double> log_weights;  // [particle][record], shifted; empty without fitness
    double shift = 0.0;
    std::uint64_t seed = 0;
    std::string scheme;

    std::size_t records() const { return record_steps.size(); }
    std::span<const double> position(std::size_t p, std::size_t r) const {
        return {positions.data() + (p * records() + r) * dim, static_cast<std::size_t>(dim)};
    }
    double log_weight(std::size_t p, std::size_t r) const { return log_weights[p * records() + r]; }
};

std::vector<std::size_t> checkpoint_steps(std::size_t steps, std::size_t checkpoints);

PathBundle simulate(const DiffusionModel& model, std::span<const double> initial, const TimeGrid& grid,
                    std::uint64_t seed, const SimulationOptions& opts = {});
PathBundle simulate(const TiltedDrift& drift, std::span<const double> initial, const TimeGrid& grid,
                    std::uint64_t seed, const SimulationOptions& opts = {});
// Full-truncation Euler for CIR; rejects models failing the Feller condition.
PathBundle simulate_cir(const DiffusionModel& model, std::span<const double> initial, const TimeGrid& grid,
                        std::uint64_t seed, const SimulationOptions& opts = {});

struct LogWeights {
    std::size_t particles = 0, records = 0;
    std::vector<double> values;  // shifted, [particle][record]
    double shift = 0.0;
    // Unshifted integral: shifted value + shift * (t - t0).
    double unshifted(std::size_t p, std::size_t r, const PathBundle& paths) const {
        return values[p * records + r] + shift * (paths.times[r] - paths.grid.t0);
    }
};

// Trapezoid of s -> g(X_s) - g_max over the recorded nodes of each path.
LogWeights accumulate_log_weight(const PathBundle& paths, const FitnessFunction& g);

} // namespace rmsolve
