#pragma once

#include "rmsolve/model.hpp"
#include "rmsolve/numerics.hpp"

#include <functional>
#include <span>
#include <string>
#include <vector>

namespace rmsolve {

enum class Splitting { lie, strang };

// Cell-centred finite volumes on [lo, hi]. Full-space models use
// Dirichlet-zero ends; half-line models put a zero-flux wall at lo = 0.
struct PdeScheme {
    double lo = -12.0, hi = 12.0;
    std::size_t cells = 2048;
    double dt = 1e-3;
    Splitting splitting = Splitting::strang;
    std::vector<double> times{1.0};  // stored times (must sit on the step grid)
};

// Smooth test function with its derivatives, for the weak-form audit.
struct TestFunction {
    std::function<double(double)> f, df, d2f;
};
// C-infinity bumps exp(-1/(1 - ((x - c)/r)^2)) supported in (c - r, c + r).
std::vector<TestFunction> bump_test_functions(std::span<const double> centers, double radius);

struct PdeTrajectory {
    std::vector<double> times;
    std::vector<GridDensity> densities;  // cell centres plus boundary nodes
    double mass_leak = 0.0;              // total mass lost through the boundary before renormalization
    double max_normalization_error = 0.0;
    std::size_t negative_clips = 0;      // values below -1e-14 clipped to zero
    double min_clipped = 0.0;            // most negative value seen before clipping
    std::size_t upwind_interfaces = 0;   // interfaces advected by upwinding (cell Peclet > 2)
    std::size_t steps = 0;
    double runtime_seconds = 0.0;
    std::vector<double> weak_residuals;  // |residual| per test function at the final time

    const GridDensity& at(double t) const;
    std::string to_csv() const;        // t,x,u
    std::string summary_json() const;  // mass leak, steps, runtime
};

// Replicator-mutator PDE  u_t = A* u + (g - <g, u>) u  in one dimension.
PdeTrajectory solve_rm_pde(const DiffusionModel& model, const FitnessFunction& g, const InitialLaw& u0,
                           const PdeScheme& scheme, const std::vector<TestFunction>& tests = {},
                           double leak_limit = 1e-4);

// <u(t), g> at every stored time.
std::vector<double> fitness_mean_trace(const PdeTrajectory& traj, const FitnessFunction& g);

} // namespace rmsolve
