#pragma once

#include <string>
#include <utility>
#include <vector>

namespace rmsolve {

// Every numeric tolerance used by engines, tests and the validate command.
struct Tolerances {
    double constant_condition = 1e-8;
    double eigen_residual_analytic = 1e-6;
    double eigen_residual_grid = 1e-3;
    double riccati_residual = 1e-10;
    double linear_v_residual = 1e-12;
    double grid_normalization = 1e-8;
    double solution_normalization = 1e-6;
    double kde_normalization = 1e-8;
    double pde_mass_leak = 1e-4;
    double pde_normalization = 1e-9;
    double pde_clip = 1e-14;
    double tilted_clip_mass = 1e-6;
    double shift_invariance = 1e-15;
    double mass_identity = 1e-15;
    double symmetric = 1e-12;
    double psd_floor = 1e-12;
    double metric_symmetry = 1e-10;
    double metric_triangle = 1e-9;
    double lp_feasibility = 1e-9;
    double compact_mass = 1e-9;
    double kummer_series = 1e-14;
    double kummer_recurrence = 1e-10;
    double schrodinger_boundary = 1e-10;
    double fd_first_step = 1e-5;
    double fd_second_step = 1e-3;

    // Multiply every tolerance by `factor` (factor 0 forces strict failure).
    Tolerances scaled(double factor) const;
    std::vector<std::pair<std::string, double>> entries() const;
};

const Tolerances& default_tolerances();

} // namespace rmsolve
