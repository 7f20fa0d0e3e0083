#pragma once

#include "rmsolve/gaussian.hpp"
#include "rmsolve/model.hpp"
#include "rmsolve/numerics.hpp"
#include "rmsolve/sde.hpp"
#include "rmsolve/tolerances.hpp"

#include <Eigen/Dense>

#include <functional>
#include <optional>
#include <string>
#include <vector>

namespace rmsolve {

struct ConstantCondition {
    double c1 = 0.0;
    Eigen::RowVectorXd c2;
};

// Either a condition or a rejection reason; rejection is not an error.
struct ConstantConditionResult {
    std::optional<ConstantCondition> condition;
    std::string reason;
    double max_dev_c1 = 0.0;
    double max_dev_c2 = 0.0;
    explicit operator bool() const { return condition.has_value(); }
};

ConstantConditionResult detect_constant_condition(const DiffusionModel& model, const FitnessFunction& g,
                                                  std::size_t probes = 32,
                                                  const Tolerances& tol = default_tolerances());

enum class EigenSource { affine_analytic, kummer, schrodinger_grid };
std::string to_string(EigenSource s);

// (A + g) phi = -lambda phi with phi > 0. Log-space accessors are what the
// tilted engine uses; phi may underflow where log_phi does not.
struct Eigenpair {
    double lambda = 0.0;
    EigenSource source = EigenSource::affine_analytic;
    ScalarFn phi;
    ScalarFn log_phi;
    FieldFn grad_phi;
    FieldFn grad_log_phi;
};

double residual_tolerance(EigenSource s, const Tolerances& tol = default_tolerances());

// Evenly spaced probes: 1D on [lo, hi]; quasi-random in [lo, hi]^n otherwise.
std::vector<double> probe_points(int dim, std::size_t count, double lo, double hi);

// max |(A + g) phi + lambda phi| / max |phi| over the probes (n x count, row-major).
double eigenpair_residual(const DiffusionModel& model, const FitnessFunction& g, const Eigenpair& pair,
                          std::span<const double> probes);

struct ClosedFormSolution {
    std::string engine;
    std::string mode;
    double horizon = 1.0;
    double shift = 0.0;  // g_max of the fitness used
    std::function<double(double, std::span<const double>)> density;
    std::function<double(double)> mass_factor;             // unshifted h_t
    std::function<double(double)> mass_standard_error;     // Monte Carlo engines only
    std::function<GaussianMixture(double)> gaussian_law;   // Gaussian engines only
    std::optional<Eigenpair> eigenpair;
    std::vector<double> times;            // stored times for Monte Carlo engines
    std::vector<GridDensity> grids;       // 1D densities at `times`
    std::vector<std::string> notes;

    double density1(double t, double x) const { return density(t, std::span<const double>(&x, 1)); }
    double shifted_mass_factor(double t) const;
    // u(t, .) on [lo, hi]; stored grids are interpolated for Monte Carlo engines.
    GridDensity on_grid(double t, double lo, double hi, std::size_t nodes) const;
};

double mass_factor(const ClosedFormSolution& sol, double t);

// Constant-coefficient model, linear fitness.
ClosedFormSolution linear_engine(const DiffusionModel& model, const FitnessFunction& g, const InitialLaw& u0,
                                 double horizon = 1.0);

struct RiccatiResult {
    Eigen::MatrixXd H;
    Eigen::MatrixXd Gamma;
    double residual = 0.0;
    int iterations = 0;
};
// Stabilizing solution of 2HaH - B^T H - H B - G = 0 by Newton-Kleinman.
RiccatiResult solve_riccati(const Eigen::MatrixXd& a, const Eigen::MatrixXd& B, const Eigen::MatrixXd& G,
                            const Tolerances& tol = default_tolerances());
// Solves 2Hav - B^T v - 2Hb - delta = 0.
Eigen::VectorXd solve_linear_v(const Eigen::MatrixXd& H, const Eigen::MatrixXd& a, const Eigen::MatrixXd& B,
                               const Eigen::VectorXd& b, const Eigen::VectorXd& delta,
                               const Tolerances& tol = default_tolerances());
// Eigenpair phi = exp(-v^T x - x^T H x) of an affine model with quadratic fitness.
Eigenpair affine_eigenpair(const Eigen::MatrixXd& H, const Eigen::VectorXd& v, double lambda);

// Affine model, fitness -(alpha + delta^T x + x^T G x). Falls back to the
// augmented-state Gaussian computation when G = 0 and no stabilizing Riccati
// solution exists (mode "degenerate").
ClosedFormSolution affine_engine(const DiffusionModel& model, const FitnessFunction& g, const InitialLaw& u0,
                                 double horizon = 1.0, const Tolerances& tol = default_tolerances());

struct TiltedEngineOptions {
    std::size_t paths = 100000;
    std::uint64_t seed = 1;
    std::vector<double> times{1.0};
    std::size_t steps_per_unit = 400;
    int threads = 1;
    KdeOptions kde;
    std::size_t init_nodes = 8192;
    std::size_t probes = 64;
    std::pair<double, double> probe_range{-3.0, 3.0};
    bool check_residual = true;
};

// Semi-analytic Monte Carlo engine: simulate the eigenfunction-tilted SDE,
// estimate its law by KDE and undo the tilt. 1D models only.
ClosedFormSolution tilted_engine(const DiffusionModel& model, const FitnessFunction& g, const Eigenpair& pair,
                                 const InitialLaw& u0, const TiltedEngineOptions& opts = {},
                                 const Tolerances& tol = default_tolerances());

} // namespace rmsolve
