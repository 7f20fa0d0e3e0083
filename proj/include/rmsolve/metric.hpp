#pragma once

#include "rmsolve/closed_form.hpp"
#include "rmsolve/particle.hpp"

#include <algorithm>
#include <cmath>
#include <functional>
#include <optional>
#include <span>
#include <string>
#include <vector>

namespace rmsolve {

// d*(x, y) = min(|x - y|, l(x) + l(y)), d*(x, star) = l(x), l(x) = 1/(1 + |x - x0|).
struct StarMetric {
    double x0 = 0.0;
    double l(double x) const { return 1.0 / (1.0 + std::abs(x - x0)); }
    double operator()(double x, double y) const { return x == y ? 0.0 : std::min(std::abs(x - y), l(x) + l(y)); }
};
// nullopt is the point at infinity.
double dstar(std::optional<double> p, std::optional<double> q, const StarMetric& m = {});

// Sub-probability measure on D with the deficit placed on the star point.
// Atoms are sorted and distinct.
struct CompactifiedMeasure {
    std::vector<double> atoms;
    std::vector<double> masses;
    double star_mass = 1.0;
    double clamped = 0.0;  // excess above 1 (within tolerance) removed from the star mass

    double total() const;  // mass on D
};

CompactifiedMeasure compactify(std::span<const double> atoms, std::span<const double> masses);
CompactifiedMeasure compactify(const EmpiricalMeasure& m);

struct Binning {
    double lo = -10.0, hi = 10.0;
    std::size_t cells = 1024;

    double width() const { return (hi - lo) / static_cast<double>(cells); }
    double mid(std::size_t i) const { return lo + (static_cast<double>(i) + 0.5) * width(); }
};

// density * total_mass integrated per cell (trapezoid), placed at cell midpoints.
CompactifiedMeasure discretize(const std::function<double(double)>& density, double total_mass, const Binning& b);

// Weight-preserving binning to cell midpoints; atoms outside the window are
// kept as they are. error = sum of mass * displacement (a W1 bound).
struct BinnedMeasure {
    CompactifiedMeasure measure;
    double error = 0.0;
};
BinnedMeasure bin(const CompactifiedMeasure& m, const Binning& b);

struct BlResult {
    double value = 0.0;        // certified lower bound; equals the optimum at termination
    double upper_bound = 0.0;  // Kelley envelope bound
    double s = 0.0, ell = 0.0;
    std::vector<double> support;  // merged atoms with nonzero mass difference
    std::vector<double> delta;    // mu - nu on the support
    double delta_star = 0.0;
    std::vector<double> psi;      // certifying test function on the support
    double psi_star = 0.0;
    std::size_t evaluations = 0;
    std::size_t pivots = 0;
};

// Bounded-Lipschitz distance: max sum psi (mu - nu) over |psi| <= s,
// |psi_j - psi_k| <= ell d*(x_j, x_k), s + ell <= 1.
BlResult bl_distance(const CompactifiedMeasure& mu, const CompactifiedMeasure& nu, const StarMetric& m = {});
// Same LP written with every pairwise constraint, dense simplex. Small supports only.
BlResult bl_distance_dense(const CompactifiedMeasure& mu, const CompactifiedMeasure& nu, const StarMetric& m = {});

// Largest violation of the LP constraints by the certificate (all pairs).
double certificate_violation(const BlResult& r, const StarMetric& m = {});
double certificate_objective(const BlResult& r);

// W1 between 1D measures of equal mass by a CDF sweep.
double wasserstein1_1d(std::span<const double> atoms_a, std::span<const double> masses_a,
                       std::span<const double> atoms_b, std::span<const double> masses_b);
// W1 between an atomic probability measure and a CDF, on a grid over [lo, hi].
double wasserstein1_to_cdf(std::span<const double> atoms, std::span<const double> masses,
                           const std::function<double(double)>& cdf, double lo, double hi, std::size_t nodes);

using ReferenceFn = std::function<CompactifiedMeasure(double t)>;
// u(t, .) times the shifted mass factor, discretized on the binning cells.
ReferenceFn closed_form_reference(const ClosedFormSolution& sol, const Binning& b);

struct DqtOptions {
    std::size_t reps = 20;
    double q = 2.0;
    std::uint64_t seed = 1;
    TimeGrid grid{0.0, 1.0, 400};
    std::size_t checkpoints = 32;
    Binning binning;
    std::size_t bootstrap = 1000;
    int threads = 1;
    StarMetric metric;
};

struct DqtResult {
    std::size_t N = 0;
    double value = 0.0;
    double ci_low = 0.0, ci_high = 0.0;
    std::vector<double> sups;  // checkpoint sup of d_BL per replication
    double max_binning_error = 0.0;
    std::size_t lp_solves = 0;
};

// (E[max over checkpoints d_BL(empirical tilted, reference)^q])^{1/q} with a
// percentile bootstrap CI over replications.
DqtResult dqt_estimate(const DiffusionModel& model, const FitnessFunction& g, const InitialLaw& rho0,
                       const ReferenceFn& reference, std::size_t N, const DqtOptions& opts);

struct RateStudy {
    std::vector<DqtResult> rows;
    double slope = 0.0;
    double intercept = 0.0;
    double slope_ci_low = 0.0, slope_ci_high = 0.0;  // bootstrap over replications
    bool reliable = true;       // false with a single replication (no bootstrap spread)
    std::size_t inversions = 0; // N steps where D increased
    std::string csv() const;    // N,D,ci_lo,ci_hi
};
RateStudy rate_study(const DiffusionModel& model, const FitnessFunction& g, const InitialLaw& rho0,
                     const ReferenceFn& reference, std::span<const std::size_t> Ns, const DqtOptions& opts);
// Least-squares slope of log y against log x.
std::pair<double, double> loglog_fit(std::span<const double> x, std::span<const double> y);

} // namespace rmsolve
