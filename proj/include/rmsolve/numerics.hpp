#pragma once

#include <Eigen/Dense>

#include <cstddef>
#include <functional>
#include <optional>
#include <span>
#include <string>
#include <utility>
#include <vector>

namespace rmsolve {

std::vector<double> linspace(double lo, double hi, std::size_t n);

// Trapezoid rule on (possibly nonuniform) nodes. NaN in f aborts with NumericError.
double trapezoid(std::span<const double> x, std::span<const double> f);
double integrate(const std::function<double(double)>& f, double lo, double hi, std::size_t nodes);

// 1D density tabulated on strictly increasing nodes; linear interpolation,
// zero outside the grid.
struct GridDensity {
    std::vector<double> x;
    std::vector<double> values;
    bool normalized = false;

    GridDensity() = default;
    GridDensity(std::vector<double> nodes, std::vector<double> vals);
    static GridDensity tabulate(double lo, double hi, std::size_t n,
                                const std::function<double(double)>& f);

    std::size_t size() const { return x.size(); }
    double lo() const { return x.front(); }
    double hi() const { return x.back(); }
    double operator()(double at) const;
    double integral() const;
    double mean() const;
    double variance() const;
    // Scales to unit trapezoid mass; throws NumericError on zero mass.
    void normalize();
    // Checks grid ordering and nonnegativity; throws ConfigError.
    void validate() const;
    std::string to_csv() const;
};

// Probabilists' Gauss-Hermite rule: sum w_i f(x_i) ~ E f(Z), Z ~ N(0,1).
struct GaussHermiteRule {
    std::vector<double> nodes;
    std::vector<double> weights;
};
GaussHermiteRule gauss_hermite(int order);
double expect_normal(const std::function<double(double)>& f, double mean, double sd, int order = 64);

struct GaussianMoments {
    Eigen::VectorXd mean;
    Eigen::MatrixXd cov;
    // Symmetry and PSD checks within the given tolerance.
    bool valid(double tol = 1e-12) const;
};

// e^{A t}, scaling and squaring with a Pade core.
Eigen::MatrixXd matrix_exp(const Eigen::MatrixXd& A, double t);
// Sigma_t = int_0^t e^{G(t-s)} a e^{G^T(t-s)} ds (van Loan block exponential).
Eigen::MatrixXd covariance_integral(const Eigen::MatrixXd& G, const Eigen::MatrixXd& a, double t);
// int_0^t e^{G(t-s)} beta ds.
Eigen::VectorXd mean_integral(const Eigen::MatrixXd& G, const Eigen::VectorXd& beta, double t);

struct KdeOptions {
    double bandwidth = 0.0;     // <= 0 selects Silverman's rule on N_eff
    std::size_t nodes = 1024;
    double pad = 4.0;           // grid extends pad*h beyond the data
    double truncation = 8.0;    // kernel cut at truncation*h
    std::optional<double> lower_bound;            // reflect at this boundary
    std::optional<std::pair<double, double>> range; // fixed grid instead of auto
};

double effective_sample_size(std::span<const double> weights);
double silverman_bandwidth(std::span<const double> points, std::span<const double> weights);

// Weighted Gaussian KDE; empty weights mean uniform. Output normalized.
GridDensity kde(std::span<const double> points, std::span<const double> weights,
                const KdeOptions& opts = {});

double l1_distance(const GridDensity& a, const GridDensity& b, std::size_t nodes = 8192);
double l1_distance(const GridDensity& a, const std::function<double(double)>& f, std::size_t nodes = 8192);

double log_sum_exp(std::span<const double> v);

} // namespace rmsolve
