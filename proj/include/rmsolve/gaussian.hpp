#pragma once

#include <Eigen/Dense>

#include <span>
#include <vector>

namespace rmsolve {

// Weighted Gaussian N(mean, cov) with weight exp(log_weight). A zero
// covariance encodes a point mass.
struct GaussianComponent {
    double log_weight = 0.0;
    Eigen::VectorXd mean;
    Eigen::MatrixXd cov;
};

class GaussianMixture {
public:
    std::vector<GaussianComponent> components;

    GaussianMixture() = default;
    explicit GaussianMixture(std::vector<GaussianComponent> c) : components(std::move(c)) {}

    int dim() const;
    double log_total() const;
    // Unnormalized density sum_k w_k N(x; m_k, S_k). Requires SPD covariances.
    double density(std::span<const double> x) const;
    GaussianMixture normalized() const;
    Eigen::VectorXd mean() const;
    Eigen::MatrixXd covariance() const;

    // Multiplies each component by exp(l^T x - x^T Q x) and integrates the
    // factor into the weights. Works for singular covariances; throws
    // NumericError when an integral diverges.
    GaussianMixture multiply_exp_quadratic(const Eigen::VectorXd& l, const Eigen::MatrixXd& Q) const;
    // Pushes every component through x -> M x + c, then adds covariance `extra`.
    GaussianMixture affine_map(const Eigen::MatrixXd& M, const Eigen::VectorXd& c,
                               const Eigen::MatrixXd& extra) const;
};

double gaussian_log_density(std::span<const double> x, const Eigen::VectorXd& mean, const Eigen::MatrixXd& cov);

} // namespace rmsolve
