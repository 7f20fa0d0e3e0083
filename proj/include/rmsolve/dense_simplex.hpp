#pragma once

#include <Eigen/Dense>

#include <cstddef>

namespace rmsolve {

struct LpResult {
    Eigen::VectorXd x;
    double objective = 0.0;
    std::size_t iterations = 0;
    bool perturbed = false;
};

// max c^T x  s.t.  A x <= b, x >= 0, with b >= 0 (the origin is feasible).
// Dense tableau simplex with Bland's rule; on hitting the iteration guard the
// right-hand side is perturbed once and the solve restarted.
LpResult dense_simplex(const Eigen::MatrixXd& A, const Eigen::VectorXd& b, const Eigen::VectorXd& c,
                       std::size_t max_iterations = 0);

} // namespace rmsolve
