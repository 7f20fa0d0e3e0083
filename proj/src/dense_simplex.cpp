#include "rmsolve/dense_simplex.hpp"

#include "rmsolve/errors.hpp"

#include <cmath>
#include <vector>

namespace rmsolve {

namespace {

bool run_tableau(const Eigen::MatrixXd& A, const Eigen::VectorXd& b, const Eigen::VectorXd& c, std::size_t cap,
                 LpResult& out) {
    const Eigen::Index m = A.rows(), n = A.cols();
    // rows 0..m-1: constraints; row m: objective (reduced costs, negated)
    Eigen::MatrixXd T = Eigen::MatrixXd::Zero(m + 1, n + m + 1);
    T.topLeftCorner(m, n) = A;
    T.block(0, n, m, m).setIdentity();
    T.col(n + m).head(m) = b;
    T.row(m).head(n) = -c.transpose();
    std::vector<Eigen::Index> basis(m);
    for (Eigen::Index i = 0; i < m; ++i) basis[i] = n + i;
    const double eps = 1e-9;
    for (out.iterations = 0; out.iterations < cap; ++out.iterations) {
        Eigen::Index enter = -1;
        for (Eigen::Index j = 0; j < n + m; ++j)
            if (T(m, j) < -eps) {
                enter = j;
                break;
            }
        if (enter < 0) {
            out.x = Eigen::VectorXd::Zero(n);
            for (Eigen::Index i = 0; i < m; ++i)
                if (basis[i] < n) out.x(basis[i]) = T(i, n + m);
            out.objective = T(m, n + m);
            return true;
        }
        Eigen::Index leave = -1;
        double best = 0.0;
        for (Eigen::Index i = 0; i < m; ++i) {
            const double col = T(i, enter);
            if (col <= eps) continue;
            const double r = T(i, n + m) / col;
            if (leave < 0 || r < best || (r == best && basis[i] < basis[leave])) {
                leave = i;
                best = r;
            }
        }
        if (leave < 0) throw NumericError("dense_simplex: unbounded LP");
        const double piv = T(leave, enter);
        T.row(leave) *= 1.0 / piv;
        T(leave, enter) = 1.0;
        for (Eigen::Index i = 0; i <= m; ++i) {
            if (i == leave) continue;
            const double f = T(i, enter);
            if (f == 0.0) continue;
            T.row(i) -= f * T.row(leave);
            T(i, enter) = 0.0;
        }
        basis[leave] = enter;
    }
    return false;
}

} // namespace

LpResult dense_simplex(const Eigen::MatrixXd& A, const Eigen::VectorXd& b, const Eigen::VectorXd& c,
                       std::size_t max_iterations) {
    if (A.rows() != b.size() || A.cols() != c.size()) throw ConfigError("dense_simplex: inconsistent shapes");
    if ((b.array() < 0.0).any()) throw ConfigError("dense_simplex: b must be nonnegative");
    const std::size_t cap = max_iterations ? max_iterations : 50 * static_cast<std::size_t>(A.rows() + A.cols()) + 100;
    LpResult out;
    if (run_tableau(A, b, c, cap, out)) return out;
    // cycling guard: perturb the right-hand side and retry once
    Eigen::VectorXd bp = b;
    for (Eigen::Index i = 0; i < bp.size(); ++i) bp(i) += 1e-11 * std::ldexp(1.0, -static_cast<int>(i % 30));
    out.perturbed = true;
    if (run_tableau(A, bp, c, cap, out)) return out;
    throw NumericError("dense_simplex: iteration limit reached after perturbation restart");
}

} // namespace rmsolve
