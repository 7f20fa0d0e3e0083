#include "rmsolve/gaussian.hpp"

#include "rmsolve/errors.hpp"
#include "rmsolve/numerics.hpp"

#include <cmath>
#include <limits>
#include <numbers>

namespace rmsolve {

int GaussianMixture::dim() const {
    return components.empty() ? 0 : static_cast<int>(components.front().mean.size());
}

double GaussianMixture::log_total() const {
    std::vector<double> lw;
    lw.reserve(components.size());
    for (const auto& c : components) lw.push_back(c.log_weight);
    return log_sum_exp(lw);
}

double gaussian_log_density(std::span<const double> x, const Eigen::VectorXd& mean, const Eigen::MatrixXd& cov) {
    const Eigen::Index n = mean.size();
    Eigen::LLT<Eigen::MatrixXd> llt(cov);
    if (llt.info() != Eigen::Success) throw NumericError("gaussian_log_density: covariance not positive definite");
    Eigen::VectorXd d(n);
    for (Eigen::Index i = 0; i < n; ++i) d(i) = x[i] - mean(i);
    const Eigen::VectorXd z = llt.matrixL().solve(d);
    double logdet = 0.0;
    for (Eigen::Index i = 0; i < n; ++i) logdet += 2.0 * std::log(llt.matrixL()(i, i));
    return -0.5 * (z.squaredNorm() + logdet + n * std::log(2.0 * std::numbers::pi));
}

double GaussianMixture::density(std::span<const double> x) const {
    double s = 0.0;
    for (const auto& c : components) s += std::exp(c.log_weight + gaussian_log_density(x, c.mean, c.cov));
    return s;
}

GaussianMixture GaussianMixture::normalized() const {
    GaussianMixture out = *this;
    const double lt = log_total();
    if (!std::isfinite(lt)) throw NumericError("GaussianMixture: non-finite total weight");
    for (auto& c : out.components) c.log_weight -= lt;
    return out;
}

Eigen::VectorXd GaussianMixture::mean() const {
    const double lt = log_total();
    Eigen::VectorXd m = Eigen::VectorXd::Zero(dim());
    for (const auto& c : components) m += std::exp(c.log_weight - lt) * c.mean;
    return m;
}

Eigen::MatrixXd GaussianMixture::covariance() const {
    const double lt = log_total();
    const Eigen::VectorXd mu = mean();
    Eigen::MatrixXd S = Eigen::MatrixXd::Zero(dim(), dim());
    for (const auto& c : components) {
        const Eigen::VectorXd d = c.mean - mu;
        S += std::exp(c.log_weight - lt) * (c.cov + d * d.transpose());
    }
    return S;
}

GaussianMixture GaussianMixture::multiply_exp_quadratic(const Eigen::VectorXd& l, const Eigen::MatrixXd& Q) const {
    GaussianMixture out;
    out.components.reserve(components.size());
    for (const auto& c : components) {
        const Eigen::Index n = c.mean.size();
        const Eigen::MatrixXd M = Eigen::MatrixXd::Identity(n, n) + 2.0 * c.cov * Q;
        Eigen::PartialPivLU<Eigen::MatrixXd> lu(M);
        const double det = lu.determinant();
        if (!(det > 0.0) || !std::isfinite(det))
            throw NumericError("multiply_exp_quadratic: divergent Gaussian integral (horizon exceeded)");
        const Eigen::VectorXd k = l - 2.0 * Q * c.mean;
        Eigen::MatrixXd S = lu.solve(c.cov);
        S = 0.5 * (S + S.transpose());
        Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(S);
        if (es.eigenvalues().minCoeff() < -1e-12 * (1.0 + S.norm()))
            throw NumericError("multiply_exp_quadratic: covariance lost positivity (horizon exceeded)");
        const Eigen::VectorXd Sk = S * k;
        GaussianComponent r;
        r.log_weight = c.log_weight + l.dot(c.mean) - c.mean.dot(Q * c.mean) - 0.5 * std::log(det) + 0.5 * k.dot(Sk);
        r.mean = c.mean + Sk;
        r.cov = S;
        if (!std::isfinite(r.log_weight)) throw NumericError("multiply_exp_quadratic: weight overflow");
        out.components.push_back(std::move(r));
    }
    return out;
}

GaussianMixture GaussianMixture::affine_map(const Eigen::MatrixXd& M, const Eigen::VectorXd& c,
                                            const Eigen::MatrixXd& extra) const {
    GaussianMixture out = *this;
    for (auto& comp : out.components) {
        comp.mean = M * comp.mean + c;
        Eigen::MatrixXd S = M * comp.cov * M.transpose() + extra;
        comp.cov = 0.5 * (S + S.transpose());
    }
    return out;
}

} // namespace rmsolve
