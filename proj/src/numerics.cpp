#include "rmsolve/numerics.hpp"

#include "rmsolve/errors.hpp"

#include <unsupported/Eigen/MatrixFunctions>

#include <algorithm>
#include <cmath>
#include <limits>
#include <numbers>
#include <numeric>
#include <sstream>

namespace rmsolve {

std::vector<double> linspace(double lo, double hi, std::size_t n) {
    if (n < 2) throw ConfigError("linspace needs at least 2 nodes");
    std::vector<double> x(n);
    const double h = (hi - lo) / static_cast<double>(n - 1);
    for (std::size_t i = 0; i < n; ++i) x[i] = lo + h * static_cast<double>(i);
    x.back() = hi;
    return x;
}

double trapezoid(std::span<const double> x, std::span<const double> f) {
    if (x.size() != f.size() || x.size() < 2) throw ConfigError("trapezoid: size mismatch");
    double s = 0.0;
    for (std::size_t i = 0; i + 1 < x.size(); ++i) s += 0.5 * (x[i + 1] - x[i]) * (f[i] + f[i + 1]);
    if (std::isnan(s)) throw NumericError("trapezoid: NaN integrand");
    return s;
}

double integrate(const std::function<double(double)>& f, double lo, double hi, std::size_t nodes) {
    const auto x = linspace(lo, hi, nodes);
    std::vector<double> v(nodes);
    for (std::size_t i = 0; i < nodes; ++i) v[i] = f(x[i]);
    return trapezoid(x, v);
}

GridDensity::GridDensity(std::vector<double> nodes, std::vector<double> vals)
    : x(std::move(nodes)), values(std::move(vals)) {
    validate();
}

GridDensity GridDensity::tabulate(double lo, double hi, std::size_t n,
                                  const std::function<double(double)>& f) {
    auto x = linspace(lo, hi, n);
    std::vector<double> v(n);
    for (std::size_t i = 0; i < n; ++i) v[i] = f(x[i]);
    return GridDensity(std::move(x), std::move(v));
}

double GridDensity::operator()(double at) const {
    if (!(at >= x.front() && at <= x.back())) return 0.0;
    auto it = std::upper_bound(x.begin(), x.end(), at);
    if (it == x.end()) return values.back();
    const std::size_t j = static_cast<std::size_t>(it - x.begin());
    const double w = (at - x[j - 1]) / (x[j] - x[j - 1]);
    return (1.0 - w) * values[j - 1] + w * values[j];
}

double GridDensity::integral() const { return trapezoid(x, values); }

double GridDensity::mean() const {
    std::vector<double> f(x.size());
    for (std::size_t i = 0; i < x.size(); ++i) f[i] = x[i] * values[i];
    return trapezoid(x, f) / integral();
}

double GridDensity::variance() const {
    const double m = mean();
    std::vector<double> f(x.size());
    for (std::size_t i = 0; i < x.size(); ++i) f[i] = (x[i] - m) * (x[i] - m) * values[i];
    return trapezoid(x, f) / integral();
}

void GridDensity::normalize() {
    const double z = integral();
    if (!(z > 0.0) || !std::isfinite(z)) throw NumericError("GridDensity::normalize: zero or non-finite mass");
    for (double& v : values) v /= z;
    normalized = true;
}

void GridDensity::validate() const {
    if (x.size() != values.size() || x.size() < 2) throw ConfigError("GridDensity: need >= 2 nodes and matching values");
    for (std::size_t i = 0; i + 1 < x.size(); ++i)
        if (!(x[i + 1] > x[i])) throw ConfigError("GridDensity: nodes not strictly increasing");
    for (double v : values)
        if (!(v >= 0.0) || !std::isfinite(v)) throw ConfigError("GridDensity: negative or non-finite value");
}

std::string GridDensity::to_csv() const {
    std::ostringstream os;
    os.precision(17);
    os << "x,value\n";
    for (std::size_t i = 0; i < x.size(); ++i) os << x[i] << ',' << values[i] << '\n';
    return os.str();
}

GaussHermiteRule gauss_hermite(int order) {
    if (order < 1) throw ConfigError("gauss_hermite: order must be positive");
    Eigen::MatrixXd J = Eigen::MatrixXd::Zero(order, order);
    for (int k = 1; k < order; ++k) J(k, k - 1) = J(k - 1, k) = std::sqrt(static_cast<double>(k));
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(J);
    GaussHermiteRule r;
    r.nodes.resize(order);
    r.weights.resize(order);
    for (int i = 0; i < order; ++i) {
        r.nodes[i] = es.eigenvalues()(i);
        const double v = es.eigenvectors()(0, i);
        r.weights[i] = v * v;
    }
    return r;
}

double expect_normal(const std::function<double(double)>& f, double mean, double sd, int order) {
    const auto rule = gauss_hermite(order);
    double s = 0.0;
    for (std::size_t i = 0; i < rule.nodes.size(); ++i) s += rule.weights[i] * f(mean + sd * rule.nodes[i]);
    if (std::isnan(s)) throw NumericError("expect_normal: NaN integrand");
    return s;
}

bool GaussianMoments::valid(double tol) const {
    if (cov.rows() != cov.cols() || cov.rows() != mean.size()) return false;
    if ((cov - cov.transpose()).norm() > tol * (1.0 + cov.norm())) return false;
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(0.5 * (cov + cov.transpose()));
    return es.eigenvalues().minCoeff() >= -tol * (1.0 + cov.norm());
}

Eigen::MatrixXd matrix_exp(const Eigen::MatrixXd& A, double t) {
    if (A.rows() != A.cols()) throw ConfigError("matrix_exp: square matrix required");
    Eigen::MatrixXd At = A * t;
    return At.exp();
}

Eigen::MatrixXd covariance_integral(const Eigen::MatrixXd& G, const Eigen::MatrixXd& a, double t) {
    const Eigen::Index n = G.rows();
    if (t == 0.0) return Eigen::MatrixXd::Zero(n, n);
    Eigen::MatrixXd C = Eigen::MatrixXd::Zero(2 * n, 2 * n);
    C.topLeftCorner(n, n) = -G;
    C.topRightCorner(n, n) = a;
    C.bottomRightCorner(n, n) = G.transpose();
    const Eigen::MatrixXd E = matrix_exp(C, t);
    Eigen::MatrixXd S = E.bottomRightCorner(n, n).transpose() * E.topRightCorner(n, n);
    return 0.5 * (S + S.transpose());
}

Eigen::VectorXd mean_integral(const Eigen::MatrixXd& G, const Eigen::VectorXd& beta, double t) {
    const Eigen::Index n = G.rows();
    Eigen::MatrixXd C = Eigen::MatrixXd::Zero(n + 1, n + 1);
    C.topLeftCorner(n, n) = G;
    C.topRightCorner(n, 1) = beta;
    return matrix_exp(C, t).topRightCorner(n, 1);
}

double effective_sample_size(std::span<const double> w) {
    double s = 0.0, s2 = 0.0;
    for (double v : w) {
        s += v;
        s2 += v * v;
    }
    return s2 > 0.0 ? s * s / s2 : 0.0;
}

namespace {

double weighted_quantile(std::vector<std::pair<double, double>>& sorted, double total, double p) {
    double acc = 0.0;
    for (const auto& [x, w] : sorted) {
        acc += w;
        if (acc >= p * total) return x;
    }
    return sorted.back().first;
}

} // namespace

double silverman_bandwidth(std::span<const double> points, std::span<const double> weights) {
    const std::size_t n = points.size();
    std::vector<std::pair<double, double>> pw(n);
    double tot = 0.0, mean = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
        const double w = weights.empty() ? 1.0 : weights[i];
        pw[i] = {points[i], w};
        tot += w;
        mean += w * points[i];
    }
    if (!(tot > 0.0)) throw NumericError("silverman_bandwidth: zero total weight");
    mean /= tot;
    double var = 0.0;
    for (const auto& [x, w] : pw) var += w * (x - mean) * (x - mean);
    const double sd = std::sqrt(var / tot);
    std::sort(pw.begin(), pw.end());
    const double iqr = weighted_quantile(pw, tot, 0.75) - weighted_quantile(pw, tot, 0.25);
    double spread = sd;
    if (iqr > 0.0) spread = std::min(sd, iqr / 1.34);
    double neff = n;
    if (!weights.empty()) neff = effective_sample_size(weights);
    if (!(spread > 0.0)) return 1e-3 * (1.0 + std::abs(mean));
    return 0.9 * spread * std::pow(neff, -0.2);
}

GridDensity kde(std::span<const double> points, std::span<const double> weights, const KdeOptions& opts) {
    if (points.empty()) throw NumericError("kde: no points");
    if (!weights.empty() && weights.size() != points.size()) throw ConfigError("kde: weight size mismatch");
    double tot = 0.0;
    for (std::size_t i = 0; i < points.size(); ++i) {
        const double w = weights.empty() ? 1.0 : weights[i];
        if (!(w >= 0.0)) throw ConfigError("kde: negative weight");
        tot += w;
    }
    if (!(tot > 0.0)) throw NumericError("kde: zero total weight");

    const double h = opts.bandwidth > 0.0 ? opts.bandwidth : silverman_bandwidth(points, weights);
    double lo, hi;
    if (opts.range) {
        lo = opts.range->first;
        hi = opts.range->second;
    } else {
        const auto [mn, mx] = std::minmax_element(points.begin(), points.end());
        lo = *mn - opts.pad * h;
        hi = *mx + opts.pad * h;
        if (opts.lower_bound) lo = std::max(lo, *opts.lower_bound);
    }
    auto x = linspace(lo, hi, opts.nodes);
    const double dx = x[1] - x[0];
    std::vector<double> v(opts.nodes, 0.0);
    const double norm = 1.0 / (tot * h * std::sqrt(2.0 * std::numbers::pi));
    const double cut = opts.truncation * h;
    auto deposit = [&](double c, double w) {
        const double a = std::max(lo, c - cut), b = std::min(hi, c + cut);
        if (a > b) return;
        auto j0 = static_cast<std::ptrdiff_t>(std::ceil((a - lo) / dx));
        auto j1 = static_cast<std::ptrdiff_t>(std::floor((b - lo) / dx));
        j0 = std::max<std::ptrdiff_t>(j0, 0);
        j1 = std::min<std::ptrdiff_t>(j1, static_cast<std::ptrdiff_t>(opts.nodes) - 1);
        for (std::ptrdiff_t j = j0; j <= j1; ++j) {
            const double z = (x[j] - c) / h;
            v[j] += w * std::exp(-0.5 * z * z);
        }
    };
    for (std::size_t i = 0; i < points.size(); ++i) {
        const double w = weights.empty() ? 1.0 : weights[i];
        if (w == 0.0) continue;
        deposit(points[i], w);
        if (opts.lower_bound) deposit(2.0 * *opts.lower_bound - points[i], w);
    }
    for (double& e : v) e *= norm;
    GridDensity g(std::move(x), std::move(v));
    g.normalize();
    return g;
}

double l1_distance(const GridDensity& a, const GridDensity& b, std::size_t nodes) {
    const double lo = std::min(a.lo(), b.lo()), hi = std::max(a.hi(), b.hi());
    return integrate([&](double z) { return std::abs(a(z) - b(z)); }, lo, hi, nodes);
}

double l1_distance(const GridDensity& a, const std::function<double(double)>& f, std::size_t nodes) {
    return integrate([&](double z) { return std::abs(a(z) - f(z)); }, a.lo(), a.hi(), nodes);
}

double log_sum_exp(std::span<const double> v) {
    if (v.empty()) return -std::numeric_limits<double>::infinity();
    const double m = *std::max_element(v.begin(), v.end());
    if (!std::isfinite(m)) return m;
    double s = 0.0;
    for (double e : v) s += std::exp(e - m);
    return m + std::log(s);
}

} // namespace rmsolve
