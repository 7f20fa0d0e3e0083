#include "rmsolve/model.hpp"

#include "rmsolve/errors.hpp"
#include "rmsolve/rng.hpp"
#include "rmsolve/tolerances.hpp"

#include <algorithm>
#include <cmath>
#include <fmt/format.h>
#include <numeric>

namespace rmsolve {

// ---------------------------------------------------------------- domain

DomainSpec DomainSpec::full_space(int n) {
    if (n < 1) throw ConfigError("domain dimension must be positive");
    return DomainSpec{DomainKind::full_space, n, {}, {}};
}

DomainSpec DomainSpec::half_line() { return DomainSpec{DomainKind::half_line, 1, {}, {}}; }

DomainSpec DomainSpec::box(std::vector<double> lo, std::vector<double> hi) {
    if (lo.empty() || lo.size() != hi.size()) throw ConfigError("box bounds must be non-empty and match");
    for (std::size_t i = 0; i < lo.size(); ++i)
        if (!std::isfinite(lo[i]) || !std::isfinite(hi[i]) || !(lo[i] < hi[i]))
            throw ConfigError("box bounds must be finite with lo < hi");
    const int n = static_cast<int>(lo.size());
    return DomainSpec{DomainKind::box, n, std::move(lo), std::move(hi)};
}

bool DomainSpec::contains(std::span<const double> x) const {
    if (static_cast<int>(x.size()) != dim) return false;
    for (double v : x)
        if (!std::isfinite(v)) return false;
    switch (kind) {
    case DomainKind::full_space: return true;
    case DomainKind::half_line: return x[0] >= 0.0;
    case DomainKind::box:
        for (int i = 0; i < dim; ++i)
            if (x[i] < lower[i] || x[i] > upper[i]) return false;
        return true;
    }
    return false;
}

std::string to_string(ModelKind k) {
    switch (k) {
    case ModelKind::arithmetic_bm: return "arithmetic_bm";
    case ModelKind::ou: return "ou";
    case ModelKind::cir: return "cir";
    case ModelKind::affine: return "affine";
    case ModelKind::custom: return "custom";
    }
    return "unknown";
}

// ---------------------------------------------------------------- model

DiffusionModel DiffusionModel::from_affine(ModelKind kind, AffineCoefficients coef) {
    const auto n = coef.b.size();
    if (n < 1 || coef.B.rows() != n || coef.B.cols() != n || coef.sigma.rows() != n || coef.sigma.cols() < 1)
        throw ConfigError("affine model: inconsistent coefficient shapes");
    const int m = static_cast<int>(coef.sigma.cols());
    auto drift = [b = coef.b, B = coef.B](std::span<const double> x, std::span<double> out) {
        const auto n = b.size();
        for (Eigen::Index i = 0; i < n; ++i) {
            double s = b(i);
            for (Eigen::Index j = 0; j < n; ++j) s += B(i, j) * x[j];
            out[i] = s;
        }
    };
    auto diff = [sigma = coef.sigma](std::span<const double>, std::span<double> out) {
        const auto m = sigma.cols();
        for (Eigen::Index i = 0; i < sigma.rows(); ++i)
            for (Eigen::Index j = 0; j < m; ++j) out[i * m + j] = sigma(i, j);
    };
    DiffusionModel model = custom(DomainSpec::full_space(static_cast<int>(n)), m, drift, diff, true);
    model.kind_ = kind;
    model.affine_ = std::move(coef);
    return model;
}

DiffusionModel DiffusionModel::arithmetic_bm(Eigen::VectorXd drift, Eigen::MatrixXd sigma) {
    const auto n = drift.size();
    return from_affine(ModelKind::arithmetic_bm,
                       AffineCoefficients{std::move(drift), Eigen::MatrixXd::Zero(n, n), std::move(sigma)});
}

DiffusionModel DiffusionModel::ou(double kappa, double theta, double sigma) {
    Eigen::VectorXd b(1);
    b << kappa * theta;
    Eigen::MatrixXd B(1, 1);
    B << -kappa;
    Eigen::MatrixXd s(1, 1);
    s << sigma;
    return from_affine(ModelKind::ou, AffineCoefficients{b, B, s});
}

DiffusionModel DiffusionModel::affine(Eigen::VectorXd b, Eigen::MatrixXd B, Eigen::MatrixXd sigma) {
    return from_affine(ModelKind::affine, AffineCoefficients{std::move(b), std::move(B), std::move(sigma)});
}

DiffusionModel DiffusionModel::cir(double a, double b, double sigma) {
    if (!std::isfinite(a) || !std::isfinite(b) || !std::isfinite(sigma) || sigma < 0.0)
        throw ConfigError("cir: parameters must be finite with sigma >= 0");
    auto drift = [a, b](std::span<const double> x, std::span<double> out) { out[0] = a + b * x[0]; };
    auto diff = [sigma](std::span<const double> x, std::span<double> out) {
        out[0] = sigma * std::sqrt(std::max(x[0], 0.0));
    };
    DiffusionModel model = custom(DomainSpec::half_line(), 1, drift, diff, true);
    model.kind_ = ModelKind::cir;
    model.cir_ = CirParams{a, b, sigma};
    return model;
}

DiffusionModel DiffusionModel::custom(DomainSpec domain, int noise_dim, FieldFn drift, FieldFn diffusion,
                                      bool declared_lipschitz) {
    if (noise_dim < 1) throw ConfigError("noise dimension must be positive");
    if (!drift || !diffusion) throw ConfigError("custom model needs drift and diffusion callables");
    if (domain.kind == DomainKind::half_line && domain.dim != 1) throw ConfigError("half-line domain is 1D only");
    DiffusionModel model;
    model.domain_ = std::move(domain);
    model.kind_ = ModelKind::custom;
    model.m_ = noise_dim;
    model.lipschitz_ = declared_lipschitz;
    model.drift_ = std::move(drift);
    model.diffusion_ = std::move(diffusion);
    return model;
}

Eigen::MatrixXd DiffusionModel::diffusion_matrix(std::span<const double> x) const {
    const int n = dim();
    std::vector<double> s(static_cast<std::size_t>(n) * m_);
    diffusion_(x, s);
    Eigen::Map<Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>> S(s.data(), n, m_);
    return S * S.transpose();
}

double DiffusionModel::drift1(double x) const {
    double out = 0.0;
    drift_(std::span<const double>(&x, 1), std::span<double>(&out, 1));
    return out;
}

double DiffusionModel::sigma1(double x) const {
    if (dim() != 1 || m_ != 1) throw ConfigError("sigma1: 1D model with scalar noise required");
    double out = 0.0;
    diffusion_(std::span<const double>(&x, 1), std::span<double>(&out, 1));
    return out;
}

// ---------------------------------------------------------------- fitness

namespace {

double poly_eval(const std::vector<double>& c, double x) {
    double s = 0.0;
    for (auto it = c.rbegin(); it != c.rend(); ++it) s = s * x + *it;
    return s;
}

std::vector<double> trim(std::vector<double> c) {
    while (c.size() > 1 && c.back() == 0.0) c.pop_back();
    if (c.empty()) c.push_back(0.0);
    return c;
}

// Global max of a polynomial with negative leading coefficient and even degree.
double confining_poly_max(const std::vector<double>& c) {
    const double lead = c.back();
    double R = 1.0;
    for (std::size_t k = 0; k + 1 < c.size(); ++k) R = std::max(R, 1.0 + std::abs(c[k] / lead));
    const int n = 20001;
    double best = -INFINITY, bx = 0.0;
    for (int i = 0; i < n; ++i) {
        const double x = -R + 2.0 * R * i / (n - 1);
        const double v = poly_eval(c, x);
        if (v > best) best = v, bx = x;
    }
    // golden-section refinement inside the bracketing cell
    double lo = bx - 2.0 * R / (n - 1), hi = bx + 2.0 * R / (n - 1);
    const double gr = 0.5 * (std::sqrt(5.0) - 1.0);
    for (int it = 0; it < 200; ++it) {
        const double a = hi - gr * (hi - lo), b = lo + gr * (hi - lo);
        if (poly_eval(c, a) > poly_eval(c, b)) hi = b;
        else lo = a;
    }
    return std::max(best, poly_eval(c, 0.5 * (lo + hi)));
}

} // namespace

double FitnessFunction::modulus_at(double r) const { return poly_eval(modulus_, r); }

FitnessFunction FitnessFunction::constant(int dim, double c) {
    FitnessFunction f = linear(Eigen::VectorXd::Zero(dim), c, c);
    return f;
}

FitnessFunction FitnessFunction::linear(Eigen::VectorXd c, double c0, double g_max) {
    FitnessFunction f;
    f.dim_ = static_cast<int>(c.size());
    if (f.dim_ < 1) throw ConfigError("linear fitness: empty coefficient vector");
    f.eval_ = [c, c0](std::span<const double> x) {
        double s = c0;
        for (Eigen::Index i = 0; i < c.size(); ++i) s += c(i) * x[i];
        return s;
    };
    f.bounded_above_ = c.isZero(0.0);
    f.g_max_ = f.bounded_above_ ? std::max(g_max, c0) : g_max;
    f.modulus_ = {c.norm()};
    f.linear_ = LinearForm{c, c0};
    f.quad_ = QuadraticForm{-c0, -c, Eigen::MatrixXd::Zero(f.dim_, f.dim_)};
    if (f.dim_ == 1) f.poly_ = Polynomial1D{trim({c0, c(0)})};
    return f;
}

FitnessFunction FitnessFunction::quadratic(double alpha, Eigen::VectorXd delta, Eigen::MatrixXd G,
                                           std::optional<double> g_max) {
    const auto n = delta.size();
    if (n < 1 || G.rows() != n || G.cols() != n) throw ConfigError("quadratic fitness: inconsistent shapes");
    if ((G - G.transpose()).norm() > 1e-12 * (1.0 + G.norm())) throw ConfigError("quadratic fitness: G must be symmetric");
    FitnessFunction f;
    f.dim_ = static_cast<int>(n);
    f.eval_ = [alpha, delta, G](std::span<const double> x) {
        Eigen::Map<const Eigen::VectorXd> v(x.data(), delta.size());
        return -(alpha + delta.dot(v) + v.dot(G * v));
    };
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(G);
    const bool pd = es.eigenvalues().minCoeff() > 0.0;
    if (pd) {
        const double sup = -(alpha - 0.25 * delta.dot(G.ldlt().solve(delta)));
        f.bounded_above_ = true;
        f.g_max_ = g_max ? std::max(*g_max, sup) : sup;
    } else if (G.isZero(0.0) && delta.isZero(0.0)) {
        f.bounded_above_ = true;
        f.g_max_ = g_max ? std::max(*g_max, -alpha) : -alpha;
    } else {
        if (!g_max) throw ConfigError("quadratic fitness without positive definite G needs an explicit g_max");
        f.bounded_above_ = false;
        f.g_max_ = *g_max;
    }
    f.modulus_ = {delta.norm(), G.norm() > 0 ? es.eigenvalues().cwiseAbs().maxCoeff() : 0.0};
    f.quad_ = QuadraticForm{alpha, delta, G};
    if (G.isZero(0.0)) f.linear_ = LinearForm{-delta, -alpha};
    if (n == 1) f.poly_ = Polynomial1D{trim({-alpha, -delta(0), -G(0, 0)})};
    return f;
}

FitnessFunction FitnessFunction::polynomial(std::vector<double> coeffs, std::optional<double> g_max) {
    auto c = trim(std::move(coeffs));
    const std::size_t deg = c.size() - 1;
    if (deg <= 2) {
        Eigen::VectorXd d(1);
        d << -(deg >= 1 ? c[1] : 0.0);
        Eigen::MatrixXd G(1, 1);
        G << -(deg >= 2 ? c[2] : 0.0);
        if (deg == 1 && !g_max) throw ConfigError("linear polynomial fitness needs an explicit g_max");
        if (deg == 2 && c[2] > 0.0 && !g_max) throw ConfigError("polynomial fitness unbounded above needs g_max");
        return quadratic(-c[0], d, G, g_max);
    }
    FitnessFunction f;
    f.dim_ = 1;
    f.eval_ = [c](std::span<const double> x) { return poly_eval(c, x[0]); };
    const bool confining = deg % 2 == 0 && c.back() < 0.0;
    if (confining) {
        const double sup = confining_poly_max(c);
        f.bounded_above_ = true;
        f.g_max_ = g_max ? std::max(*g_max, sup) : sup;
    } else {
        if (!g_max) throw ConfigError("non-confining polynomial fitness needs an explicit g_max");
        f.bounded_above_ = false;
        f.g_max_ = *g_max;
    }
    f.modulus_.resize(deg);
    for (std::size_t j = 0; j < deg; ++j) f.modulus_[j] = static_cast<double>(j + 1) * std::abs(c[j + 1]);
    f.poly_ = Polynomial1D{c};
    return f;
}

FitnessFunction FitnessFunction::custom(int dim, ScalarFn g, double g_max, bool bounded_above,
                                        std::vector<double> modulus) {
    if (!g) throw ConfigError("custom fitness needs a callable");
    FitnessFunction f;
    f.dim_ = dim;
    f.eval_ = std::move(g);
    f.g_max_ = g_max;
    f.bounded_above_ = bounded_above;
    f.modulus_ = modulus.empty() ? std::vector<double>{0.0} : std::move(modulus);
    return f;
}

FitnessFunction FitnessFunction::plus_constant(double c, bool shift_bound) const {
    FitnessFunction f = *this;
    f.eval_ = [inner = eval_, c](std::span<const double> x) { return inner(x) + c; };
    if (shift_bound) f.g_max_ += c;
    if (f.linear_) f.linear_->c0 += c;
    if (f.quad_) f.quad_->alpha -= c;
    if (f.poly_) f.poly_->coeffs[0] += c;
    return f;
}

FitnessFunction FitnessFunction::with_modulus(std::vector<double> q) const {
    FitnessFunction f = *this;
    f.modulus_ = std::move(q);
    return f;
}

FitnessFunction FitnessFunction::with_g_max(double g_max) const {
    FitnessFunction f = *this;
    f.g_max_ = g_max;
    return f;
}

// ---------------------------------------------------------------- initial law

InitialLaw InitialLaw::gaussian(Eigen::VectorXd mean, Eigen::MatrixXd cov) {
    const auto n = mean.size();
    if (n < 1 || cov.rows() != n || cov.cols() != n) throw ConfigError("gaussian law: inconsistent shapes");
    GaussianMoments gm{mean, cov};
    if (!gm.valid(1e-12)) throw ConfigError("gaussian law: covariance must be symmetric PSD");
    InitialLaw law;
    law.kind_ = LawKind::gaussian;
    law.dim_ = static_cast<int>(n);
    law.mix_.components.push_back(GaussianComponent{0.0, std::move(mean), 0.5 * (cov + cov.transpose())});
    law.weights_ = {1.0};
    return law;
}

InitialLaw InitialLaw::mixture(std::vector<double> weights, std::vector<InitialLaw> gaussians) {
    if (weights.empty() || weights.size() != gaussians.size()) throw ConfigError("mixture: weights and components must match");
    double tot = 0.0;
    for (double w : weights) {
        if (!(w >= 0.0)) throw ConfigError("mixture: negative weight");
        tot += w;
    }
    if (!(tot > 0.0)) throw ConfigError("mixture: zero total weight");
    InitialLaw law;
    law.kind_ = LawKind::mixture;
    law.dim_ = gaussians.front().dim();
    for (std::size_t k = 0; k < weights.size(); ++k) {
        if (gaussians[k].kind() != LawKind::gaussian || gaussians[k].dim() != law.dim_)
            throw ConfigError("mixture: components must be Gaussians of equal dimension");
        auto comp = gaussians[k].mix_.components.front();
        comp.log_weight = std::log(weights[k] / tot);
        law.mix_.components.push_back(std::move(comp));
        law.weights_.push_back(weights[k] / tot);
    }
    return law;
}

InitialLaw InitialLaw::point_cloud(std::vector<Eigen::VectorXd> points, std::vector<double> weights) {
    if (points.empty()) throw ConfigError("point cloud: no points");
    if (weights.empty()) weights.assign(points.size(), 1.0);
    if (weights.size() != points.size()) throw ConfigError("point cloud: weight size mismatch");
    double tot = 0.0;
    for (double w : weights) {
        if (!(w >= 0.0)) throw ConfigError("point cloud: negative weight");
        tot += w;
    }
    if (!(tot > 0.0)) throw ConfigError("point cloud: zero total weight");
    InitialLaw law;
    law.kind_ = LawKind::point_cloud;
    law.dim_ = static_cast<int>(points.front().size());
    for (auto& w : weights) w /= tot;
    law.points_ = std::move(points);
    law.weights_ = std::move(weights);
    for (const auto& p : law.points_)
        if (p.size() != law.dim_) throw ConfigError("point cloud: inconsistent dimensions");
    return law;
}

InitialLaw InitialLaw::grid(GridDensity density) {
    density.validate();
    const double z = density.integral();
    if (std::abs(z - 1.0) > default_tolerances().grid_normalization)
        throw ConfigError(fmt::format("grid law: density integrates to {:.12g}, expected 1", z));
    InitialLaw law;
    law.kind_ = LawKind::grid;
    law.dim_ = 1;
    law.grid_ = std::move(density);
    return law;
}

double InitialLaw::density(std::span<const double> x) const {
    switch (kind_) {
    case LawKind::gaussian:
    case LawKind::mixture: return mix_.density(x);
    case LawKind::grid: return (*grid_)(x[0]);
    case LawKind::point_cloud: break;
    }
    throw ConfigError("point-cloud law has no density");
}

double InitialLaw::moment(int p) const {
    if (p < 0) throw ConfigError("moment order must be nonnegative");
    auto absp = [p](double v) { return std::pow(std::abs(v), p); };
    switch (kind_) {
    case LawKind::point_cloud: {
        double s = 0.0;
        for (std::size_t i = 0; i < points_.size(); ++i) s += weights_[i] * std::pow(points_[i].norm(), p);
        return s;
    }
    case LawKind::grid: {
        const auto& g = *grid_;
        std::vector<double> f(g.size());
        for (std::size_t i = 0; i < g.size(); ++i) f[i] = absp(g.x[i]) * g.values[i];
        return trapezoid(g.x, f);
    }
    case LawKind::gaussian:
    case LawKind::mixture: {
        double s = 0.0;
        for (const auto& c : mix_.components) {
            const double w = std::exp(c.log_weight);
            if (dim_ == 1) {
                s += w * expect_normal(absp, c.mean(0), std::sqrt(c.cov(0, 0)), 96);
            } else {
                // deterministic Monte Carlo for n > 1
                Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(c.cov);
                const Eigen::MatrixXd L = es.eigenvectors() * es.eigenvalues().cwiseMax(0.0).cwiseSqrt().asDiagonal();
                const std::size_t M = 200000;
                double acc = 0.0;
                Eigen::VectorXd z(dim_);
                for (std::size_t i = 0; i < M; ++i) {
                    StreamRng rng(0x6d6f6d656e74ull, i);
                    for (int j = 0; j < dim_; j += 2) {
                        const auto nz = rng.normals(0, static_cast<std::uint32_t>(j / 2));
                        z(j) = nz[0];
                        if (j + 1 < dim_) z(j + 1) = nz[1];
                    }
                    acc += std::pow((c.mean + L * z).norm(), p);
                }
                s += w * acc / static_cast<double>(M);
            }
        }
        return s;
    }
    }
    return 0.0;
}

GaussianMixture InitialLaw::as_mixture() const {
    switch (kind_) {
    case LawKind::gaussian:
    case LawKind::mixture: return mix_;
    case LawKind::point_cloud: {
        GaussianMixture m;
        for (std::size_t i = 0; i < points_.size(); ++i) {
            if (weights_[i] <= 0.0) continue;
            m.components.push_back({std::log(weights_[i]), points_[i], Eigen::MatrixXd::Zero(dim_, dim_)});
        }
        return m;
    }
    case LawKind::grid: {
        const auto& g = *grid_;
        GaussianMixture m;
        const std::size_t n = g.size();
        for (std::size_t i = 0; i < n; ++i) {
            const double left = i > 0 ? g.x[i] - g.x[i - 1] : 0.0;
            const double right = i + 1 < n ? g.x[i + 1] - g.x[i] : 0.0;
            const double w = 0.5 * (left + right) * g.values[i];
            if (w <= 0.0) continue;
            Eigen::VectorXd p(1);
            p << g.x[i];
            m.components.push_back({std::log(w), p, Eigen::MatrixXd::Zero(1, 1)});
        }
        return m;
    }
    }
    return {};
}

std::pair<double, double> InitialLaw::support_hint(double sds) const {
    if (dim_ != 1) throw ConfigError("support_hint: 1D law required");
    switch (kind_) {
    case LawKind::grid: return {grid_->lo(), grid_->hi()};
    case LawKind::point_cloud: {
        double lo = INFINITY, hi = -INFINITY;
        for (const auto& p : points_) lo = std::min(lo, p(0)), hi = std::max(hi, p(0));
        return {lo, hi};
    }
    default: {
        double lo = INFINITY, hi = -INFINITY;
        for (const auto& c : mix_.components) {
            const double sd = std::sqrt(c.cov(0, 0));
            lo = std::min(lo, c.mean(0) - sds * sd);
            hi = std::max(hi, c.mean(0) + sds * sd);
        }
        return {lo, hi};
    }
    }
}

// ---------------------------------------------------------------- sampling

namespace {

void fill_normals(const StreamRng& rng, std::uint32_t step, std::span<double> z) {
    for (std::size_t j = 0; j < z.size(); j += 2) {
        const auto nz = rng.normals(step, static_cast<std::uint32_t>(j / 2));
        z[j] = nz[0];
        if (j + 1 < z.size()) z[j + 1] = nz[1];
    }
}

std::size_t pick(const std::vector<double>& cum, double u) {
    auto it = std::lower_bound(cum.begin(), cum.end(), u * cum.back());
    return std::min<std::size_t>(static_cast<std::size_t>(it - cum.begin()), cum.size() - 1);
}

void check_law_domain(const InitialLaw& law, const DomainSpec& d) {
    if (law.dim() != d.dim) throw ConfigError("initial law dimension does not match the domain");
    if (d.kind == DomainKind::full_space) return;
    switch (law.kind()) {
    case LawKind::gaussian:
    case LawKind::mixture:
        throw ConfigError("Gaussian initial law places mass outside the restricted domain; use a grid or point-cloud law");
    case LawKind::point_cloud:
        for (const auto& p : law.points())
            if (!d.contains(std::span<const double>(p.data(), p.size())))
                throw ConfigError("point-cloud initial law has a point outside the domain");
        return;
    case LawKind::grid: {
        const auto* g = law.grid_density();
        double lo = g->lo(), hi = g->hi();
        if (!d.contains(std::span<const double>(&lo, 1)) || !d.contains(std::span<const double>(&hi, 1)))
            throw ConfigError("grid initial law extends outside the domain");
        return;
    }
    }
}

} // namespace

std::vector<double> sample_initial(const InitialLaw& law, std::size_t count, std::uint64_t seed,
                                   const DomainSpec* domain) {
    if (count < 1) throw ConfigError("sample_initial: count must be >= 1");
    if (domain) check_law_domain(law, *domain);
    const int n = law.dim();
    std::vector<double> out(count * n);

    if (law.kind() == LawKind::point_cloud) {
        const auto& pts = law.points();
        if (count == pts.size()) {
            for (std::size_t i = 0; i < count; ++i)
                for (int j = 0; j < n; ++j) out[i * n + j] = pts[i](j);
            return out;
        }
        std::vector<double> cum(law.weights().size());
        std::partial_sum(law.weights().begin(), law.weights().end(), cum.begin());
        for (std::size_t i = 0; i < count; ++i) {
            const std::size_t k = pick(cum, StreamRng(seed, i).uniforms(0, 0)[0]);
            for (int j = 0; j < n; ++j) out[i * n + j] = pts[k](j);
        }
        return out;
    }

    if (law.kind() == LawKind::grid) {
        const auto& g = *law.grid_density();
        const std::size_t m = g.size();
        std::vector<double> cum(m, 0.0);
        for (std::size_t j = 1; j < m; ++j)
            cum[j] = cum[j - 1] + 0.5 * (g.x[j] - g.x[j - 1]) * (g.values[j - 1] + g.values[j]);
        const double total = cum.back();
        for (std::size_t i = 0; i < count; ++i) {
            const double r = StreamRng(seed, i).uniforms(0, 0)[0] * total;
            auto it = std::upper_bound(cum.begin(), cum.end(), r);
            std::size_t j = std::clamp<std::size_t>(static_cast<std::size_t>(it - cum.begin()), 1, m - 1);
            while (j > 1 && cum[j] == cum[j - 1] && cum[j - 1] >= r) --j;
            const double dx = g.x[j] - g.x[j - 1], f0 = g.values[j - 1], f1 = g.values[j];
            const double need = r - cum[j - 1];
            // mass(s) = dx (f0 s + (f1 - f0) s^2 / 2), s in [0, 1]
            const double A = 0.5 * dx * (f1 - f0), B = dx * f0;
            double s;
            if (std::abs(A) < 1e-14 * std::max(B, 1e-300)) s = B > 0.0 ? need / B : 0.5;
            else s = (-B + std::sqrt(std::max(B * B + 4.0 * A * need, 0.0))) / (2.0 * A);
            if (!std::isfinite(s)) s = 0.5;
            out[i] = g.x[j - 1] + std::clamp(s, 0.0, 1.0) * dx;
        }
        return out;
    }

    const auto& comps = law.as_mixture().components;
    std::vector<Eigen::MatrixXd> roots;
    std::vector<double> cum;
    double acc = 0.0;
    for (const auto& c : comps) {
        Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(c.cov);
        roots.push_back(es.eigenvectors() * es.eigenvalues().cwiseMax(0.0).cwiseSqrt().asDiagonal());
        acc += std::exp(c.log_weight);
        cum.push_back(acc);
    }
    std::vector<double> z(n);
    for (std::size_t i = 0; i < count; ++i) {
        StreamRng rng(seed, i);
        const std::size_t k = comps.size() == 1 ? 0 : pick(cum, rng.uniforms(1, 0)[0]);
        fill_normals(rng, 0, z);
        Eigen::Map<const Eigen::VectorXd> zv(z.data(), n);
        const Eigen::VectorXd x = comps[k].mean + roots[k] * zv;
        for (int j = 0; j < n; ++j) out[i * n + j] = x(j);
    }
    return out;
}

// ---------------------------------------------------------------- validation

ModelReport validate_model(const DiffusionModel& model) {
    ModelReport r;
    const int n = model.dim(), m = model.noise_dim();
    const auto& dom = model.domain();
    std::vector<double> x(n), y(n), bx(n), by(n), sx(n * m), sy(n * m);
    const std::size_t pairs = 64;
    for (std::size_t p = 0; p < pairs; ++p) {
        StreamRng rng(0x76616c6964617465ull, p);
        for (int j = 0; j < n; ++j) {
            const auto u = rng.uniforms(0, static_cast<std::uint32_t>(j));
            if (dom.kind == DomainKind::half_line) {
                x[j] = 0.05 + 10.0 * u[0];
            } else if (dom.kind == DomainKind::box) {
                x[j] = dom.lower[j] + (dom.upper[j] - dom.lower[j]) * u[0];
            } else {
                x[j] = -5.0 + 10.0 * u[0];
            }
            y[j] = x[j] + 1e-3 * (u[1] - 0.5);
            if (dom.kind == DomainKind::box) y[j] = std::clamp(y[j], dom.lower[j], dom.upper[j]);
        }
        double d = 0.0;
        for (int j = 0; j < n; ++j) d += (x[j] - y[j]) * (x[j] - y[j]);
        d = std::sqrt(d);
        if (d == 0.0) continue;
        model.drift(x, bx);
        model.drift(y, by);
        model.diffusion(x, sx);
        model.diffusion(y, sy);
        double db = 0.0, ds = 0.0;
        for (int j = 0; j < n; ++j) db += (bx[j] - by[j]) * (bx[j] - by[j]);
        for (int j = 0; j < n * m; ++j) ds += (sx[j] - sy[j]) * (sx[j] - sy[j]);
        r.max_drift_ratio = std::max(r.max_drift_ratio, std::sqrt(db) / d);
        r.max_diffusion_ratio = std::max(r.max_diffusion_ratio, std::sqrt(ds) / d);
        ++r.lipschitz_pairs;
    }
    if (!std::isfinite(r.max_drift_ratio) || !std::isfinite(r.max_diffusion_ratio))
        r.messages.push_back("non-finite coefficient difference on probe pairs");
    if (!model.declared_lipschitz()) r.messages.push_back("model not declared locally Lipschitz; probes only");

    if (const auto* c = model.cir_params()) {
        const bool ok = 2.0 * c->a >= c->sigma * c->sigma;
        r.feller_ok = ok;
        if (!ok) {
            r.hard_failure = true;
            r.messages.push_back(fmt::format("Feller condition 2a >= sigma^2 violated: 2a = {:g} < sigma^2 = {:g}",
                                             2.0 * c->a, c->sigma * c->sigma));
        }
    }
    if (const auto* a = model.affine_coefficients();
        a && (model.kind() == ModelKind::affine || model.kind() == ModelKind::ou)) {
        const Eigen::MatrixXd S = a->a();
        Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(S);
        const bool pd = es.eigenvalues().minCoeff() > 1e-12 * std::max(1.0, S.norm());
        r.positive_definite = pd;
        if (!pd) {
            r.hard_failure = true;
            r.messages.push_back("affine model: sigma sigma^T is not positive definite");
        }
    }
    return r;
}

void require_valid(const DiffusionModel& model) {
    const auto r = validate_model(model);
    if (r.hard_failure) {
        std::string msg;
        for (const auto& m : r.messages) msg += (msg.empty() ? "" : "; ") + m;
        throw ConfigError(msg);
    }
}

ModulusReport check_fitness_modulus(const FitnessFunction& g,
                                    const std::vector<std::pair<std::vector<double>, std::vector<double>>>& pairs) {
    ModulusReport r;
    for (const auto& [x, y] : pairs) {
        double nx = 0.0, ny = 0.0, d = 0.0;
        for (std::size_t j = 0; j < x.size(); ++j) {
            nx += x[j] * x[j];
            ny += y[j] * y[j];
            d += (x[j] - y[j]) * (x[j] - y[j]);
        }
        const double lhs = std::abs(g(x) - g(y));
        const double rhs = g.modulus_at(std::sqrt(nx) + std::sqrt(ny)) * std::sqrt(d);
        ++r.checked;
        if (lhs > rhs * (1.0 + 1e-12) + 1e-12) r.violations.push_back({x, y, lhs, rhs});
    }
    return r;
}

double probe_fitness_max(const FitnessFunction& g, const DomainSpec& domain, std::size_t count, double radius) {
    static constexpr int primes[] = {2, 3, 5, 7, 11, 13, 17, 19, 23, 29, 31, 37, 41, 43, 47, 53};
    const int n = domain.dim;
    if (n > 16) throw ConfigError("probe_fitness_max: dimension above 16");
    std::vector<double> x(n);
    double best = -INFINITY;
    for (std::size_t i = 1; i <= count; ++i) {
        for (int j = 0; j < n; ++j) {
            double f = 1.0, h = 0.0;
            for (std::size_t k = i; k > 0; k /= primes[j]) {
                f /= primes[j];
                h += f * static_cast<double>(k % primes[j]);
            }
            switch (domain.kind) {
            case DomainKind::half_line: x[j] = 2.0 * radius * h; break;
            case DomainKind::box: x[j] = domain.lower[j] + (domain.upper[j] - domain.lower[j]) * h; break;
            default: x[j] = -radius + 2.0 * radius * h;
            }
        }
        best = std::max(best, g(x));
    }
    return best;
}

// ---------------------------------------------------------------- derivatives

Eigen::VectorXd fd_gradient(const ScalarFn& f, std::span<const double> x) {
    const auto n = x.size();
    std::vector<double> p(x.begin(), x.end());
    Eigen::VectorXd g(n);
    const double step = default_tolerances().fd_first_step;
    for (std::size_t i = 0; i < n; ++i) {
        const double h = step * (1.0 + std::abs(x[i]));
        p[i] = x[i] + h;
        const double fp = f(p);
        p[i] = x[i] - h;
        const double fm = f(p);
        p[i] = x[i];
        g(i) = (fp - fm) / (2.0 * h);
    }
    return g;
}

Eigen::MatrixXd fd_hessian(const ScalarFn& f, std::span<const double> x) {
    const auto n = x.size();
    std::vector<double> p(x.begin(), x.end());
    Eigen::MatrixXd H(n, n);
    const double step = default_tolerances().fd_second_step;
    const double f0 = f(p);
    for (std::size_t i = 0; i < n; ++i) {
        const double h = step * (1.0 + std::abs(x[i]));
        auto at = [&](double s) {
            p[i] = x[i] + s * h;
            const double v = f(p);
            p[i] = x[i];
            return v;
        };
        H(i, i) = (-at(2) + 16.0 * at(1) - 30.0 * f0 + 16.0 * at(-1) - at(-2)) / (12.0 * h * h);
    }
    for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = i + 1; j < n; ++j) {
            auto mixed = [&](double hi, double hj) {
                auto at = [&](double si, double sj) {
                    p[i] = x[i] + si * hi;
                    p[j] = x[j] + sj * hj;
                    const double v = f(p);
                    p[i] = x[i];
                    p[j] = x[j];
                    return v;
                };
                return (at(1, 1) - at(1, -1) - at(-1, 1) + at(-1, -1)) / (4.0 * hi * hj);
            };
            const double hi = 2.0 * step * (1.0 + std::abs(x[i])), hj = 2.0 * step * (1.0 + std::abs(x[j]));
            const double coarse = mixed(hi, hj), fine = mixed(0.5 * hi, 0.5 * hj);
            H(i, j) = H(j, i) = (4.0 * fine - coarse) / 3.0;
        }
    return H;
}

double apply_generator(const DiffusionModel& model, const ScalarFn& f, std::span<const double> x) {
    const int n = model.dim();
    std::vector<double> b(n);
    model.drift(x, b);
    const Eigen::VectorXd g = fd_gradient(f, x);
    const Eigen::MatrixXd H = fd_hessian(f, x);
    const Eigen::MatrixXd a = model.diffusion_matrix(x);
    double s = 0.5 * (a.cwiseProduct(H)).sum();
    for (int i = 0; i < n; ++i) s += b[i] * g(i);
    return s;
}

} // namespace rmsolve
