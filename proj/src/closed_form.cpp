#include "rmsolve/closed_form.hpp"

#include "rmsolve/errors.hpp"
#include "rmsolve/parallel.hpp"
#include "rmsolve/rng.hpp"

#include <algorithm>
#include <cmath>
#include <fmt/format.h>
#include <limits>
#include <map>
#include <memory>
#include <mutex>
#include <numbers>

namespace rmsolve {

// ---------------------------------------------------------------- probes

std::vector<double> probe_points(int dim, std::size_t count, double lo, double hi) {
    static constexpr int primes[] = {2, 3, 5, 7, 11, 13, 17, 19, 23, 29, 31, 37, 41, 43, 47, 53};
    if (dim > 16) throw ConfigError("probe_points: dimension above 16");
    std::vector<double> out(count * dim);
    if (dim == 1) {
        for (std::size_t i = 0; i < count; ++i)
            out[i] = count == 1 ? 0.5 * (lo + hi) : lo + (hi - lo) * static_cast<double>(i) / (count - 1);
        return out;
    }
    for (std::size_t i = 0; i < count; ++i)
        for (int j = 0; j < dim; ++j) {
            double f = 1.0, h = 0.0;
            for (std::size_t k = i + 1; k > 0; k /= primes[j]) {
                f /= primes[j];
                h += f * static_cast<double>(k % primes[j]);
            }
            out[i * dim + j] = lo + (hi - lo) * h;
        }
    return out;
}

namespace {

std::vector<double> domain_probes(const DomainSpec& d, std::size_t count) {
    switch (d.kind) {
    case DomainKind::half_line: return probe_points(1, count, 0.1, 5.0);
    case DomainKind::box: {
        auto p = probe_points(d.dim, count, 0.0, 1.0);
        for (std::size_t i = 0; i < count; ++i)
            for (int j = 0; j < d.dim; ++j) {
                const double w = d.upper[j] - d.lower[j];
                p[i * d.dim + j] = d.lower[j] + 0.05 * w + 0.9 * w * p[i * d.dim + j];
            }
        return p;
    }
    default: return probe_points(d.dim, count, -3.0, 3.0);
    }
}

} // namespace

ConstantConditionResult detect_constant_condition(const DiffusionModel& model, const FitnessFunction& g,
                                                  std::size_t probes, const Tolerances& tol) {
    if (probes < 32) throw ConfigError("detect_constant_condition: at least 32 probes required");
    const int n = model.dim(), m = model.noise_dim();
    if (g.dim() != n) throw ConfigError("detect_constant_condition: dimension mismatch");
    const auto pts = domain_probes(model.domain(), probes);
    ScalarFn f = [&g](std::span<const double> x) { return g(x); };
    std::vector<double> c1(probes);
    std::vector<Eigen::RowVectorXd> c2(probes);
    std::vector<double> s(static_cast<std::size_t>(n) * m);
    for (std::size_t i = 0; i < probes; ++i) {
        std::span<const double> x(pts.data() + i * n, n);
        c1[i] = apply_generator(model, f, x);
        const Eigen::VectorXd grad = fd_gradient(f, x);
        model.diffusion(x, s);
        Eigen::Map<Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>> S(s.data(), n, m);
        c2[i] = grad.transpose() * S;
    }
    ConstantConditionResult r;
    double C1 = 0.0;
    Eigen::RowVectorXd C2 = Eigen::RowVectorXd::Zero(m);
    for (std::size_t i = 0; i < probes; ++i) {
        C1 += c1[i];
        C2 += c2[i];
    }
    C1 /= probes;
    C2 /= static_cast<double>(probes);
    for (std::size_t i = 0; i < probes; ++i) {
        r.max_dev_c1 = std::max(r.max_dev_c1, std::abs(c1[i] - C1));
        r.max_dev_c2 = std::max(r.max_dev_c2, (c2[i] - C2).norm());
    }
    const double t1 = tol.constant_condition * (1.0 + std::abs(C1));
    const double t2 = tol.constant_condition * (1.0 + C2.norm());
    if (!(r.max_dev_c1 <= t1)) {
        r.reason = fmt::format("A g is not constant on probes (max deviation {:.3g})", r.max_dev_c1);
        return r;
    }
    if (!(r.max_dev_c2 <= t2)) {
        r.reason = fmt::format("grad g^T sigma is not constant on probes (max deviation {:.3g})", r.max_dev_c2);
        return r;
    }
    r.condition = ConstantCondition{C1, C2};
    return r;
}

// ---------------------------------------------------------------- eigenpairs

std::string to_string(EigenSource s) {
    switch (s) {
    case EigenSource::affine_analytic: return "affine-analytic";
    case EigenSource::kummer: return "kummer";
    case EigenSource::schrodinger_grid: return "schrodinger-grid";
    }
    return "unknown";
}

double residual_tolerance(EigenSource s, const Tolerances& tol) {
    return s == EigenSource::schrodinger_grid ? tol.eigen_residual_grid : tol.eigen_residual_analytic;
}

double eigenpair_residual(const DiffusionModel& model, const FitnessFunction& g, const Eigenpair& pair,
                          std::span<const double> probes) {
    const int n = model.dim();
    const std::size_t count = probes.size() / n;
    double worst = 0.0, scale = 0.0;
    for (std::size_t i = 0; i < count; ++i) {
        std::span<const double> x(probes.data() + i * n, n);
        const double ph = pair.phi(x);
        if (!(ph > 0.0)) return std::numeric_limits<double>::infinity();
        const double res = apply_generator(model, pair.phi, x) + (g(x) + pair.lambda) * ph;
        worst = std::max(worst, std::abs(res));
        scale = std::max(scale, std::abs(ph));
    }
    return worst / scale;
}

// ---------------------------------------------------------------- solution

double ClosedFormSolution::shifted_mass_factor(double t) const { return mass_factor(t) * std::exp(-shift * t); }

double mass_factor(const ClosedFormSolution& sol, double t) { return sol.mass_factor(t); }

GridDensity ClosedFormSolution::on_grid(double t, double lo, double hi, std::size_t nodes) const {
    return GridDensity::tabulate(lo, hi, nodes, [&](double x) { return density1(t, x); });
}

namespace {

// Fast evaluation of a normalized mixture with precomputed factors.
class MixtureEvaluator {
public:
    explicit MixtureEvaluator(const GaussianMixture& mix) {
        const double lt = mix.log_total();
        for (const auto& c : mix.components) {
            Eigen::LLT<Eigen::MatrixXd> llt(c.cov);
            if (llt.info() != Eigen::Success) throw NumericError("mixture density: singular component covariance");
            Comp k;
            k.mean = c.mean;
            k.Linv = llt.matrixL().solve(Eigen::MatrixXd::Identity(c.cov.rows(), c.cov.cols()));
            double logdet = 0.0;
            for (Eigen::Index i = 0; i < c.cov.rows(); ++i) logdet += 2.0 * std::log(llt.matrixL()(i, i));
            k.logc = c.log_weight - lt - 0.5 * (logdet + c.cov.rows() * std::log(2.0 * std::numbers::pi));
            comps_.push_back(std::move(k));
        }
    }
    double operator()(std::span<const double> x) const {
        double s = 0.0;
        for (const auto& c : comps_) {
            const Eigen::Index n = c.mean.size();
            if (n == 1) {
                const double z = (x[0] - c.mean(0)) * c.Linv(0, 0);
                s += std::exp(c.logc - 0.5 * z * z);
            } else {
                Eigen::VectorXd d(n);
                for (Eigen::Index i = 0; i < n; ++i) d(i) = x[i] - c.mean(i);
                s += std::exp(c.logc - 0.5 * (c.Linv.triangularView<Eigen::Lower>() * d).squaredNorm());
            }
        }
        return s;
    }

private:
    struct Comp {
        Eigen::VectorXd mean;
        Eigen::MatrixXd Linv;
        double logc = 0.0;
    };
    std::vector<Comp> comps_;
};

// Thread-safe per-time cache of mixture evaluators.
struct LawCache {
    std::function<GaussianMixture(double)> law;
    std::mutex mu;
    std::map<double, std::shared_ptr<const MixtureEvaluator>> cache;

    std::shared_ptr<const MixtureEvaluator> at(double t) {
        {
            std::lock_guard lock(mu);
            auto it = cache.find(t);
            if (it != cache.end()) return it->second;
        }
        auto ev = std::make_shared<const MixtureEvaluator>(law(t));
        std::lock_guard lock(mu);
        if (cache.size() > 64) cache.clear();
        cache.emplace(t, ev);
        return ev;
    }
};

std::function<double(double, std::span<const double>)> mixture_density(std::function<GaussianMixture(double)> law,
                                                                       const InitialLaw& u0) {
    auto cache = std::make_shared<LawCache>();
    cache->law = std::move(law);
    return [cache, u0](double t, std::span<const double> x) {
        if (t == 0.0) return u0.density(x);
        return (*cache->at(t))(x);
    };
}

void check_horizon(const ClosedFormSolution& sol, double horizon) {
    try {
        const double h = sol.mass_factor(horizon);
        if (!std::isfinite(h) || !(h > 0.0)) throw NumericError("non-finite mass factor");
        sol.gaussian_law(horizon);
    } catch (const NumericError& e) {
        throw NumericError(fmt::format("{}: horizon {:g} exceeded ({})", sol.engine, horizon, e.what()));
    }
}

} // namespace

// ---------------------------------------------------------------- linear engine

ClosedFormSolution linear_engine(const DiffusionModel& model, const FitnessFunction& g, const InitialLaw& u0,
                                 double horizon) {
    const auto* coef = model.affine_coefficients();
    if (!coef || !coef->B.isZero(0.0)) throw PreconditionError("linear_engine: constant-coefficient model required");
    const auto* lin = g.linear_form();
    if (!lin) throw PreconditionError("linear_engine: linear fitness required");
    if (u0.dim() != model.dim()) throw ConfigError("linear_engine: initial law dimension mismatch");
    const auto cc = detect_constant_condition(model, g);
    if (!cc) throw PreconditionError("linear_engine: constant condition rejected: " + cc.reason);

    const Eigen::MatrixXd a = coef->a();
    const Eigen::VectorXd b = coef->b, c = lin->c;
    const double c0 = lin->c0;
    const Eigen::VectorXd ac = a * c;
    const double C1 = c.dot(b), C2sq = c.dot(ac);
    const GaussianMixture mix0 = u0.as_mixture();
    const Eigen::Index n = b.size();

    ClosedFormSolution sol;
    sol.engine = "linear";
    sol.mode = "gaussian-shift";
    sol.horizon = horizon;
    sol.shift = g.g_max();
    sol.gaussian_law = [=](double t) {
        // convolve with the tilted kernel, then multiply by e^{t c^T x}
        const Eigen::VectorXd shift = b * t - 0.5 * ac * t * t;
        const GaussianMixture conv = mix0.affine_map(Eigen::MatrixXd::Identity(n, n), shift, a * t);
        return conv.multiply_exp_quadratic(c * t, Eigen::MatrixXd::Zero(n, n)).normalized();
    };
    sol.mass_factor = [=](double t) {
        // E exp(int g) = e^{c0 t} E_rho0[e^{t c^T y}] exp(C1 t^2/2 + C2 C2^T t^3/6)
        const double lm = mix0.multiply_exp_quadratic(c * t, Eigen::MatrixXd::Zero(n, n)).log_total() - mix0.log_total();
        return std::exp(c0 * t + lm + 0.5 * C1 * t * t + C2sq * t * t * t / 6.0);
    };
    sol.mass_standard_error = [](double) { return 0.0; };
    sol.density = mixture_density(sol.gaussian_law, u0);
    check_horizon(sol, horizon);
    return sol;
}

// ---------------------------------------------------------------- Riccati

namespace {

// Solves A^T X + X A = C for X.
Eigen::MatrixXd lyapunov(const Eigen::MatrixXd& A, const Eigen::MatrixXd& C) {
    const Eigen::Index n = A.rows();
    const Eigen::MatrixXd I = Eigen::MatrixXd::Identity(n, n);
    Eigen::MatrixXd K(n * n, n * n);
    const Eigen::MatrixXd At = A.transpose();
    for (Eigen::Index i = 0; i < n; ++i)
        for (Eigen::Index j = 0; j < n; ++j)
            K.block(i * n, j * n, n, n) = I(i, j) * At + At(i, j) * I;
    const Eigen::VectorXd x = K.fullPivLu().solve(Eigen::Map<const Eigen::VectorXd>(C.data(), n * n));
    Eigen::MatrixXd X = Eigen::Map<const Eigen::MatrixXd>(x.data(), n, n);
    return 0.5 * (X + X.transpose());
}

double riccati_residual(const Eigen::MatrixXd& H, const Eigen::MatrixXd& a, const Eigen::MatrixXd& B,
                        const Eigen::MatrixXd& G) {
    return (2.0 * H * a * H - B.transpose() * H - H * B - G).norm();
}

} // namespace

RiccatiResult solve_riccati(const Eigen::MatrixXd& a, const Eigen::MatrixXd& B, const Eigen::MatrixXd& G,
                            const Tolerances& tol) {
    const Eigen::Index n = a.rows();
    if (a.cols() != n || B.rows() != n || B.cols() != n || G.rows() != n || G.cols() != n)
        throw ConfigError("solve_riccati: inconsistent shapes");
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> ea(a), eg(G);
    if ((a - a.transpose()).norm() > 1e-12 * (1 + a.norm()) || ea.eigenvalues().minCoeff() <= 0.0)
        throw ConfigError("solve_riccati: a must be symmetric positive definite");
    if ((G - G.transpose()).norm() > 1e-12 * (1 + G.norm()) || eg.eigenvalues().minCoeff() < -1e-12 * (1 + G.norm()))
        throw ConfigError("solve_riccati: G must be symmetric positive semidefinite");

    // H0 = (eta/2) a^{-1} makes B - 2 a H0 = B - eta I Hurwitz
    const double eta = std::max(0.0, B.eigenvalues().real().maxCoeff()) + 1.0;
    Eigen::MatrixXd H = 0.5 * eta * a.inverse();
    H = 0.5 * (H + H.transpose());
    RiccatiResult r;
    for (r.iterations = 1; r.iterations <= 100; ++r.iterations) {
        const Eigen::MatrixXd Gam = B - 2.0 * a * H;
        const Eigen::MatrixXd Hn = lyapunov(Gam, -(2.0 * H * a * H + G));
        const double step = (Hn - H).norm();
        H = Hn;
        r.residual = riccati_residual(H, a, B, G);
        if (!std::isfinite(r.residual)) break;
        if (r.residual <= 1e-2 * tol.riccati_residual && step <= 1e-13 * (1.0 + H.norm())) break;
    }
    r.Gamma = B - 2.0 * a * H;
    r.H = H;
    if (!(r.residual <= tol.riccati_residual))
        throw NumericError(fmt::format("solve_riccati: no convergence after {} iterations (residual {:.3g})",
                                       std::min(r.iterations, 100), r.residual));
    const double re = r.Gamma.eigenvalues().real().maxCoeff();
    if (!(re < -1e-9 * (1.0 + B.norm() + a.norm())))
        throw NumericError(fmt::format("solve_riccati: no stabilizing solution (max Re eig(B - 2aH) = {:.3g})", re));
    return r;
}

Eigen::VectorXd solve_linear_v(const Eigen::MatrixXd& H, const Eigen::MatrixXd& a, const Eigen::MatrixXd& B,
                               const Eigen::VectorXd& b, const Eigen::VectorXd& delta, const Tolerances& tol) {
    const Eigen::MatrixXd M = 2.0 * H * a - B.transpose();
    const Eigen::VectorXd rhs = 2.0 * H * b + delta;
    Eigen::FullPivLU<Eigen::MatrixXd> lu(M);
    if (!lu.isInvertible()) throw NumericError("solve_linear_v: singular system 2Ha - B^T");
    const Eigen::VectorXd v = lu.solve(rhs);
    const double res = (M * v - rhs).norm();
    if (!(res <= tol.linear_v_residual * (1.0 + rhs.norm() + M.norm() * v.norm())))
        throw NumericError(fmt::format("solve_linear_v: residual {:.3g} too large", res));
    return v;
}

Eigenpair affine_eigenpair(const Eigen::MatrixXd& H, const Eigen::VectorXd& v, double lambda) {
    Eigenpair e;
    e.lambda = lambda;
    e.source = EigenSource::affine_analytic;
    e.log_phi = [H, v](std::span<const double> x) {
        Eigen::Map<const Eigen::VectorXd> y(x.data(), v.size());
        return -v.dot(y) - y.dot(H * y);
    };
    e.phi = [lp = e.log_phi](std::span<const double> x) { return std::exp(lp(x)); };
    e.grad_log_phi = [H, v](std::span<const double> x, std::span<double> out) {
        Eigen::Map<const Eigen::VectorXd> y(x.data(), v.size());
        const Eigen::VectorXd gr = -v - 2.0 * H * y;
        for (Eigen::Index i = 0; i < v.size(); ++i) out[i] = gr(i);
    };
    e.grad_phi = [lp = e.log_phi, gl = e.grad_log_phi](std::span<const double> x, std::span<double> out) {
        gl(x, out);
        const double p = std::exp(lp(x));
        for (double& o : out) o *= p;
    };
    return e;
}

// ---------------------------------------------------------------- affine engine

ClosedFormSolution affine_engine(const DiffusionModel& model, const FitnessFunction& g, const InitialLaw& u0,
                                 double horizon, const Tolerances& tol) {
    const auto* coef = model.affine_coefficients();
    if (!coef) throw PreconditionError("affine_engine: affine model required");
    const auto* q = g.quadratic_form();
    if (!q) throw PreconditionError("affine_engine: quadratic fitness required");
    const Eigen::Index n = coef->b.size();
    if (u0.dim() != n) throw ConfigError("affine_engine: initial law dimension mismatch");
    const Eigen::MatrixXd a = coef->a();
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> ea(a);
    if (ea.eigenvalues().minCoeff() <= 1e-12 * std::max(1.0, a.norm()))
        throw PreconditionError("affine_engine: sigma sigma^T must be positive definite");

    ClosedFormSolution sol;
    sol.engine = "affine";
    sol.horizon = horizon;
    sol.shift = g.g_max();

    // r(x) >= 0 is reported, not enforced (Gaussian algebra does not need it).
    {
        const auto pts = probe_points(static_cast<int>(n), 256, -5.0, 5.0);
        double rmin = std::numeric_limits<double>::infinity();
        for (std::size_t i = 0; i < 256; ++i) rmin = std::min(rmin, -g(std::span<const double>(pts.data() + i * n, n)));
        if (rmin < 0.0) sol.notes.push_back(fmt::format("r(x) = -g(x) takes negative values on probes (min {:.3g})", rmin));
    }

    const GaussianMixture mix0 = u0.as_mixture();
    std::optional<RiccatiResult> ric;
    try {
        ric = solve_riccati(a, coef->B, q->G, tol);
    } catch (const NumericError& e) {
        if (!q->G.isZero(0.0)) throw PreconditionError(std::string("affine_engine: ") + e.what());
        sol.notes.push_back(std::string("Riccati: ") + e.what() + "; using the augmented-state reduction");
    }

    if (ric) {
        const Eigen::MatrixXd& H = ric->H;
        const Eigen::VectorXd v = solve_linear_v(H, a, coef->B, coef->b, q->delta, tol);
        const double lambda = q->alpha + (a * H).trace() + v.dot(coef->b) - 0.5 * v.dot(a * v);
        const Eigen::MatrixXd Gam = ric->Gamma;
        const Eigen::VectorXd beta = coef->b - a * v;
        sol.mode = "eigen";
        sol.eigenpair = affine_eigenpair(H, v, lambda);
        sol.notes.push_back(fmt::format("Riccati residual {:.3g} after {} iterations", ric->residual, ric->iterations));
        const GaussianMixture tilted0 = mix0.multiply_exp_quadratic(-v, H);
        auto unnormalized = [=](double t) {
            const GaussianMixture moved = tilted0.affine_map(matrix_exp(Gam, t), mean_integral(Gam, beta, t),
                                                             covariance_integral(Gam, a, t));
            return moved.multiply_exp_quadratic(v, -H);
        };
        sol.gaussian_law = [=](double t) { return unnormalized(t).normalized(); };
        sol.mass_factor = [=](double t) {
            return std::exp(-lambda * t + unnormalized(t).log_total() - mix0.log_total());
        };
    } else {
        // Augmented state Z = (X, Y), dY = g(X) dt; weight by e^{Y}.
        Eigen::MatrixXd A = Eigen::MatrixXd::Zero(n + 1, n + 1);
        A.topLeftCorner(n, n) = coef->B;
        A.block(n, 0, 1, n) = -q->delta.transpose();
        Eigen::VectorXd bh(n + 1);
        bh << coef->b, -q->alpha;
        Eigen::MatrixXd ah = Eigen::MatrixXd::Zero(n + 1, n + 1);
        ah.topLeftCorner(n, n) = a;
        GaussianMixture aug;
        for (const auto& c : mix0.components) {
            GaussianComponent z;
            z.log_weight = c.log_weight;
            z.mean = Eigen::VectorXd::Zero(n + 1);
            z.mean.head(n) = c.mean;
            z.cov = Eigen::MatrixXd::Zero(n + 1, n + 1);
            z.cov.topLeftCorner(n, n) = c.cov;
            aug.components.push_back(std::move(z));
        }
        sol.mode = "degenerate";
        auto weighted = [=](double t) {
            const GaussianMixture moved = aug.affine_map(matrix_exp(A, t), mean_integral(A, bh, t),
                                                         covariance_integral(A, ah, t));
            Eigen::VectorXd l = Eigen::VectorXd::Zero(n + 1);
            l(n) = 1.0;
            GaussianMixture w = moved.multiply_exp_quadratic(l, Eigen::MatrixXd::Zero(n + 1, n + 1));
            GaussianMixture x;
            for (auto& c : w.components)
                x.components.push_back({c.log_weight, c.mean.head(n), c.cov.topLeftCorner(n, n)});
            return x;
        };
        sol.gaussian_law = [=](double t) { return weighted(t).normalized(); };
        sol.mass_factor = [=](double t) { return std::exp(weighted(t).log_total() - mix0.log_total()); };
    }
    sol.mass_standard_error = [](double) { return 0.0; };
    sol.density = mixture_density(sol.gaussian_law, u0);
    check_horizon(sol, horizon);
    return sol;
}

// ---------------------------------------------------------------- tilted engine

ClosedFormSolution tilted_engine(const DiffusionModel& model, const FitnessFunction& g, const Eigenpair& pair,
                                 const InitialLaw& u0, const TiltedEngineOptions& opts, const Tolerances& tol) {
    if (model.dim() != 1 || model.noise_dim() != 1) throw PreconditionError("tilted_engine: 1D models only");
    if (u0.dim() != 1) throw ConfigError("tilted_engine: initial law dimension mismatch");
    if (!pair.phi || !pair.log_phi || !pair.grad_log_phi) throw ConfigError("tilted_engine: incomplete eigenpair");
    if (opts.times.empty() || opts.paths < 2) throw ConfigError("tilted_engine: need times and at least 2 paths");
    const bool half = model.domain().kind == DomainKind::half_line;

    ClosedFormSolution sol;
    sol.engine = "tilted";
    sol.mode = to_string(pair.source);
    sol.shift = g.g_max();
    sol.eigenpair = pair;

    if (opts.check_residual) {
        double lo = opts.probe_range.first, hi = opts.probe_range.second;
        if (half) lo = std::max(lo, 0.1);
        const auto probes = probe_points(1, opts.probes, lo, hi);
        const double res = eigenpair_residual(model, g, pair, probes);
        const double lim = residual_tolerance(pair.source, tol);
        sol.notes.push_back(fmt::format("eigenpair residual {:.3g} (limit {:.3g})", res, lim));
        if (!(res <= lim)) throw PreconditionError(fmt::format("tilted_engine: eigenpair residual {:.3g} exceeds {:.3g}", res, lim));
    }

    auto lphi = [&](double x) { return pair.log_phi(std::span<const double>(&x, 1)); };

    // Reweighted initial law phi(y) u0(y) / Z0, with log Z0 tracked.
    double logZ0 = 0.0;
    InitialLaw tilted0 = u0;
    if (u0.kind() == LawKind::point_cloud) {
        std::vector<double> lw;
        for (const auto& p : u0.points()) lw.push_back(lphi(p(0)));
        for (std::size_t i = 0; i < lw.size(); ++i) lw[i] += std::log(u0.weights()[i]);
        logZ0 = log_sum_exp(lw);
        std::vector<double> w(lw.size());
        for (std::size_t i = 0; i < lw.size(); ++i) w[i] = std::exp(lw[i] - logZ0);
        tilted0 = InitialLaw::point_cloud(u0.points(), w);
    } else {
        std::vector<double> xs;
        if (u0.kind() == LawKind::grid) {
            xs = u0.grid_density()->x;
        } else {
            auto [lo, hi] = u0.support_hint(12.0);
            for (int expand = 0;; ++expand) {
                xs = linspace(lo, hi, opts.init_nodes);
                std::vector<double> lf(xs.size());
                for (std::size_t i = 0; i < xs.size(); ++i) lf[i] = lphi(xs[i]) + std::log(u0.density(std::span<const double>(&xs[i], 1)));
                const double mx = *std::max_element(lf.begin(), lf.end());
                const bool left = lf.front() - mx > -36.0, right = lf.back() - mx > -36.0;
                if ((!left && !right) || expand == 8) break;
                const double w = hi - lo;
                if (left) lo -= 0.5 * w;
                if (right) hi += 0.5 * w;
            }
        }
        std::vector<double> lf(xs.size());
        for (std::size_t i = 0; i < xs.size(); ++i) {
            const double d = u0.density(std::span<const double>(&xs[i], 1));
            lf[i] = d > 0.0 ? lphi(xs[i]) + std::log(d) : -std::numeric_limits<double>::infinity();
        }
        const double mx = *std::max_element(lf.begin(), lf.end());
        if (!std::isfinite(mx)) throw NumericError("tilted_engine: phi u0 vanishes on the initial grid");
        std::vector<double> f(xs.size());
        for (std::size_t i = 0; i < xs.size(); ++i) f[i] = std::exp(lf[i] - mx);
        GridDensity gd(xs, f);
        logZ0 = std::log(gd.integral()) + mx;
        gd.normalize();
        tilted0 = InitialLaw::grid(gd);
    }
    const auto y0 = sample_initial(tilted0, opts.paths, derive_seed(opts.seed, "tilted-initial"), &model.domain());

    const double Tmax = *std::max_element(opts.times.begin(), opts.times.end());
    if (!(Tmax > 0.0)) throw ConfigError("tilted_engine: times must include a positive value");
    const TimeGrid grid = TimeGrid::per_unit(Tmax, opts.steps_per_unit);
    std::vector<std::size_t> rec;
    for (double t : opts.times) {
        const double k = t / grid.dt();
        const auto kr = static_cast<std::size_t>(std::llround(k));
        if (std::abs(k - static_cast<double>(kr)) > 1e-6) throw ConfigError(fmt::format("tilted_engine: time {:g} not on the grid", t));
        rec.push_back(kr);
    }
    auto extra = [model, gl = pair.grad_log_phi](double, std::span<const double> x, std::span<double> out) {
        double gr = 0.0;
        gl(x, std::span<double>(&gr, 1));
        const double s = model.sigma1(x[0]);
        out[0] = s * s * gr;
    };
    SimulationOptions so;
    so.record_steps = rec;
    so.threads = opts.threads;
    const PathBundle paths = simulate(TiltedDrift{model, extra}, y0, grid, derive_seed(opts.seed, "tilted-paths"), so);

    const double log_clip = std::log(1e-12);
    auto hs = std::make_shared<std::vector<std::pair<double, std::pair<double, double>>>>();
    std::vector<double> pts(paths.particles), lw(paths.particles);
    for (std::size_t r = 0; r < paths.records(); ++r) {
        for (std::size_t p = 0; p < paths.particles; ++p) {
            pts[p] = paths.position(p, r)[0];
            lw[p] = -lphi(pts[p]);
        }
        // mass factor: e^{-lambda t} Z0 mean(1/phi)
        const double t = paths.times[r];
        const double lmean = log_sum_exp(lw) - std::log(static_cast<double>(paths.particles));
        double var = 0.0;
        for (double v : lw) var += std::pow(std::exp(v - lmean) - 1.0, 2);
        var /= (paths.particles - 1);
        const double h = std::exp(-pair.lambda * t + logZ0 + lmean);
        hs->push_back({t, {h, h * std::sqrt(var / paths.particles)}});

        KdeOptions ko = opts.kde;
        if (half) ko.lower_bound = 0.0;
        GridDensity q = kde(pts, {}, ko);
        double lmax = -std::numeric_limits<double>::infinity();
        std::vector<double> lp(q.size());
        for (std::size_t j = 0; j < q.size(); ++j) lmax = std::max(lmax, lp[j] = lphi(q.x[j]));
        std::vector<double> clipped(q.size(), 0.0);
        for (std::size_t j = 0; j < q.size(); ++j) {
            if (lp[j] - lmax < log_clip) {
                clipped[j] = q.values[j];
                q.values[j] = 0.0;
            } else {
                q.values[j] = q.values[j] * std::exp(lmax - lp[j]);
            }
        }
        const double loss = trapezoid(q.x, clipped);
        if (loss > tol.tilted_clip_mass) sol.notes.push_back(fmt::format("clip mass {:.3g} at t = {:g}", loss, t));
        q.normalize();
        sol.times.push_back(t);
        sol.grids.push_back(std::move(q));
    }
    sol.horizon = Tmax;

    auto lookup = [hs](double t) -> const std::pair<double, double>& {
        for (const auto& e : *hs)
            if (std::abs(e.first - t) <= 1e-9 * (1.0 + t)) return e.second;
        throw ConfigError(fmt::format("tilted_engine: no estimate stored at t = {:g}", t));
    };
    sol.mass_factor = [lookup](double t) { return t == 0.0 ? 1.0 : lookup(t).first; };
    sol.mass_standard_error = [lookup](double t) { return t == 0.0 ? 0.0 : lookup(t).second; };
    auto grids = std::make_shared<std::vector<GridDensity>>(sol.grids);
    auto times = sol.times;
    sol.density = [grids, times, u0](double t, std::span<const double> x) {
        for (std::size_t i = 0; i < times.size(); ++i)
            if (std::abs(times[i] - t) <= 1e-9 * (1.0 + t)) return (*grids)[i](x[0]);
        if (t == 0.0) return u0.density(x);
        throw ConfigError(fmt::format("tilted_engine: density not stored at t = {:g}", t));
    };
    return sol;
}

} // namespace rmsolve
