#include "rmsolve/spectral.hpp"

#include "rmsolve/errors.hpp"
#include "rmsolve/numerics.hpp"

#include <boost/math/interpolators/cardinal_cubic_b_spline.hpp>
#include <fmt/format.h>

#include <algorithm>
#include <cmath>
#include <limits>
#include <memory>

namespace rmsolve {

double kummer_M(double a, double b, double z) {
    if (!std::isfinite(a) || !std::isfinite(b) || !std::isfinite(z)) throw ConfigError("kummer_M: non-finite argument");
    if (b <= 0.0 && b == std::floor(b)) throw ConfigError(fmt::format("kummer_M: b = {:g} is a pole", b));
    if (std::abs(z) > 500.0) throw ConfigError(fmt::format("kummer_M: |z| = {:g} outside the supported range", z));
    if (z < 0.0) return std::exp(z) * kummer_M(b - a, b, -z);
    double term = 1.0, sum = 1.0;
    int quiet = 0;
    for (int n = 0; n < 20000; ++n) {
        term *= (a + n) / (b + n) * z / (n + 1);
        sum += term;
        if (term == 0.0) return sum;
        if (std::abs(term) <= 1e-16 * std::abs(sum) && n + 1 > std::abs(a)) {
            if (++quiet == 2) return sum;
        } else {
            quiet = 0;
        }
    }
    throw NumericError(fmt::format("kummer_M: series did not converge at a={:g}, b={:g}, z={:g}", a, b, z));
}

double cir_lambda0(double a, double b, double sigma) {
    return a * (std::sqrt(b * b + 2 * sigma * sigma) + b) / (sigma * sigma);
}

KummerParams kummer_params(double a, double b, double sigma, double lambda) {
    if (!(a > 0.0) || !(sigma > 0.0)) throw ConfigError("kummer_params: a and sigma must be positive");
    KummerParams p;
    p.a = a;
    p.b = b;
    p.sigma = sigma;
    p.lambda = lambda;
    p.kappa = -b;
    p.gamma = std::sqrt(p.kappa * p.kappa + 2 * sigma * sigma);
    p.lambda0 = cir_lambda0(a, b, sigma);
    p.alpha = (lambda - p.lambda0) / p.gamma;
    p.beta = 2 * a / (sigma * sigma);
    p.scale = 2 * p.gamma / (sigma * sigma);
    return p;
}

double cir_tilted_drift(const KummerParams& p, double x) {
    double r = p.a - p.gamma * x;
    if (p.alpha != 0.0)
        r += 2 * p.alpha * p.gamma / p.beta * x * kummer_M(p.alpha + 1, p.beta + 1, p.scale * x) /
             kummer_M(p.alpha, p.beta, p.scale * x);
    return r;
}

Eigenpair cir_eigenpair(double a, double b, double sigma, double lambda) {
    if (2 * a < sigma * sigma) throw ConfigError("cir_eigenpair: Feller condition 2a >= sigma^2 violated");
    const KummerParams p = kummer_params(a, b, sigma, lambda);
    if (lambda > p.lambda0 * (1 + 1e-12) + 1e-15)
        throw PreconditionError(fmt::format("cir_eigenpair: lambda = {:g} exceeds lambda0 = {:g}", lambda, p.lambda0));
    const double alpha = std::min(p.alpha, 0.0);
    if (alpha != 0.0) {
        // M(alpha, beta, z) with -1 < alpha < 0 eventually turns negative; find out where.
        for (double z = 0.0; z <= 500.0; z += 0.25)
            if (!(kummer_M(alpha, p.beta, z) > 0.0))
                throw PreconditionError(fmt::format(
                    "cir_eigenpair: phi changes sign near x = {:.3g} for lambda < lambda0; use lambda0", z / p.scale));
    }
    const double c = (p.kappa - p.gamma) / (sigma * sigma);
    const double beta = p.beta, scale = p.scale;
    Eigenpair e;
    e.lambda = lambda;
    e.source = EigenSource::kummer;
    e.log_phi = [=](std::span<const double> x) {
        const double y = std::max(x[0], 0.0);
        return alpha == 0.0 ? c * y : c * y + std::log(kummer_M(alpha, beta, scale * y));
    };
    e.phi = [lp = e.log_phi](std::span<const double> x) { return std::exp(lp(x)); };
    e.grad_log_phi = [=](std::span<const double> x, std::span<double> out) {
        const double y = std::max(x[0], 0.0);
        out[0] = c;
        if (alpha != 0.0)
            out[0] += scale * alpha / beta * kummer_M(alpha + 1, beta + 1, scale * y) / kummer_M(alpha, beta, scale * y);
    };
    e.grad_phi = [lp = e.log_phi, gl = e.grad_log_phi](std::span<const double> x, std::span<double> out) {
        gl(x, out);
        out[0] *= std::exp(lp(x));
    };
    return e;
}

DiffusionModel schrodinger_model(double sigma) {
    return DiffusionModel::arithmetic_bm(Eigen::VectorXd::Zero(1), Eigen::MatrixXd::Constant(1, 1, std::sqrt(2.0) * sigma));
}

namespace {

// Solves the symmetric tridiagonal system (diag d, off-diagonal e) in place.
void thomas(const std::vector<double>& d, double e, std::vector<double>& rhs) {
    const std::size_t n = d.size();
    std::vector<double> c(n);
    double den = d[0];
    c[0] = e / den;
    rhs[0] /= den;
    for (std::size_t i = 1; i < n; ++i) {
        den = d[i] - e * c[i - 1];
        if (den == 0.0) throw NumericError("schrodinger_ground_state: singular tridiagonal system");
        c[i] = e / den;
        rhs[i] = (rhs[i] - e * rhs[i - 1]) / den;
    }
    for (std::size_t i = n - 1; i-- > 0;) rhs[i] -= c[i] * rhs[i + 1];
}

} // namespace

GroundState schrodinger_ground_state(const SchrodingerProblem& pr) {
    if (!(pr.sigma > 0.0) || !(pr.L > 0.0)) throw ConfigError("schrodinger_ground_state: sigma and L must be positive");
    if (pr.M < 256) throw ConfigError("schrodinger_ground_state: at least 256 grid nodes required");
    if (pr.g.dim() != 1) throw ConfigError("schrodinger_ground_state: 1D fitness required");
    const double g0 = pr.g(0.0);
    if (!(pr.g(-pr.L) < g0) || !(pr.g(pr.L) < g0))
        throw ConfigError("schrodinger_ground_state: fitness is not confining on the grid (g(+-L) >= g(0))");

    GroundState gs;
    gs.x = linspace(-pr.L, pr.L, pr.M);
    const double h = gs.x[1] - gs.x[0];
    const std::size_t n = pr.M - 2;
    double gmax = -std::numeric_limits<double>::infinity();
    for (double x : gs.x) gmax = std::max(gmax, pr.g(x));
    gs.shift = gmax;
    const double s2 = pr.sigma * pr.sigma / (h * h);
    std::vector<double> d(n);
    for (std::size_t i = 0; i < n; ++i) d[i] = 2 * s2 - (pr.g(gs.x[i + 1]) - gmax);
    const double e = -s2;

    // Inverse iteration; the matrix is a positive definite M-matrix, so the
    // iterates stay positive.
    std::vector<double> y(n, 1.0), prev(n);
    double lam = 0.0;
    auto normalize = [&](std::vector<double>& v) {
        double s = 0.0;
        for (double t : v) s += t * t;
        s = std::sqrt(s * h);
        for (double& t : v) t /= s;
    };
    normalize(y);
    for (gs.iterations = 1; gs.iterations <= 10000; ++gs.iterations) {
        prev = y;
        thomas(d, e, y);
        normalize(y);
        double diff = 0.0;
        for (std::size_t i = 0; i < n; ++i) diff = std::max(diff, std::abs(y[i] - prev[i]));
        if (diff <= 1e-13) break;
    }
    double num = 0.0, den = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
        double ty = d[i] * y[i];
        if (i > 0) ty += e * y[i - 1];
        if (i + 1 < n) ty += e * y[i + 1];
        num += y[i] * ty;
        den += y[i] * y[i];
    }
    lam = num / den;
    double ymax = 0.0;
    for (double t : y) {
        if (!(t > 0.0)) throw NumericError("schrodinger_ground_state: ground state is not positive on the grid");
        ymax = std::max(ymax, t);
    }
    gs.boundary_ratio = std::max(y.front(), y.back()) / ymax;
    if (!(gs.boundary_ratio < 1e-10))
        throw ConfigError(fmt::format("schrodinger_ground_state: boundary value {:.3g} of max; enlarge the grid (try L = {:g})",
                                      gs.boundary_ratio, 1.5 * pr.L));

    gs.phi.assign(pr.M, 0.0);
    std::copy(y.begin(), y.end(), gs.phi.begin() + 1);
    std::vector<double> lp(n);
    for (std::size_t i = 0; i < n; ++i) lp[i] = std::log(y[i]);
    auto spline = std::make_shared<boost::math::interpolators::cardinal_cubic_b_spline<double>>(lp.begin(), lp.end(),
                                                                                               gs.x[1], h);
    const double xl = gs.x[1], xr = gs.x[n], fl = lp.front(), fr = lp.back();
    const double dl = spline->prime(xl), dr = spline->prime(xr);

    Eigenpair& ep = gs.pair;
    ep.lambda = lam - gmax;
    ep.source = EigenSource::schrodinger_grid;
    ep.log_phi = [=](std::span<const double> x) {
        if (x[0] < xl) return fl + dl * (x[0] - xl);
        if (x[0] > xr) return fr + dr * (x[0] - xr);
        return (*spline)(x[0]);
    };
    ep.phi = [lp = ep.log_phi](std::span<const double> x) { return std::exp(lp(x)); };
    ep.grad_log_phi = [=](std::span<const double> x, std::span<double> out) {
        out[0] = x[0] < xl ? dl : x[0] > xr ? dr : spline->prime(x[0]);
    };
    ep.grad_phi = [lp = ep.log_phi, gl = ep.grad_log_phi](std::span<const double> x, std::span<double> out) {
        gl(x, out);
        out[0] *= std::exp(lp(x));
    };
    return gs;
}

PinskyReport pinsky_diagnostic(const DiffusionModel& model, const ScalarFn& phi, double x0) {
    if (model.dim() != 1) throw ConfigError("pinsky_diagnostic: 1D model required");
    const DomainSpec& dom = model.domain();
    double lo_lim = -std::numeric_limits<double>::infinity(), hi_lim = std::numeric_limits<double>::infinity();
    if (dom.kind == DomainKind::half_line) lo_lim = 1e-6;
    if (dom.kind == DomainKind::box) {
        lo_lim = dom.lower[0];
        hi_lim = dom.upper[0];
    }
    auto f = [&](double x) { return phi(std::span<const double>(&x, 1)); };
    // Nested integral from x0 toward `end` on an evenly spaced grid.
    auto nested = [&](double end) {
        const std::size_t N = 2049;
        const auto xs = linspace(x0, end, N);
        std::vector<double> B(N, 0.0), inner(N, 0.0), outer(N, 0.0), r(N), m(N);
        for (std::size_t i = 0; i < N; ++i) {
            const double s = model.sigma1(xs[i]);
            r[i] = 2 * model.drift1(xs[i]) / (s * s);
        }
        for (std::size_t i = 1; i < N; ++i) B[i] = B[i - 1] + 0.5 * (r[i] + r[i - 1]) * (xs[i] - xs[i - 1]);
        for (std::size_t i = 0; i < N; ++i) {
            const double s = model.sigma1(xs[i]);
            m[i] = f(xs[i]) * f(xs[i]) / (s * s) * std::exp(B[i]);
        }
        for (std::size_t i = 1; i < N; ++i) inner[i] = inner[i - 1] + 0.5 * (m[i] + m[i - 1]) * std::abs(xs[i] - xs[i - 1]);
        for (std::size_t i = 0; i < N; ++i) {
            const double p = f(xs[i]);
            m[i] = std::exp(-B[i]) / (p * p) * inner[i];
        }
        double total = 0.0;
        for (std::size_t i = 1; i < N; ++i) total += 0.5 * (m[i] + m[i - 1]) * std::abs(xs[i] - xs[i - 1]);
        return std::isnan(total) ? std::numeric_limits<double>::infinity() : total;
    };
    PinskyReport rep;
    for (int k = 1; k <= 8; ++k) {
        const double w = std::ldexp(1.0, k);
        rep.rows.push_back({k, nested(std::max(x0 - w, lo_lim)), nested(std::min(x0 + w, hi_lim))});
    }
    auto trend = [&](auto get) {
        bool mono = true;
        for (std::size_t i = 1; i < rep.rows.size(); ++i) mono = mono && get(rep.rows[i]) >= get(rep.rows[i - 1]);
        const double last = get(rep.rows.back()), mid = get(rep.rows[4]);
        if (mono && (std::isinf(last) || last > 1.5 * mid)) return std::string("consistent with divergence");
        return std::string("inconclusive");
    };
    rep.left_trend = trend([](const PinskyRow& r) { return r.left; });
    rep.right_trend = trend([](const PinskyRow& r) { return r.right; });
    return rep;
}

std::string eigenpair_csv(const Eigenpair& pair, double lo, double hi, std::size_t nodes) {
    std::string out = "x,phi,dphi\n";
    for (double x : linspace(lo, hi, nodes)) {
        double d = 0.0;
        pair.grad_phi(std::span<const double>(&x, 1), std::span<double>(&d, 1));
        out += fmt::format("{:.17g},{:.17g},{:.17g}\n", x, pair.phi(std::span<const double>(&x, 1)), d);
    }
    return out;
}

} // namespace rmsolve
