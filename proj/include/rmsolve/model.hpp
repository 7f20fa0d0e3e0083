#pragma once

#include "rmsolve/gaussian.hpp"
#include "rmsolve/numerics.hpp"

#include <Eigen/Dense>

#include <cstdint>
#include <functional>
#include <optional>
#include <span>
#include <string>
#include <utility>
#include <vector>

namespace rmsolve {

enum class DomainKind { full_space, half_line, box };

struct DomainSpec {
    DomainKind kind = DomainKind::full_space;
    int dim = 1;
    std::vector<double> lower, upper;  // box only

    static DomainSpec full_space(int n);
    static DomainSpec half_line();
    static DomainSpec box(std::vector<double> lo, std::vector<double> hi);

    bool contains(std::span<const double> x) const;
};

enum class ModelKind { arithmetic_bm, ou, cir, affine, custom };
std::string to_string(ModelKind k);

// x -> out, with out of length n (drift) or n*m row-major (diffusion).
using FieldFn = std::function<void(std::span<const double>, std::span<double>)>;
using ScalarFn = std::function<double(std::span<const double>)>;

struct AffineCoefficients {
    Eigen::VectorXd b;      // drift b + B x
    Eigen::MatrixXd B;
    Eigen::MatrixXd sigma;  // constant n x m
    Eigen::MatrixXd a() const { return sigma * sigma.transpose(); }
};

struct CirParams {
    double a = 0.0, b = 0.0, sigma = 0.0;  // dX = (a + bX)dt + sigma sqrt(X) dW
};

class DiffusionModel {
public:
    static DiffusionModel arithmetic_bm(Eigen::VectorXd drift, Eigen::MatrixXd sigma);
    static DiffusionModel ou(double kappa, double theta, double sigma);
    static DiffusionModel affine(Eigen::VectorXd b, Eigen::MatrixXd B, Eigen::MatrixXd sigma);
    static DiffusionModel cir(double a, double b, double sigma);
    static DiffusionModel custom(DomainSpec domain, int noise_dim, FieldFn drift, FieldFn diffusion,
                                 bool declared_lipschitz);

    int dim() const { return domain_.dim; }
    int noise_dim() const { return m_; }
    ModelKind kind() const { return kind_; }
    const DomainSpec& domain() const { return domain_; }
    bool declared_lipschitz() const { return lipschitz_; }

    void drift(std::span<const double> x, std::span<double> out) const { drift_(x, out); }
    void diffusion(std::span<const double> x, std::span<double> out) const { diffusion_(x, out); }
    // a(x) = sigma sigma^T, n x n.
    Eigen::MatrixXd diffusion_matrix(std::span<const double> x) const;

    // Present for arithmetic_bm, ou and affine kinds.
    const AffineCoefficients* affine_coefficients() const { return affine_ ? &*affine_ : nullptr; }
    const CirParams* cir_params() const { return cir_ ? &*cir_ : nullptr; }

    // Scalar helpers for 1D models.
    double drift1(double x) const;
    double sigma1(double x) const;

private:
    static DiffusionModel from_affine(ModelKind kind, AffineCoefficients coef);

    DomainSpec domain_;
    ModelKind kind_ = ModelKind::custom;
    int m_ = 1;
    bool lipschitz_ = true;
    FieldFn drift_, diffusion_;
    std::optional<AffineCoefficients> affine_;
    std::optional<CirParams> cir_;
};

struct LinearForm {       // g(x) = c^T x + c0
    Eigen::VectorXd c;
    double c0 = 0.0;
};
struct QuadraticForm {    // g(x) = -(alpha + delta^T x + x^T G x)
    double alpha = 0.0;
    Eigen::VectorXd delta;
    Eigen::MatrixXd G;
};
struct Polynomial1D {     // g(x) = sum_k coeffs[k] x^k
    std::vector<double> coeffs;
};

class FitnessFunction {
public:
    static FitnessFunction constant(int dim, double c);
    static FitnessFunction linear(Eigen::VectorXd c, double c0, double g_max);
    // g_max derived when G is positive definite; otherwise it must be supplied.
    static FitnessFunction quadratic(double alpha, Eigen::VectorXd delta, Eigen::MatrixXd G,
                                     std::optional<double> g_max = std::nullopt);
    // g_max derived for confining polynomials (even degree, negative leading term).
    static FitnessFunction polynomial(std::vector<double> coeffs, std::optional<double> g_max = std::nullopt);
    static FitnessFunction custom(int dim, ScalarFn g, double g_max, bool bounded_above,
                                  std::vector<double> modulus);

    double operator()(std::span<const double> x) const { return eval_(x); }
    double operator()(double x) const { return eval_(std::span<const double>(&x, 1)); }
    double shifted(std::span<const double> x) const { return eval_(x) - g_max_; }

    int dim() const { return dim_; }
    double g_max() const { return g_max_; }
    bool bounded_above() const { return bounded_above_; }
    // Q_g coefficients: Q(r) = sum_k q_k r^k.
    const std::vector<double>& modulus() const { return modulus_; }
    double modulus_at(double r) const;

    const LinearForm* linear_form() const { return linear_ ? &*linear_ : nullptr; }
    const QuadraticForm* quadratic_form() const { return quad_ ? &*quad_ : nullptr; }
    const Polynomial1D* polynomial_form() const { return poly_ ? &*poly_ : nullptr; }

    // g + c. With shift_bound the sup bound moves too, so shifted values agree.
    FitnessFunction plus_constant(double c, bool shift_bound = true) const;
    FitnessFunction with_modulus(std::vector<double> q) const;
    FitnessFunction with_g_max(double g_max) const;

private:
    int dim_ = 1;
    ScalarFn eval_;
    double g_max_ = 0.0;
    bool bounded_above_ = true;
    std::vector<double> modulus_;
    std::optional<LinearForm> linear_;
    std::optional<QuadraticForm> quad_;
    std::optional<Polynomial1D> poly_;
};

enum class LawKind { gaussian, mixture, point_cloud, grid };

class InitialLaw {
public:
    static InitialLaw gaussian(Eigen::VectorXd mean, Eigen::MatrixXd cov);
    static InitialLaw mixture(std::vector<double> weights, std::vector<InitialLaw> gaussians);
    static InitialLaw point_cloud(std::vector<Eigen::VectorXd> points, std::vector<double> weights = {});
    static InitialLaw grid(GridDensity density);

    LawKind kind() const { return kind_; }
    int dim() const { return dim_; }
    bool has_density() const { return kind_ != LawKind::point_cloud; }
    // Throws ConfigError for point clouds.
    double density(std::span<const double> x) const;
    // E|X|^p.
    double moment(int p) const;
    // Exact mixture form; grid densities become node point masses with trapezoid weights.
    GaussianMixture as_mixture() const;
    const GridDensity* grid_density() const { return grid_ ? &*grid_ : nullptr; }
    const std::vector<Eigen::VectorXd>& points() const { return points_; }
    const std::vector<double>& weights() const { return weights_; }
    // Smallest interval holding essentially all mass (1D), for tabulation.
    std::pair<double, double> support_hint(double sds = 12.0) const;

private:
    LawKind kind_ = LawKind::gaussian;
    int dim_ = 1;
    GaussianMixture mix_;                 // gaussian and mixture kinds
    std::vector<Eigen::VectorXd> points_; // point cloud
    std::vector<double> weights_;         // point cloud / mixture weights (normalized)
    std::optional<GridDensity> grid_;
};

// Deterministic in (seed, index): point i depends only on (seed, i).
// Returns count x n values, row-major. Throws ConfigError when the law can
// place mass outside `domain`.
std::vector<double> sample_initial(const InitialLaw& law, std::size_t count, std::uint64_t seed,
                                   const DomainSpec* domain = nullptr);

struct ModelReport {
    bool hard_failure = false;
    std::size_t lipschitz_pairs = 0;
    double max_drift_ratio = 0.0;
    double max_diffusion_ratio = 0.0;
    std::optional<bool> feller_ok;
    std::optional<bool> positive_definite;
    std::vector<std::string> messages;
};

ModelReport validate_model(const DiffusionModel& model);
// Throws ConfigError naming the violated condition.
void require_valid(const DiffusionModel& model);

struct ModulusViolation {
    std::vector<double> x, y;
    double lhs = 0.0, rhs = 0.0;
};
struct ModulusReport {
    std::size_t checked = 0;
    std::vector<ModulusViolation> violations;
};
ModulusReport check_fitness_modulus(const FitnessFunction& g,
                                    const std::vector<std::pair<std::vector<double>, std::vector<double>>>& pairs);

// Max of g over `count` quasi-random points of the domain (box [-R, R]^n
// clipped to the domain). Used by the g <= g_max invariant.
double probe_fitness_max(const FitnessFunction& g, const DomainSpec& domain, std::size_t count, double radius = 10.0);

// Finite-difference derivatives (see tolerances for steps).
Eigen::VectorXd fd_gradient(const ScalarFn& f, std::span<const double> x);
Eigen::MatrixXd fd_hessian(const ScalarFn& f, std::span<const double> x);
// (A f)(x) = b.grad f + 1/2 tr(a Hess f), by finite differences.
double apply_generator(const DiffusionModel& model, const ScalarFn& f, std::span<const double> x);

} // namespace rmsolve
