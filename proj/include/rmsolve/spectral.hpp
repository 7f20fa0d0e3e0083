#pragma once

#include "rmsolve/closed_form.hpp"
#include "rmsolve/model.hpp"

#include <string>
#include <vector>

namespace rmsolve {

// Confluent hypergeometric M(a, b, z). Series for z >= 0, Kummer's
// transformation for z < 0. |z| up to 500 is accepted.
double kummer_M(double a, double b, double z);

struct KummerParams {
    double a = 0.0, b = 0.0, sigma = 0.0, lambda = 0.0;
    double kappa = 0.0, gamma = 0.0, lambda0 = 0.0;
    double alpha = 0.0, beta = 0.0, scale = 0.0;  // scale = 2 gamma / sigma^2
};
double cir_lambda0(double a, double b, double sigma);
KummerParams kummer_params(double a, double b, double sigma, double lambda);

// Eigenpair for CIR with g(x) = -x. Rejects lambda > lambda0 and any lambda
// whose Kummer factor changes sign on the half-line.
Eigenpair cir_eigenpair(double a, double b, double sigma, double lambda);
// a - gamma x + (2 alpha gamma / beta) x M(alpha+1, beta+1, .)/M(alpha, beta, .)
double cir_tilted_drift(const KummerParams& p, double x);

struct SchrodingerProblem {
    double sigma = 1.0;           // generator sigma^2 d^2/dx^2
    FitnessFunction g;
    double L = 8.0;
    std::size_t M = 2048;
};

struct GroundState {
    Eigenpair pair;
    std::vector<double> x;
    std::vector<double> phi;      // L2-normalized on the grid
    double shift = 0.0;           // constant subtracted from g before solving
    double boundary_ratio = 0.0;  // max |phi| at the outer nodes / max |phi|
    int iterations = 0;
};

// Smallest eigenvalue of -sigma^2 phi'' - g phi on [-L, L] with Dirichlet ends.
GroundState schrodinger_ground_state(const SchrodingerProblem& problem);

// Brownian model whose generator is sigma^2 d^2/dx^2.
DiffusionModel schrodinger_model(double sigma);

struct PinskyRow {
    int k = 0;
    double left = 0.0;
    double right = 0.0;
};
struct PinskyReport {
    std::vector<PinskyRow> rows;
    std::string left_trend;
    std::string right_trend;
};
// Heuristic growth check of the two nested integrals on [x0 - 2^k, x0] and
// [x0, x0 + 2^k], k = 1..8. Never a pass/fail gate.
PinskyReport pinsky_diagnostic(const DiffusionModel& model, const ScalarFn& phi, double x0);

// "x,phi,dphi" rows on [lo, hi].
std::string eigenpair_csv(const Eigenpair& pair, double lo, double hi, std::size_t nodes);

} // namespace rmsolve
