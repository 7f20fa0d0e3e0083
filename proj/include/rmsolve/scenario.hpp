#pragma once

#include "rmsolve/closed_form.hpp"
#include "rmsolve/metric.hpp"
#include "rmsolve/model.hpp"
#include "rmsolve/pde.hpp"

#include <nlohmann/json.hpp>

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

namespace rmsolve {

using Rows = std::vector<std::vector<double>>;

// brownian: drift, sigma (matrix) | ou: kappa, theta, sigma | affine: drift,
// drift_matrix, sigma | cir: a, b, sigma with dX = (a + bX)dt + sigma sqrt(X) dW
struct ModelSpec {
    std::string kind = "brownian";
    std::vector<double> drift{0.0};
    Rows drift_matrix;
    Rows sigma{{1.0}};
    double kappa = 1.0, theta = 0.0;
    double a = 1.0, b = -1.0;
    bool operator==(const ModelSpec&) const = default;
};

// constant: c0 | linear: c, c0, g_max | quadratic: -(alpha + delta.x + x.Gx) |
// polynomial: coeffs (ascending)
struct FitnessSpec {
    std::string kind = "linear";
    double c0 = 0.0;
    std::vector<double> c{1.0};
    double alpha = 0.0;
    std::vector<double> delta;
    Rows G;
    std::vector<double> coeffs;
    std::optional<double> g_max;
    bool operator==(const FitnessSpec&) const = default;
};

// gaussian: mean, cov | point_cloud: points, weights | mixture: weights,
// components (gaussian) | gamma: shape, scale (tabulated on [0, inf), 1D)
struct LawSpec {
    std::string kind = "gaussian";
    double shape = 0.0, scale = 0.0;
    std::vector<double> mean{0.0};
    Rows cov{{1.0}};
    Rows points;
    std::vector<double> weights;
    std::vector<LawSpec> components;
    bool operator==(const LawSpec&) const = default;
};

struct EigenSpec {
    std::string source = "auto";  // auto | affine | kummer | schrodinger
    double L = 8.0;
    std::size_t M = 2048;
    bool operator==(const EigenSpec&) const = default;
};

struct TiltedSpec {
    std::size_t paths = 100000;
    std::size_t steps_per_unit = 400;
    std::size_t kde_nodes = 1024;
    bool operator==(const TiltedSpec&) const = default;
};

struct ParticlePlan {
    std::vector<std::size_t> N{250, 500, 1000, 2000, 4000};
    std::size_t reps = 20;
    double q = 2.0;
    std::size_t steps_per_unit = 400;
    std::size_t checkpoints = 32;
    std::size_t paths = 100000;  // ensemble size for the solve/particles commands
    std::size_t bootstrap = 1000;
    bool operator==(const ParticlePlan&) const = default;
};

struct PdeSpec {
    double lo = -12.0, hi = 12.0;
    std::size_t cells = 2048;
    double dt = 1e-3;
    bool operator==(const PdeSpec&) const = default;
};

struct MetricSpec {
    double x0 = 0.0;
    double lo = -10.0, hi = 10.0;
    std::size_t cells = 1024;
    bool operator==(const MetricSpec&) const = default;
};

struct OutputGrid {
    double lo = -8.0, hi = 8.0;
    std::size_t nodes = 801;
    bool operator==(const OutputGrid&) const = default;
};

struct ScenarioConfig {
    std::string name = "scenario";
    ModelSpec model;
    FitnessSpec fitness;
    LawSpec initial;
    double horizon = 1.0;
    std::vector<double> times{1.0};
    std::vector<std::string> engines{"linear"};
    EigenSpec eigen;
    TiltedSpec tilted;
    ParticlePlan particles;
    PdeSpec pde;
    MetricSpec metric;
    OutputGrid grid;
    std::string output_dir = "out";
    std::uint64_t seed = 1;
    bool operator==(const ScenarioConfig&) const = default;
};

const std::vector<std::string>& known_engines();

// Parsing rejects unknown keys and wrong types with ConfigError.
ScenarioConfig parse_config(const nlohmann::json& j);
ScenarioConfig parse_config_text(const std::string& text);
ScenarioConfig load_config(const std::filesystem::path& path);
nlohmann::json to_json(const ScenarioConfig& c);
// Canonical text: sorted keys, two-space indent, trailing newline.
std::string serialize_config(const ScenarioConfig& c);
// FNV-1a of the canonical semantic fields (output_dir excluded), 16 hex digits.
std::string config_hash(const ScenarioConfig& c);

std::vector<std::string> builtin_scenario_names();
ScenarioConfig builtin_scenario(const std::string& name);

struct Scenario {
    ScenarioConfig config;
    DiffusionModel model;
    FitnessFunction fitness;
    InitialLaw initial;
};

DiffusionModel build_model(const ModelSpec& s);
FitnessFunction build_fitness(const FitnessSpec& s);
InitialLaw build_law(const LawSpec& s);
// Builds and cross-checks everything; ConfigError names the offending field.
Scenario build_scenario(const ScenarioConfig& c);

// Stage names used for seed derivation.
std::uint64_t stage_seed(const ScenarioConfig& c, const std::string& stage);

// Eigenpair for the tilted engine; `source` receives the resolved source name.
Eigenpair scenario_eigenpair(const Scenario& s, std::string* source = nullptr);

struct EngineOutput {
    std::string engine;
    bool ok = false;
    std::string error;
    int exit_code = 0;  // 2 config, 3 numeric or precondition
    std::vector<double> times;
    std::vector<GridDensity> densities;  // on the output grid
    std::vector<double> mass;            // unshifted h_t, NaN when not provided
    std::vector<double> mass_se;         // NaN for deterministic engines
    std::vector<std::string> notes;
    std::optional<ClosedFormSolution> solution;
};

// Runs one engine; precondition and numeric failures are captured in the output.
EngineOutput run_engine(const Scenario& s, const std::string& engine, int threads = 1);

struct L1Entry {
    double t = 0.0;
    std::string a, b;
    double l1 = 0.0;
};
std::vector<L1Entry> pairwise_l1(const std::vector<EngineOutput>& outs);

// Closed-form reference for the chaos study: the first successful linear or
// affine engine among the configured ones.
std::optional<ClosedFormSolution> reference_solution(const Scenario& s, std::string* engine = nullptr);

RateStudy run_chaos(const Scenario& s, int threads = 1);

} // namespace rmsolve
