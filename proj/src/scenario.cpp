#include "rmsolve/scenario.hpp"

#include "rmsolve/errors.hpp"
#include "rmsolve/particle.hpp"
#include "rmsolve/rng.hpp"
#include "rmsolve/spectral.hpp"

#include <fmt/format.h>

#include <cmath>
#include <fstream>
#include <limits>
#include <set>
#include <sstream>

namespace rmsolve {

using nlohmann::json;

namespace {

// Reads one JSON object, remembering which keys were used so leftovers can
// be reported as unknown.
class ObjectReader {
public:
    ObjectReader(const json& j, std::string path) : j_(j), path_(std::move(path)) {
        if (!j.is_object()) throw ConfigError(fmt::format("config: {} must be an object", path_));
    }
    bool has(const std::string& k) const { return j_.contains(k); }

    template <class T>
    T get(const std::string& k, T fallback) {
        if (!j_.contains(k)) return fallback;
        return required<T>(k);
    }
    template <class T>
    T required(const std::string& k) {
        used_.insert(k);
        if (!j_.contains(k)) throw ConfigError(fmt::format("config: missing field {}.{}", path_, k));
        try {
            return j_.at(k).get<T>();
        } catch (const json::exception&) {
            throw ConfigError(fmt::format("config: field {}.{} has the wrong type", path_, k));
        }
    }
    const json& sub(const std::string& k) {
        used_.insert(k);
        return j_.at(k);
    }
    std::string path(const std::string& k) const { return path_ + "." + k; }
    void finish() const {
        for (auto it = j_.begin(); it != j_.end(); ++it)
            if (!used_.count(it.key())) throw ConfigError(fmt::format("config: unknown field {}.{}", path_, it.key()));
    }

private:
    const json& j_;
    std::string path_;
    std::set<std::string> used_;
};

Eigen::MatrixXd to_matrix(const Rows& r, const std::string& what) {
    if (r.empty()) throw ConfigError(fmt::format("config: {} is empty", what));
    const auto cols = r.front().size();
    Eigen::MatrixXd m(static_cast<Eigen::Index>(r.size()), static_cast<Eigen::Index>(cols));
    for (std::size_t i = 0; i < r.size(); ++i) {
        if (r[i].size() != cols) throw ConfigError(fmt::format("config: {} has ragged rows", what));
        for (std::size_t k = 0; k < cols; ++k) m(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(k)) = r[i][k];
    }
    return m;
}

Eigen::VectorXd to_vector(const std::vector<double>& v) {
    return Eigen::Map<const Eigen::VectorXd>(v.data(), static_cast<Eigen::Index>(v.size()));
}

ModelSpec parse_model(const json& j) {
    ObjectReader r(j, "model");
    ModelSpec s;
    s.kind = r.required<std::string>("kind");
    if (s.kind == "brownian") {
        s.drift = r.required<std::vector<double>>("drift");
        s.sigma = r.required<Rows>("sigma");
    } else if (s.kind == "ou") {
        s.kappa = r.required<double>("kappa");
        s.theta = r.required<double>("theta");
        s.sigma = {{r.required<double>("sigma")}};
        s.drift.clear();
    } else if (s.kind == "affine") {
        s.drift = r.required<std::vector<double>>("drift");
        s.drift_matrix = r.required<Rows>("drift_matrix");
        s.sigma = r.required<Rows>("sigma");
    } else if (s.kind == "cir") {
        s.a = r.required<double>("a");
        s.b = r.required<double>("b");
        s.sigma = {{r.required<double>("sigma")}};
        s.drift.clear();
    } else {
        throw ConfigError("config: model.kind must be brownian, ou, affine or cir (got " + s.kind + ")");
    }
    r.finish();
    return s;
}

json model_json(const ModelSpec& s) {
    json j;
    j["kind"] = s.kind;
    if (s.kind == "brownian") {
        j["drift"] = s.drift;
        j["sigma"] = s.sigma;
    } else if (s.kind == "ou") {
        j["kappa"] = s.kappa;
        j["theta"] = s.theta;
        j["sigma"] = s.sigma.at(0).at(0);
    } else if (s.kind == "affine") {
        j["drift"] = s.drift;
        j["drift_matrix"] = s.drift_matrix;
        j["sigma"] = s.sigma;
    } else {
        j["a"] = s.a;
        j["b"] = s.b;
        j["sigma"] = s.sigma.at(0).at(0);
    }
    return j;
}

FitnessSpec parse_fitness(const json& j) {
    ObjectReader r(j, "fitness");
    FitnessSpec s;
    s.kind = r.required<std::string>("kind");
    s.c.clear();
    if (s.kind == "constant") {
        s.c0 = r.required<double>("c0");
    } else if (s.kind == "linear") {
        s.c = r.required<std::vector<double>>("c");
        s.c0 = r.get<double>("c0", 0.0);
        s.g_max = r.required<double>("g_max");
    } else if (s.kind == "quadratic") {
        s.alpha = r.get<double>("alpha", 0.0);
        s.delta = r.required<std::vector<double>>("delta");
        s.G = r.required<Rows>("G");
    } else if (s.kind == "polynomial") {
        s.coeffs = r.required<std::vector<double>>("coeffs");
    } else {
        throw ConfigError("config: fitness.kind must be constant, linear, quadratic or polynomial (got " + s.kind + ")");
    }
    if (s.kind != "linear" && r.has("g_max")) s.g_max = r.required<double>("g_max");
    r.finish();
    return s;
}

json fitness_json(const FitnessSpec& s) {
    json j;
    j["kind"] = s.kind;
    if (s.kind == "constant") {
        j["c0"] = s.c0;
    } else if (s.kind == "linear") {
        j["c"] = s.c;
        j["c0"] = s.c0;
    } else if (s.kind == "quadratic") {
        j["alpha"] = s.alpha;
        j["delta"] = s.delta;
        j["G"] = s.G;
    } else {
        j["coeffs"] = s.coeffs;
    }
    if (s.g_max) j["g_max"] = *s.g_max;
    return j;
}

LawSpec parse_law(const json& j, const std::string& path) {
    ObjectReader r(j, path);
    LawSpec s;
    s.kind = r.required<std::string>("kind");
    s.mean.clear();
    s.cov.clear();
    if (s.kind == "gaussian") {
        s.mean = r.required<std::vector<double>>("mean");
        s.cov = r.required<Rows>("cov");
    } else if (s.kind == "point_cloud") {
        s.points = r.required<Rows>("points");
        s.weights = r.get<std::vector<double>>("weights", {});
    } else if (s.kind == "mixture") {
        s.weights = r.required<std::vector<double>>("weights");
        const auto& comps = r.sub("components");
        if (!comps.is_array()) throw ConfigError("config: " + path + ".components must be an array");
        for (std::size_t i = 0; i < comps.size(); ++i) {
            s.components.push_back(parse_law(comps[i], fmt::format("{}.components[{}]", path, i)));
            if (s.components.back().kind != "gaussian")
                throw ConfigError("config: mixture components must be gaussian");
        }
    } else if (s.kind == "gamma") {
        s.shape = r.required<double>("shape");
        s.scale = r.required<double>("scale");
    } else {
        throw ConfigError("config: " + path + ".kind must be gaussian, point_cloud, mixture or gamma (got " + s.kind + ")");
    }
    r.finish();
    return s;
}

json law_json(const LawSpec& s) {
    json j;
    j["kind"] = s.kind;
    if (s.kind == "gaussian") {
        j["mean"] = s.mean;
        j["cov"] = s.cov;
    } else if (s.kind == "point_cloud") {
        j["points"] = s.points;
        j["weights"] = s.weights;
    } else if (s.kind == "gamma") {
        j["shape"] = s.shape;
        j["scale"] = s.scale;
    } else {
        j["weights"] = s.weights;
        j["components"] = json::array();
        for (const auto& c : s.components) j["components"].push_back(law_json(c));
    }
    return j;
}

} // namespace

const std::vector<std::string>& known_engines() {
    static const std::vector<std::string> e{"linear", "affine", "tilted", "pde", "particles"};
    return e;
}

ScenarioConfig parse_config(const json& j) {
    ObjectReader r(j, "config");
    ScenarioConfig c;
    c.name = r.get<std::string>("name", c.name);
    c.model = parse_model(r.sub("model"));
    c.fitness = parse_fitness(r.sub("fitness"));
    c.initial = parse_law(r.sub("initial"), "initial");
    c.horizon = r.get<double>("horizon", c.horizon);
    c.times = r.get<std::vector<double>>("times", {c.horizon});
    c.engines = r.required<std::vector<std::string>>("engines");
    if (r.has("eigen")) {
        ObjectReader e(r.sub("eigen"), "eigen");
        c.eigen.source = e.get<std::string>("source", c.eigen.source);
        c.eigen.L = e.get<double>("L", c.eigen.L);
        c.eigen.M = e.get<std::size_t>("M", c.eigen.M);
        e.finish();
    }
    if (r.has("tilted")) {
        ObjectReader e(r.sub("tilted"), "tilted");
        c.tilted.paths = e.get<std::size_t>("paths", c.tilted.paths);
        c.tilted.steps_per_unit = e.get<std::size_t>("steps_per_unit", c.tilted.steps_per_unit);
        c.tilted.kde_nodes = e.get<std::size_t>("kde_nodes", c.tilted.kde_nodes);
        e.finish();
    }
    if (r.has("particles")) {
        ObjectReader e(r.sub("particles"), "particles");
        c.particles.N = e.get<std::vector<std::size_t>>("N", c.particles.N);
        c.particles.reps = e.get<std::size_t>("reps", c.particles.reps);
        c.particles.q = e.get<double>("q", c.particles.q);
        c.particles.steps_per_unit = e.get<std::size_t>("steps_per_unit", c.particles.steps_per_unit);
        c.particles.checkpoints = e.get<std::size_t>("checkpoints", c.particles.checkpoints);
        c.particles.paths = e.get<std::size_t>("paths", c.particles.paths);
        c.particles.bootstrap = e.get<std::size_t>("bootstrap", c.particles.bootstrap);
        e.finish();
    }
    if (r.has("pde")) {
        ObjectReader e(r.sub("pde"), "pde");
        c.pde.lo = e.get<double>("lo", c.pde.lo);
        c.pde.hi = e.get<double>("hi", c.pde.hi);
        c.pde.cells = e.get<std::size_t>("cells", c.pde.cells);
        c.pde.dt = e.get<double>("dt", c.pde.dt);
        e.finish();
    }
    if (r.has("metric")) {
        ObjectReader e(r.sub("metric"), "metric");
        c.metric.x0 = e.get<double>("x0", c.metric.x0);
        c.metric.lo = e.get<double>("lo", c.metric.lo);
        c.metric.hi = e.get<double>("hi", c.metric.hi);
        c.metric.cells = e.get<std::size_t>("cells", c.metric.cells);
        e.finish();
    }
    if (r.has("grid")) {
        ObjectReader e(r.sub("grid"), "grid");
        c.grid.lo = e.get<double>("lo", c.grid.lo);
        c.grid.hi = e.get<double>("hi", c.grid.hi);
        c.grid.nodes = e.get<std::size_t>("nodes", c.grid.nodes);
        e.finish();
    }
    c.output_dir = r.get<std::string>("output_dir", c.output_dir);
    c.seed = r.get<std::uint64_t>("seed", c.seed);
    r.finish();
    return c;
}

ScenarioConfig parse_config_text(const std::string& text) {
    json j;
    try {
        j = json::parse(text);
    } catch (const json::parse_error& e) {
        throw ConfigError(std::string("config: invalid JSON: ") + e.what());
    }
    return parse_config(j);
}

ScenarioConfig load_config(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw ConfigError("config: cannot open " + path.string());
    std::stringstream ss;
    ss << in.rdbuf();
    return parse_config_text(ss.str());
}

json to_json(const ScenarioConfig& c) {
    json j;
    j["name"] = c.name;
    j["model"] = model_json(c.model);
    j["fitness"] = fitness_json(c.fitness);
    j["initial"] = law_json(c.initial);
    j["horizon"] = c.horizon;
    j["times"] = c.times;
    j["engines"] = c.engines;
    j["eigen"] = {{"source", c.eigen.source}, {"L", c.eigen.L}, {"M", c.eigen.M}};
    j["tilted"] = {{"paths", c.tilted.paths}, {"steps_per_unit", c.tilted.steps_per_unit}, {"kde_nodes", c.tilted.kde_nodes}};
    j["particles"] = {{"N", c.particles.N},
                      {"reps", c.particles.reps},
                      {"q", c.particles.q},
                      {"steps_per_unit", c.particles.steps_per_unit},
                      {"checkpoints", c.particles.checkpoints},
                      {"paths", c.particles.paths},
                      {"bootstrap", c.particles.bootstrap}};
    j["pde"] = {{"lo", c.pde.lo}, {"hi", c.pde.hi}, {"cells", c.pde.cells}, {"dt", c.pde.dt}};
    j["metric"] = {{"x0", c.metric.x0}, {"lo", c.metric.lo}, {"hi", c.metric.hi}, {"cells", c.metric.cells}};
    j["grid"] = {{"lo", c.grid.lo}, {"hi", c.grid.hi}, {"nodes", c.grid.nodes}};
    j["output_dir"] = c.output_dir;
    j["seed"] = c.seed;
    return j;
}

std::string serialize_config(const ScenarioConfig& c) { return to_json(c).dump(2) + "\n"; }

std::string config_hash(const ScenarioConfig& c) {
    json j = to_json(c);
    j.erase("output_dir");
    return fmt::format("{:016x}", fnv1a(j.dump()));
}

// ---------------------------------------------------------------- builtins

std::vector<std::string> builtin_scenario_names() { return {"linear-bm", "ou-linear", "cir-linear", "harmonic"}; }

ScenarioConfig builtin_scenario(const std::string& name) {
    ScenarioConfig c;
    c.name = name;
    c.times = {0.25, 0.5, 1.0};
    c.seed = 20240601;
    c.output_dir = "out/" + name;
    if (name == "linear-bm") {
        // dX = sqrt(2) dW, g(x) = x, u0 = N(0, 1)
        c.model.sigma = {{std::sqrt(2.0)}};
        c.fitness.g_max = 3.0;
        c.engines = {"linear", "affine", "pde", "particles"};
        c.pde = {-12.0, 14.0, 2048, 1e-3};
        c.metric = {0.0, -10.0, 12.0, 1024};
        c.grid = {-8.0, 10.0, 901};
    } else if (name == "ou-linear") {
        // dX = -X dt + dW, g(x) = -x (quadratic form with G = 0)
        c.model = ModelSpec{};
        c.model.kind = "ou";
        c.model.drift.clear();
        c.model.kappa = 1.0;
        c.model.theta = 0.0;
        c.model.sigma = {{1.0}};
        c.fitness.kind = "quadratic";
        c.fitness.c.clear();
        c.fitness.alpha = 0.0;
        c.fitness.delta = {1.0};
        c.fitness.G = {{0.0}};
        c.fitness.g_max = 3.0;
        c.engines = {"affine", "tilted", "pde", "particles"};
        c.eigen.source = "affine";
        c.pde = {-10.0, 10.0, 2048, 1e-3};
        c.metric = {0.0, -8.0, 8.0, 1024};
        c.grid = {-7.0, 6.0, 651};
    } else if (name == "cir-linear") {
        // dX = (1 - X)dt + 0.5 sqrt(X) dW on (0, inf), g(x) = -x
        c.model = ModelSpec{};
        c.model.kind = "cir";
        c.model.drift.clear();
        c.model.a = 1.0;
        c.model.b = -1.0;
        c.model.sigma = {{0.5}};
        c.fitness.c = {-1.0};
        c.fitness.g_max = 0.0;
        c.initial.kind = "gamma";
        c.initial.shape = 16.0;
        c.initial.scale = 1.0 / 16.0;
        c.initial.mean.clear();
        c.initial.cov.clear();
        c.times = {0.25, 0.5};
        c.horizon = 0.5;
        c.engines = {"tilted", "pde", "particles"};
        c.eigen.source = "kummer";
        c.pde = {0.0, 6.0, 2048, 1e-3};
        c.metric = {1.0, 0.0, 6.0, 1024};
        c.grid = {0.0, 4.0, 801};
    } else if (name == "harmonic") {
        // generator d^2/dx^2 (sigma sqrt 2), g(x) = -x^2, u0 = N(1, 0.5)
        c.model.sigma = {{std::sqrt(2.0)}};
        c.fitness.kind = "quadratic";
        c.fitness.c.clear();
        c.fitness.alpha = 0.0;
        c.fitness.delta = {0.0};
        c.fitness.G = {{1.0}};
        c.initial.mean = {1.0};
        c.initial.cov = {{0.5}};
        c.engines = {"affine", "tilted", "pde", "particles"};
        c.eigen.source = "schrodinger";
        c.pde = {-8.0, 8.0, 2048, 1e-3};
        c.metric = {0.0, -6.0, 6.0, 1024};
        c.grid = {-5.0, 5.0, 501};
    } else {
        throw ConfigError("unknown builtin scenario " + name);
    }
    c.particles.N = {250, 500, 1000, 2000, 4000};
    return c;
}

// ---------------------------------------------------------------- build

DiffusionModel build_model(const ModelSpec& s) {
    if (s.kind == "brownian") return DiffusionModel::arithmetic_bm(to_vector(s.drift), to_matrix(s.sigma, "model.sigma"));
    if (s.kind == "ou") return DiffusionModel::ou(s.kappa, s.theta, s.sigma.at(0).at(0));
    if (s.kind == "affine")
        return DiffusionModel::affine(to_vector(s.drift), to_matrix(s.drift_matrix, "model.drift_matrix"),
                                      to_matrix(s.sigma, "model.sigma"));
    if (s.kind == "cir") return DiffusionModel::cir(s.a, s.b, s.sigma.at(0).at(0));
    throw ConfigError("config: unknown model kind " + s.kind);
}

FitnessFunction build_fitness(const FitnessSpec& s) {
    if (s.kind == "constant") return FitnessFunction::constant(1, s.c0);
    if (s.kind == "linear") return FitnessFunction::linear(to_vector(s.c), s.c0, s.g_max.value_or(0.0));
    if (s.kind == "quadratic") return FitnessFunction::quadratic(s.alpha, to_vector(s.delta), to_matrix(s.G, "fitness.G"), s.g_max);
    if (s.kind == "polynomial") return FitnessFunction::polynomial(s.coeffs, s.g_max);
    throw ConfigError("config: unknown fitness kind " + s.kind);
}

InitialLaw build_law(const LawSpec& s) {
    if (s.kind == "gaussian") return InitialLaw::gaussian(to_vector(s.mean), to_matrix(s.cov, "initial.cov"));
    if (s.kind == "point_cloud") {
        std::vector<Eigen::VectorXd> pts;
        for (const auto& p : s.points) pts.push_back(to_vector(p));
        return InitialLaw::point_cloud(std::move(pts), s.weights);
    }
    if (s.kind == "mixture") {
        std::vector<InitialLaw> comps;
        for (const auto& c : s.components) comps.push_back(build_law(c));
        return InitialLaw::mixture(s.weights, std::move(comps));
    }
    if (s.kind == "gamma") {
        if (!(s.shape >= 1.0) || !(s.scale > 0.0)) throw ConfigError("config: gamma law needs shape >= 1 and scale > 0");
        const double hi = s.scale * (s.shape + 20.0 * std::sqrt(s.shape) + 20.0);
        const double lc = -std::lgamma(s.shape) - s.shape * std::log(s.scale);
        auto g = GridDensity::tabulate(0.0, hi, 8193, [&](double x) {
            return x > 0.0 ? std::exp(lc + (s.shape - 1.0) * std::log(x) - x / s.scale) : (s.shape == 1.0 ? std::exp(lc) : 0.0);
        });
        g.normalize();
        return InitialLaw::grid(std::move(g));
    }
    throw ConfigError("config: unknown initial law kind " + s.kind);
}

Scenario build_scenario(const ScenarioConfig& c) {
    if (!(c.horizon > 0.0)) throw ConfigError("config: horizon must be positive");
    if (c.times.empty()) throw ConfigError("config: times must not be empty");
    for (double t : c.times)
        if (!(t >= 0.0) || t > c.horizon * (1.0 + 1e-12)) throw ConfigError(fmt::format("config: time {:g} outside [0, horizon]", t));
    if (c.engines.empty()) throw ConfigError("config: engines must not be empty");
    for (const auto& e : c.engines)
        if (std::find(known_engines().begin(), known_engines().end(), e) == known_engines().end())
            throw ConfigError("config: unknown engine " + e);
    static const std::set<std::string> sources{"auto", "affine", "kummer", "schrodinger"};
    if (!sources.count(c.eigen.source)) throw ConfigError("config: eigen.source must be auto, affine, kummer or schrodinger");
    if (!(c.grid.hi > c.grid.lo) || c.grid.nodes < 2) throw ConfigError("config: invalid output grid");
    if (!(c.metric.hi > c.metric.lo) || c.metric.cells < 1) throw ConfigError("config: invalid metric window");
    if (c.particles.reps < 1) throw ConfigError("config: particles.reps must be at least 1");

    Scenario s{c, build_model(c.model), build_fitness(c.fitness), build_law(c.initial)};
    require_valid(s.model);
    if (s.fitness.dim() != s.model.dim()) throw ConfigError("config: fitness dimension does not match the model");
    if (s.initial.dim() != s.model.dim()) throw ConfigError("config: initial law dimension does not match the model");
    if (s.model.domain().kind == DomainKind::half_line) {
        if (c.pde.lo != 0.0) throw ConfigError("config: pde.lo must be 0 on the half-line");
        if (c.grid.lo < 0.0) throw ConfigError("config: grid.lo must be >= 0 on the half-line");
    }
    return s;
}

std::uint64_t stage_seed(const ScenarioConfig& c, const std::string& stage) { return derive_seed(c.seed, stage); }

// ---------------------------------------------------------------- engines

Eigenpair scenario_eigenpair(const Scenario& s, std::string* source) {
    std::string src = s.config.eigen.source;
    if (src == "auto") {
        if (s.model.kind() == ModelKind::cir)
            src = "kummer";
        else if (s.model.affine_coefficients() && s.fitness.quadratic_form())
            src = "affine";
        else
            src = "schrodinger";
    }
    if (source) *source = src;
    if (src == "affine") {
        auto sol = affine_engine(s.model, s.fitness, s.initial, s.config.horizon);
        if (!sol.eigenpair) throw PreconditionError("affine eigenpair: no stabilizing Riccati solution (degenerate mode)");
        return *sol.eigenpair;
    }
    if (src == "kummer") {
        if (s.model.kind() != ModelKind::cir) throw PreconditionError("kummer eigenpair: CIR model required");
        const auto* lin = s.fitness.linear_form();
        if (!lin || lin->c0 != 0.0 || lin->c(0) != -1.0) throw PreconditionError("kummer eigenpair: fitness g(x) = -x required");
        const auto& m = s.config.model;
        const double sig = m.sigma.at(0).at(0);
        return cir_eigenpair(m.a, m.b, sig, cir_lambda0(m.a, m.b, sig));
    }
    // schrodinger: driftless 1D Brownian motion only
    const auto* coef = s.model.affine_coefficients();
    if (s.model.dim() != 1 || !coef || !coef->B.isZero(0.0) || coef->b(0) != 0.0)
        throw PreconditionError("schrodinger eigenpair: driftless 1D Brownian model required");
    SchrodingerProblem p;
    p.sigma = std::abs(coef->sigma(0, 0)) / std::sqrt(2.0);
    p.g = s.fitness;
    p.L = s.config.eigen.L;
    p.M = s.config.eigen.M;
    return schrodinger_ground_state(p).pair;
}

namespace {

std::vector<double> grid_nodes(const OutputGrid& g) { return linspace(g.lo, g.hi, g.nodes); }

GridDensity resample(const GridDensity& d, const OutputGrid& g) {
    const auto x = grid_nodes(g);
    std::vector<double> v(x.size());
    for (std::size_t i = 0; i < x.size(); ++i) v[i] = d(x[i]);
    return GridDensity(x, v);
}

void fill_closed_form(EngineOutput& out, const Scenario& s, const ClosedFormSolution& sol) {
    const auto& g = s.config.grid;
    for (double t : s.config.times) {
        out.times.push_back(t);
        out.densities.push_back(sol.on_grid(t, g.lo, g.hi, g.nodes));
        out.mass.push_back(sol.mass_factor(t));
        out.mass_se.push_back(sol.mass_standard_error ? sol.mass_standard_error(t) : std::numeric_limits<double>::quiet_NaN());
    }
    out.notes = sol.notes;
    out.notes.insert(out.notes.begin(), "mode " + sol.mode);
}

std::vector<std::size_t> steps_for(const std::vector<double>& times, const TimeGrid& grid) {
    std::vector<std::size_t> out;
    for (double t : times) {
        const double k = (t - grid.t0) / grid.dt();
        if (std::abs(k - std::round(k)) > 1e-6) throw ConfigError(fmt::format("time {:g} is not on the particle step grid", t));
        out.push_back(static_cast<std::size_t>(std::llround(k)));
    }
    std::sort(out.begin(), out.end());
    out.erase(std::unique(out.begin(), out.end()), out.end());
    return out;
}

} // namespace

EngineOutput run_engine(const Scenario& s, const std::string& engine, int threads) {
    EngineOutput out;
    out.engine = engine;
    const auto& c = s.config;
    const double nan = std::numeric_limits<double>::quiet_NaN();
    try {
        if (engine == "linear") {
            auto sol = linear_engine(s.model, s.fitness, s.initial, c.horizon);
            fill_closed_form(out, s, sol);
            out.solution = std::move(sol);
        } else if (engine == "affine") {
            auto sol = affine_engine(s.model, s.fitness, s.initial, c.horizon);
            fill_closed_form(out, s, sol);
            out.solution = std::move(sol);
        } else if (engine == "tilted") {
            std::string src;
            const auto pair = scenario_eigenpair(s, &src);
            TiltedEngineOptions o;
            o.paths = c.tilted.paths;
            o.seed = stage_seed(c, "tilted");
            o.times = c.times;
            o.steps_per_unit = c.tilted.steps_per_unit;
            o.threads = threads;
            o.kde.nodes = c.tilted.kde_nodes;
            if (s.model.domain().kind == DomainKind::half_line) o.probe_range = {0.1, 5.0};
            auto sol = tilted_engine(s.model, s.fitness, pair, s.initial, o);
            fill_closed_form(out, s, sol);
            out.notes.push_back("eigenpair source " + src + fmt::format(", lambda = {:.10g}", pair.lambda));
            out.solution = std::move(sol);
        } else if (engine == "pde") {
            PdeScheme sc;
            sc.lo = c.pde.lo;
            sc.hi = c.pde.hi;
            sc.cells = c.pde.cells;
            sc.dt = c.pde.dt;
            sc.times = c.times;
            const auto tr = solve_rm_pde(s.model, s.fitness, s.initial, sc);
            for (std::size_t i = 0; i < tr.times.size(); ++i) {
                out.times.push_back(tr.times[i]);
                out.densities.push_back(resample(tr.densities[i], c.grid));
                out.mass.push_back(nan);
                out.mass_se.push_back(nan);
            }
            out.notes.push_back(fmt::format("mass leak {:.3g}, {} steps, {} negative clips (min {:.2g}), {} upwind interfaces",
                                             tr.mass_leak, tr.steps, tr.negative_clips, tr.min_clipped, tr.upwind_interfaces));
        } else if (engine == "particles") {
            const auto grid = TimeGrid::per_unit(c.horizon, c.particles.steps_per_unit);
            ParticleOptions po;
            po.record_steps = steps_for(c.times, grid);
            po.threads = threads;
            const auto ens = run_particles(s.model, s.fitness, s.initial, c.particles.paths, grid, stage_seed(c, "particles"), po);
            KdeOptions ko;
            ko.range = std::make_pair(c.grid.lo, c.grid.hi);
            ko.nodes = c.grid.nodes;
            if (s.model.domain().kind == DomainKind::half_line) ko.lower_bound = 0.0;
            for (double t : c.times) {
                const auto m = normalized_measure(ens, t);
                const double up = std::exp(s.fitness.g_max() * t);
                out.times.push_back(t);
                out.densities.push_back(kde(m.atoms, m.masses, ko));
                out.mass.push_back(mass_estimate(ens, t) * up);
                out.mass_se.push_back(mass_standard_error(ens, t) * up);
            }
            out.notes.push_back(fmt::format("N = {}, scheme {}", ens.size(), ens.paths.scheme));
        } else {
            throw ConfigError("unknown engine " + engine);
        }
        out.ok = true;
    } catch (const PreconditionError& e) {
        out.error = e.what();
        out.exit_code = 3;
    } catch (const NumericError& e) {
        out.error = e.what();
        out.exit_code = 3;
    } catch (const ConfigError& e) {
        out.error = e.what();
        out.exit_code = 2;
    }
    if (!out.ok) {
        out.times.clear();
        out.densities.clear();
        out.mass.clear();
        out.mass_se.clear();
    }
    return out;
}

std::vector<L1Entry> pairwise_l1(const std::vector<EngineOutput>& outs) {
    std::vector<L1Entry> rows;
    for (std::size_t i = 0; i < outs.size(); ++i)
        for (std::size_t j = i + 1; j < outs.size(); ++j) {
            if (!outs[i].ok || !outs[j].ok) continue;
            for (std::size_t k = 0; k < outs[i].times.size(); ++k)
                for (std::size_t l = 0; l < outs[j].times.size(); ++l)
                    if (outs[i].times[k] == outs[j].times[l])
                        rows.push_back({outs[i].times[k], outs[i].engine, outs[j].engine,
                                        l1_distance(outs[i].densities[k], outs[j].densities[l])});
        }
    std::stable_sort(rows.begin(), rows.end(), [](const L1Entry& a, const L1Entry& b) { return a.t < b.t; });
    return rows;
}

std::optional<ClosedFormSolution> reference_solution(const Scenario& s, std::string* engine) {
    for (const auto& e : s.config.engines) {
        try {
            if (e == "linear") {
                if (engine) *engine = e;
                return linear_engine(s.model, s.fitness, s.initial, s.config.horizon);
            }
            if (e == "affine") {
                if (engine) *engine = e;
                return affine_engine(s.model, s.fitness, s.initial, s.config.horizon);
            }
        } catch (const PreconditionError&) {
        }
    }
    return std::nullopt;
}

RateStudy run_chaos(const Scenario& s, int threads) {
    const auto& c = s.config;
    if (c.particles.N.size() < 3) throw ConfigError("chaos: at least 3 N values are required");
    const auto ref = reference_solution(s);
    if (!ref) throw ConfigError("chaos: no closed-form reference engine (linear or affine) is available for this scenario");
    DqtOptions o;
    o.reps = c.particles.reps;
    o.q = c.particles.q;
    o.seed = stage_seed(c, "chaos");
    o.grid = TimeGrid::per_unit(c.horizon, c.particles.steps_per_unit);
    o.checkpoints = c.particles.checkpoints;
    o.binning = Binning{c.metric.lo, c.metric.hi, c.metric.cells};
    o.bootstrap = c.particles.bootstrap;
    o.threads = threads;
    o.metric = StarMetric{c.metric.x0};
    return rate_study(s.model, s.fitness, s.initial, closed_form_reference(*ref, o.binning), c.particles.N, o);
}

} // namespace rmsolve
