#include "rmsolve/cli.hpp"

#include "rmsolve/errors.hpp"
#include "rmsolve/invariants.hpp"
#include "rmsolve/particle.hpp"
#include "rmsolve/report.hpp"
#include "rmsolve/scenario.hpp"

#include <CLI11.hpp>
#include <fmt/format.h>

#include <chrono>
#include <cmath>
#include <optional>
#include <ostream>

namespace rmsolve {

namespace {

struct Common {
    std::string config;
    std::string scenario;
    std::optional<std::uint64_t> seed;
    std::string out;
    int threads = 1;
};

void add_common(CLI::App* sub, Common& c) {
    auto* cfg = sub->add_option("--config", c.config, "scenario configuration file (JSON)");
    auto* sc = sub->add_option("--scenario", c.scenario, "builtin scenario: linear-bm, ou-linear, cir-linear, harmonic");
    cfg->excludes(sc);
    sub->add_option("--seed", c.seed, "master seed (overrides the config)");
    sub->add_option("--out", c.out, "output directory (overrides the config)");
    sub->add_option("--threads", c.threads, "worker threads; results do not depend on it")->check(CLI::Range(1, 1024));
}

ScenarioConfig resolve(const Common& c) {
    ScenarioConfig cfg;
    if (!c.config.empty())
        cfg = load_config(c.config);
    else if (!c.scenario.empty())
        cfg = builtin_scenario(c.scenario);
    else
        throw ConfigError("one of --config or --scenario is required");
    if (c.seed) cfg.seed = *c.seed;
    if (!c.out.empty()) cfg.output_dir = c.out;
    return cfg;
}

double seconds_since(std::chrono::steady_clock::time_point t0) {
    return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

class ManifestWriter {
public:
    ManifestWriter(const ScenarioConfig& c, const std::string& command) : m_(make_manifest(c, command)), dir_(c.output_dir) {
        write_atomic(dir_ / "config.json", serialize_config(c));
        flush();
    }
    template <class F>
    auto stage(const std::string& name, F&& f) {
        const auto t0 = std::chrono::steady_clock::now();
        try {
            auto r = f();
            m_.stages.push_back({name, seconds_since(t0), "ok"});
            return r;
        } catch (...) {
            m_.stages.push_back({name, seconds_since(t0), "failed"});
            finish("failed");
            throw;
        }
    }
    void record(const std::string& name, double s, const std::string& status) { m_.stages.push_back({name, s, status}); }
    void finish(const std::string& status) {
        m_.status = status;
        flush();
    }

private:
    void flush() { write_atomic(dir_ / "manifest.json", m_.to_json().dump(2) + "\n"); }
    RunManifest m_;
    std::filesystem::path dir_;
};

int cmd_solve(const Common& opt, std::ostream& out) {
    const auto cfg = resolve(opt);
    const auto s = build_scenario(cfg);
    const std::filesystem::path dir(cfg.output_dir);
    ManifestWriter mw(cfg, "solve");
    std::vector<EngineOutput> outs;
    int worst = 0;
    nlohmann::json summary;
    summary["scenario"] = cfg.name;
    summary["config_hash"] = config_hash(cfg);
    for (const auto& e : cfg.engines) {
        const auto t0 = std::chrono::steady_clock::now();
        auto r = run_engine(s, e, opt.threads);
        mw.record("engine/" + e, seconds_since(t0), r.ok ? "ok" : "failed");
        nlohmann::json ej;
        ej["ok"] = r.ok;
        ej["notes"] = r.notes;
        if (r.ok) {
            write_atomic(dir / fmt::format("densities_{}.csv", e), densities_csv(r));
            out << fmt::format("{:<10} ok      {}\n", e, r.notes.empty() ? "" : r.notes.front());
        } else {
            ej["error"] = r.error;
            out << fmt::format("{:<10} FAILED  {}\n", e, r.error);
            worst = std::max(worst, r.exit_code);
        }
        summary["engines"][e] = ej;
        outs.push_back(std::move(r));
    }
    const auto l1 = pairwise_l1(outs);
    write_atomic(dir / "l1.csv", l1_csv(l1));
    write_atomic(dir / "masses.csv", masses_csv(mass_rows(outs)));
    write_atomic(dir / "densities.svg", densities_svg(outs, cfg.times.back()));
    out << "pairwise L1:\n";
    for (const auto& r : l1) {
        out << fmt::format("  t={:<6g} {:>9} vs {:<9} {:.3e}\n", r.t, r.a, r.b, r.l1);
        summary["l1"].push_back({{"t", r.t}, {"a", r.a}, {"b", r.b}, {"l1", r.l1}});
    }
    write_atomic(dir / "summary.json", summary.dump(2) + "\n");
    const bool any = std::any_of(outs.begin(), outs.end(), [](const EngineOutput& o) { return o.ok; });
    mw.finish(any ? "complete" : "failed");
    return any ? 0 : worst;
}

int cmd_chaos(const Common& opt, double theory, std::ostream& out) {
    const auto cfg = resolve(opt);
    const auto s = build_scenario(cfg);
    const std::filesystem::path dir(cfg.output_dir);
    ManifestWriter mw(cfg, "chaos");
    const auto st = mw.stage("chaos", [&] { return run_chaos(s, opt.threads); });
    write_atomic(dir / "rates.csv", st.csv());
    write_atomic(dir / "rates.svg", rate_svg(st, theory));
    nlohmann::json j;
    j["slope"] = st.slope;
    j["intercept"] = st.intercept;
    j["slope_ci"] = {st.slope_ci_low, st.slope_ci_high};
    j["ci_status"] = st.reliable ? "ok" : "unreliable";
    j["inversions"] = st.inversions;
    j["monotone"] = st.inversions == 0 ? "yes" : (st.inversions == 1 ? "one inversion (flagged)" : "no");
    j["theory_slope"] = theory;
    double berr = 0.0;
    for (const auto& r : st.rows) berr = std::max(berr, r.max_binning_error);
    j["max_binning_error"] = berr;
    write_atomic(dir / "chaos.json", j.dump(2) + "\n");
    for (const auto& r : st.rows) out << fmt::format("N={:<6} D={:.5f}  CI [{:.5f}, {:.5f}]\n", r.N, r.value, r.ci_low, r.ci_high);
    out << fmt::format("slope {:.4f}  CI [{:.4f}, {:.4f}]{}\n", st.slope, st.slope_ci_low, st.slope_ci_high,
                       st.reliable ? "" : "  (CI unreliable: single replication)");
    if (st.inversions == 1) out << "warning: D(N) has one inversion\n";
    if (st.inversions > 1) out << fmt::format("warning: D(N) is not monotone ({} inversions)\n", st.inversions);
    mw.finish("complete");
    return 0;
}

int cmd_particles(const Common& opt, std::optional<std::size_t> N, std::size_t export_limit, std::ostream& out) {
    auto cfg = resolve(opt);
    if (N) cfg.particles.paths = *N;
    const auto s = build_scenario(cfg);
    const std::filesystem::path dir(cfg.output_dir);
    ManifestWriter mw(cfg, "particles");
    const auto grid = TimeGrid::per_unit(cfg.horizon, cfg.particles.steps_per_unit);
    ParticleOptions po;
    po.checkpoints = cfg.particles.checkpoints;
    po.threads = opt.threads;
    const auto ens = mw.stage("particles", [&] {
        return run_particles(s.model, s.fitness, s.initial, cfg.particles.paths, grid, stage_seed(cfg, "particles"), po);
    });
    if (ens.size() <= export_limit)
        write_atomic(dir / "ensemble.csv", ensemble_csv(ens));
    else
        out << fmt::format("ensemble.csv skipped: N = {} above --export-limit {}\n", ens.size(), export_limit);
    const auto ref = reference_solution(s);
    std::vector<MassRow> rows;
    for (double t : ens.times()) {
        const double up = std::exp(s.fitness.g_max() * t);
        rows.push_back({t, ref ? ref->mass_factor(t) : std::nan(""), mass_estimate(ens, t) * up, mass_standard_error(ens, t) * up});
    }
    write_atomic(dir / "masses.csv", masses_csv(rows));
    const auto mom = weighted_moments(ens, cfg.horizon);
    out << fmt::format("N = {}, t = {:g}: h_t = {:.6g} +- {:.2g}, mean = {:.6g} +- {:.2g}, ESS = {:.0f}\n", ens.size(), cfg.horizon,
                       rows.back().h_mc, rows.back().se, mom.mean(0), mom.standard_error(0), mom.effective_sample_size);
    mw.finish("complete");
    return 0;
}

int cmd_validate(double scale, int threads, std::ostream& out) {
    const auto tol = default_tolerances().scaled(scale);
    const auto rows = run_invariants(tol, threads);
    out << format_matrix(rows);
    const auto fails = std::count_if(rows.begin(), rows.end(), [](const InvariantResult& r) { return !r.pass; });
    out << fmt::format("{} of {} invariants passed\n", rows.size() - static_cast<std::size_t>(fails), rows.size());
    return fails == 0 ? 0 : 4;
}

int cmd_manifest(const Common& opt, std::ostream& out) {
    const auto cfg = resolve(opt);
    build_scenario(cfg);
    auto m = make_manifest(cfg, "manifest");
    m.status = "planned";
    const std::filesystem::path dir(cfg.output_dir);
    write_atomic(dir / "config.json", serialize_config(cfg));
    write_atomic(dir / "manifest.json", m.to_json().dump(2) + "\n");
    out << m.to_json().dump(2) << "\n";
    return 0;
}

} // namespace

int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
    CLI::App app{"rmsolve: replicator-mutator solvers, particle systems and oracles", "rmsolve"};
    app.require_subcommand(1);
    Common solve_o, chaos_o, part_o, man_o;
    double theory = -0.5, scale = 1.0;
    int vthreads = 1;
    std::optional<std::size_t> N;
    std::size_t export_limit = 20000;

    auto* solve = app.add_subcommand("solve", "run every configured engine and the PDE oracle");
    add_common(solve, solve_o);
    auto* chaos = app.add_subcommand("chaos", "propagation-of-chaos rate study");
    add_common(chaos, chaos_o);
    chaos->add_option("--theory-slope", theory, "reference slope drawn in the plot");
    auto* part = app.add_subcommand("particles", "simulate the weighted particle ensemble");
    add_common(part, part_o);
    part->add_option("--N", N, "ensemble size (overrides particles.paths)");
    part->add_option("--export-limit", export_limit, "largest ensemble written to ensemble.csv");
    auto* val = app.add_subcommand("validate", "run the invariant suite");
    val->add_option("--tolerance-scale", scale, "multiply every tolerance (0 forces failures)");
    val->add_option("--threads", vthreads, "worker threads")->check(CLI::Range(1, 1024));
    auto* man = app.add_subcommand("manifest", "write the run manifest without running");
    add_common(man, man_o);

    std::vector<std::string> rev(args.rbegin(), args.rend());
    try {
        app.parse(rev);
    } catch (const CLI::CallForHelp&) {
        out << app.help();
        return 0;
    } catch (const CLI::ParseError& e) {
        err << e.what() << "\n";
        return 2;
    }
    try {
        if (*solve) return cmd_solve(solve_o, out);
        if (*chaos) return cmd_chaos(chaos_o, theory, out);
        if (*part) return cmd_particles(part_o, N, export_limit, out);
        if (*val) return cmd_validate(scale, vthreads, out);
        if (*man) return cmd_manifest(man_o, out);
    } catch (const ConfigError& e) {
        err << "config error: " << e.what() << "\n";
        return 2;
    } catch (const InvariantError& e) {
        err << "invariant failure: " << e.what() << "\n";
        return 4;
    } catch (const NumericError& e) {
        err << "numeric failure: " << e.what() << "\n";
        return 3;
    } catch (const PreconditionError& e) {
        err << "precondition failure: " << e.what() << "\n";
        return 3;
    } catch (const std::filesystem::filesystem_error& e) {
        err << "config error: " << e.what() << "\n";
        return 2;
    }
    return 2;
}

} // namespace rmsolve
