#pragma once

#include "rmsolve/scenario.hpp"
#include "rmsolve/tolerances.hpp"

#include <nlohmann/json.hpp>

#include <filesystem>
#include <map>
#include <string>
#include <string_view>
#include <vector>

namespace rmsolve {

inline constexpr const char* artifact_version = "1.0.0";
inline constexpr int csv_schema_version = 1;

// Temp file in the same directory, then rename.
void write_atomic(const std::filesystem::path& path, std::string_view content);

// densities: t,x,u
std::string densities_csv(const EngineOutput& e);

struct MassRow {
    double t = 0.0;
    double h = 0.0;     // deterministic engine, NaN when absent
    double h_mc = 0.0;  // particle estimate, NaN when absent
    double se = 0.0;
};
// masses: t,h_t,h_t_mc,se
std::string masses_csv(const std::vector<MassRow>& rows);
std::vector<MassRow> mass_rows(const std::vector<EngineOutput>& outs);

// engine L1 table: t,engine_a,engine_b,l1
std::string l1_csv(const std::vector<L1Entry>& rows);

struct PlotSeries {
    std::string label;
    std::vector<double> x, y;
    bool markers = false;
    std::string color = "#1f77b4";
    bool dashed = false;
    std::vector<double> y_lo, y_hi;  // optional vertical error bars
};
struct PlotSpec {
    std::string title, xlabel, ylabel;
    bool logx = false, logy = false;
    std::vector<PlotSeries> series;
    std::vector<std::string> notes;
    int width = 640, height = 420;
};
std::string svg_plot(const PlotSpec& p);
// Points with CI bars, fitted line and a reference slope annotation.
std::string rate_svg(const RateStudy& st, double theory_slope);
std::string densities_svg(const std::vector<EngineOutput>& outs, double t);

struct StageRecord {
    std::string name;
    double seconds = 0.0;
    std::string status;
};

struct RunManifest {
    std::string command;
    std::string scenario;
    std::string config_hash;
    std::uint64_t master_seed = 0;
    std::map<std::string, std::uint64_t> seeds;
    std::vector<StageRecord> stages;
    std::vector<std::pair<std::string, double>> tolerances;
    std::string status = "running";

    nlohmann::json to_json() const;
};

RunManifest make_manifest(const ScenarioConfig& c, const std::string& command,
                          const Tolerances& tol = default_tolerances());

} // namespace rmsolve
