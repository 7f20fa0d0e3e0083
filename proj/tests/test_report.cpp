#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include "rmsolve/report.hpp"

#include <cmath>
#include <fstream>
#include <limits>
#include <sstream>

using namespace rmsolve;

namespace {

std::string slurp(const std::filesystem::path& p) {
    std::ifstream in(p);
    std::stringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

std::size_t count(const std::string& s, const std::string& needle) {
    std::size_t n = 0;
    for (auto p = s.find(needle); p != std::string::npos; p = s.find(needle, p + 1)) ++n;
    return n;
}

} // namespace

TEST_CASE("atomic write replaces content and leaves no temp file") {
    const auto dir = std::filesystem::temp_directory_path() / "rmsolve_report_test";
    std::filesystem::remove_all(dir);
    write_atomic(dir / "a" / "x.csv", "one\n");
    write_atomic(dir / "a" / "x.csv", "two\n");
    CHECK(slurp(dir / "a" / "x.csv") == "two\n");
    std::size_t files = 0;
    for ([[maybe_unused]] const auto& e : std::filesystem::directory_iterator(dir / "a")) ++files;
    CHECK(files == 1);
    std::filesystem::remove_all(dir);
}

TEST_CASE("csv schemas") {
    EngineOutput e;
    e.engine = "linear";
    e.ok = true;
    e.times = {0.5};
    e.densities.emplace_back(std::vector<double>{0.0, 1.0}, std::vector<double>{0.25, 0.125});
    CHECK(densities_csv(e) == "t,x,u\n0.5,0,0.25\n0.5,1,0.125\n");

    const double nan = std::numeric_limits<double>::quiet_NaN();
    CHECK(masses_csv({{1.0, 2.0, nan, nan}}) == "t,h_t,h_t_mc,se\n1,2,nan,nan\n");
    CHECK(l1_csv({{1.0, "a", "b", 0.5}}) == "t,engine_a,engine_b,l1\n1,a,b,5.000000e-01\n");

    RateStudy st;
    DqtResult r;
    r.N = 100;
    r.value = 0.1;
    r.ci_low = 0.09;
    r.ci_high = 0.11;
    st.rows = {r};
    CHECK(st.csv() == "N,D,ci_lo,ci_hi\n100,0.1,0.09,0.11\n");
}

TEST_CASE("mass rows merge the deterministic engine and the particle estimate") {
    EngineOutput lin, part, pde;
    lin.engine = "linear";
    lin.ok = true;
    lin.times = {0.5, 1.0};
    lin.mass = {1.5, 2.5};
    lin.mass_se = {0.0, 0.0};
    part.engine = "particles";
    part.ok = true;
    part.times = {1.0};
    part.mass = {2.4};
    part.mass_se = {0.05};
    pde.engine = "pde";
    pde.ok = false;
    const auto rows = mass_rows({pde, lin, part});
    REQUIRE(rows.size() == 2);
    CHECK(rows[0].h == 1.5);
    CHECK(std::isnan(rows[0].h_mc));
    CHECK(rows[1].h_mc == 2.4);
    CHECK(rows[1].se == 0.05);
}

TEST_CASE("svg plot: well-formed, one polyline per line series, escaped labels") {
    PlotSpec p;
    p.title = "a < b & c";
    p.series.push_back({"s1", {0, 1, 2}, {1, 2, 3}});
    p.series.push_back({"s2", {0, 1, 2}, {3, 2, 1}, false, "#ff0000", true});
    p.series.push_back({"pts", {0.5}, {1.5}, true});
    const auto svg = svg_plot(p);
    CHECK(svg.rfind("<svg", 0) == 0);
    CHECK(svg.find("</svg>") != std::string::npos);
    CHECK(count(svg, "<polyline") == 2);
    CHECK(count(svg, "<circle") == 1);
    CHECK(svg.find("a &lt; b &amp; c") != std::string::npos);
    CHECK(svg.find("stroke-dasharray") != std::string::npos);
}

TEST_CASE("rate plot carries points, error bars, fit and reference slope") {
    RateStudy st;
    for (std::size_t N : {250u, 500u, 1000u}) {
        DqtResult r;
        r.N = N;
        r.value = 1.0 / std::sqrt(static_cast<double>(N));
        r.ci_low = 0.9 * r.value;
        r.ci_high = 1.1 * r.value;
        st.rows.push_back(r);
    }
    st.slope = -0.5;
    st.intercept = 0.0;
    st.reliable = false;
    const auto svg = rate_svg(st, -0.5);
    CHECK(count(svg, "<circle") == 3);
    CHECK(svg.find("slope -0.5 reference") != std::string::npos);
    CHECK(svg.find("unreliable") != std::string::npos);
}

TEST_CASE("manifest carries hash, seeds and the tolerance table") {
    const auto c = builtin_scenario("harmonic");
    const auto m = make_manifest(c, "solve");
    const auto j = m.to_json();
    CHECK(j["config_hash"] == config_hash(c));
    CHECK(j["master_seed"] == c.seed);
    CHECK(j["seeds"]["particles"] == stage_seed(c, "particles"));
    CHECK(j["seeds"]["tilted"] != j["seeds"]["particles"]);
    CHECK(j["tolerances"]["riccati_residual"] == 1e-10);
    CHECK(j["csv_schema_version"] == csv_schema_version);
    CHECK(j["status"] == "running");
}
