#include "rmsolve/report.hpp"

#include "rmsolve/errors.hpp"

#include <fmt/format.h>

#include <algorithm>
#include <cmath>
#include <fstream>
#include <limits>
#include <unistd.h>

namespace rmsolve {

void write_atomic(const std::filesystem::path& path, std::string_view content) {
    if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
    const auto tmp = path.parent_path() / fmt::format(".{}.tmp{}", path.filename().string(), ::getpid());
    {
        std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
        if (!out) throw ConfigError("cannot write " + tmp.string());
        out.write(content.data(), static_cast<std::streamsize>(content.size()));
        out.flush();
        if (!out) throw ConfigError("write failed for " + tmp.string());
    }
    std::filesystem::rename(tmp, path);
}

std::string densities_csv(const EngineOutput& e) {
    std::string out = "t,x,u\n";
    for (std::size_t k = 0; k < e.times.size(); ++k) {
        const auto& d = e.densities[k];
        for (std::size_t i = 0; i < d.size(); ++i) out += fmt::format("{:.12g},{:.12g},{:.12g}\n", e.times[k], d.x[i], d.values[i]);
    }
    return out;
}

std::vector<MassRow> mass_rows(const std::vector<EngineOutput>& outs) {
    const double nan = std::numeric_limits<double>::quiet_NaN();
    const EngineOutput* det = nullptr;
    const EngineOutput* mc = nullptr;
    for (const auto& e : outs) {
        if (!e.ok) continue;
        if (!det && (e.engine == "linear" || e.engine == "affine")) det = &e;
        if (!mc && e.engine == "particles") mc = &e;
    }
    // the tilted engine is the mass source when no Gaussian engine ran
    if (!det)
        for (const auto& e : outs)
            if (e.ok && e.engine == "tilted") det = &e;
    std::vector<double> times;
    for (const auto* e : {det, mc})
        if (e) times.insert(times.end(), e->times.begin(), e->times.end());
    std::sort(times.begin(), times.end());
    times.erase(std::unique(times.begin(), times.end()), times.end());
    std::vector<MassRow> rows;
    for (double t : times) {
        MassRow r{t, nan, nan, nan};
        auto find = [t](const EngineOutput* e) -> std::ptrdiff_t {
            if (!e) return -1;
            for (std::size_t i = 0; i < e->times.size(); ++i)
                if (e->times[i] == t) return static_cast<std::ptrdiff_t>(i);
            return -1;
        };
        if (auto i = find(det); i >= 0) r.h = det->mass[static_cast<std::size_t>(i)];
        if (auto i = find(mc); i >= 0) {
            r.h_mc = mc->mass[static_cast<std::size_t>(i)];
            r.se = mc->mass_se[static_cast<std::size_t>(i)];
        }
        rows.push_back(r);
    }
    return rows;
}

std::string masses_csv(const std::vector<MassRow>& rows) {
    std::string out = "t,h_t,h_t_mc,se\n";
    for (const auto& r : rows) out += fmt::format("{:.12g},{:.12g},{:.12g},{:.12g}\n", r.t, r.h, r.h_mc, r.se);
    return out;
}

std::string l1_csv(const std::vector<L1Entry>& rows) {
    std::string out = "t,engine_a,engine_b,l1\n";
    for (const auto& r : rows) out += fmt::format("{:.12g},{},{},{:.6e}\n", r.t, r.a, r.b, r.l1);
    return out;
}

namespace {

std::string escape(const std::string& s) {
    std::string o;
    for (char c : s) {
        switch (c) {
        case '<': o += "&lt;"; break;
        case '>': o += "&gt;"; break;
        case '&': o += "&amp;"; break;
        case '"': o += "&quot;"; break;
        default: o += c;
        }
    }
    return o;
}

std::vector<double> nice_ticks(double lo, double hi, bool log) {
    std::vector<double> t;
    if (log) {
        for (double e = std::floor(std::log10(lo)); e <= std::ceil(std::log10(hi)); e += 1.0) {
            for (double m : {1.0, 2.0, 5.0}) {
                const double v = m * std::pow(10.0, e);
                if (v >= lo * (1 - 1e-12) && v <= hi * (1 + 1e-12)) t.push_back(v);
            }
        }
        return t;
    }
    const double raw = (hi - lo) / 5.0;
    const double mag = std::pow(10.0, std::floor(std::log10(raw)));
    double step = mag;
    for (double m : {1.0, 2.0, 5.0, 10.0})
        if (m * mag >= raw) {
            step = m * mag;
            break;
        }
    for (double v = std::ceil(lo / step) * step; v <= hi + 1e-9 * step; v += step) t.push_back(std::abs(v) < 1e-12 * step ? 0.0 : v);
    return t;
}

} // namespace

std::string svg_plot(const PlotSpec& p) {
    const double W = p.width, H = p.height, ml = 70, mr = 20, mt = 40, mb = 55;
    double xlo = std::numeric_limits<double>::infinity(), xhi = -xlo, ylo = xlo, yhi = -xlo;
    for (const auto& s : p.series)
        for (std::size_t i = 0; i < s.x.size(); ++i) {
            if (!std::isfinite(s.x[i]) || !std::isfinite(s.y[i])) continue;
            if ((p.logx && s.x[i] <= 0) || (p.logy && s.y[i] <= 0)) continue;
            xlo = std::min(xlo, s.x[i]);
            xhi = std::max(xhi, s.x[i]);
            ylo = std::min(ylo, s.y[i]);
            yhi = std::max(yhi, s.y[i]);
            if (i < s.y_lo.size() && (!p.logy || s.y_lo[i] > 0)) ylo = std::min(ylo, s.y_lo[i]);
            if (i < s.y_hi.size()) yhi = std::max(yhi, s.y_hi[i]);
        }
    if (!std::isfinite(xlo)) xlo = 0, xhi = 1, ylo = 0, yhi = 1;
    if (xhi == xlo) xhi = xlo + 1;
    if (yhi == ylo) yhi = ylo + 1;
    auto tx = [&](double v) { return p.logx ? std::log(v) : v; };
    auto ty = [&](double v) { return p.logy ? std::log(v) : v; };
    if (p.logy) {
        ylo /= 1.3;
        yhi *= 1.3;
    } else {
        const double pad = 0.05 * (yhi - ylo);
        ylo -= pad;
        yhi += pad;
    }
    if (p.logx) {
        xlo /= 1.15;
        xhi *= 1.15;
    }
    auto px = [&](double v) { return ml + (tx(v) - tx(xlo)) / (tx(xhi) - tx(xlo)) * (W - ml - mr); };
    auto py = [&](double v) { return H - mb - (ty(v) - ty(ylo)) / (ty(yhi) - ty(ylo)) * (H - mt - mb); };

    std::string o = fmt::format(
        "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{0}\" height=\"{1}\" viewBox=\"0 0 {0} {1}\" font-family=\"sans-serif\" font-size=\"12\">\n",
        p.width, p.height);
    o += fmt::format("<rect width=\"{}\" height=\"{}\" fill=\"white\"/>\n", p.width, p.height);
    o += fmt::format("<text x=\"{:.1f}\" y=\"22\" text-anchor=\"middle\" font-size=\"15\">{}</text>\n", W / 2, escape(p.title));
    o += fmt::format("<rect x=\"{}\" y=\"{}\" width=\"{}\" height=\"{}\" fill=\"none\" stroke=\"black\"/>\n", ml, mt, W - ml - mr, H - mt - mb);
    for (double v : nice_ticks(xlo, xhi, p.logx)) {
        o += fmt::format("<line x1=\"{0:.1f}\" y1=\"{1}\" x2=\"{0:.1f}\" y2=\"{2}\" stroke=\"black\"/>\n", px(v), H - mb, H - mb + 5);
        o += fmt::format("<text x=\"{:.1f}\" y=\"{}\" text-anchor=\"middle\">{:g}</text>\n", px(v), H - mb + 18, v);
    }
    for (double v : nice_ticks(ylo, yhi, p.logy)) {
        o += fmt::format("<line x1=\"{0}\" y1=\"{1:.1f}\" x2=\"{2}\" y2=\"{1:.1f}\" stroke=\"black\"/>\n", ml - 5, py(v), ml);
        o += fmt::format("<text x=\"{}\" y=\"{:.1f}\" text-anchor=\"end\">{:.3g}</text>\n", ml - 8, py(v) + 4, v);
    }
    o += fmt::format("<text x=\"{:.1f}\" y=\"{}\" text-anchor=\"middle\">{}</text>\n", ml + (W - ml - mr) / 2, H - 12, escape(p.xlabel));
    o += fmt::format("<text x=\"16\" y=\"{0:.1f}\" text-anchor=\"middle\" transform=\"rotate(-90 16 {0:.1f})\">{1}</text>\n",
                     mt + (H - mt - mb) / 2, escape(p.ylabel));
    double ly = mt + 16;
    for (const auto& s : p.series) {
        std::string pts;
        for (std::size_t i = 0; i < s.x.size(); ++i) {
            if (!std::isfinite(s.x[i]) || !std::isfinite(s.y[i])) continue;
            if ((p.logx && s.x[i] <= 0) || (p.logy && s.y[i] <= 0)) continue;
            pts += fmt::format("{:.2f},{:.2f} ", px(s.x[i]), py(s.y[i]));
            if (i < s.y_lo.size() && i < s.y_hi.size() && (!p.logy || s.y_lo[i] > 0))
                o += fmt::format("<line x1=\"{0:.2f}\" y1=\"{1:.2f}\" x2=\"{0:.2f}\" y2=\"{2:.2f}\" stroke=\"{3}\" stroke-width=\"1.5\"/>\n",
                                 px(s.x[i]), py(s.y_lo[i]), py(s.y_hi[i]), s.color);
            if (s.markers) o += fmt::format("<circle cx=\"{:.2f}\" cy=\"{:.2f}\" r=\"3.5\" fill=\"{}\"/>\n", px(s.x[i]), py(s.y[i]), s.color);
        }
        if (!s.markers)
            o += fmt::format("<polyline fill=\"none\" stroke=\"{}\" stroke-width=\"1.5\"{} points=\"{}\"/>\n", s.color,
                             s.dashed ? " stroke-dasharray=\"6 4\"" : "", pts);
        if (s.label.empty()) continue;
        o += fmt::format("<text x=\"{:.1f}\" y=\"{:.1f}\" text-anchor=\"end\" fill=\"{}\">{}</text>\n", W - mr - 8, ly,
                         s.color, escape(s.label));
        ly += 16;
    }
    double ny = H - mb - 10 - 16.0 * static_cast<double>(p.notes.size() - (p.notes.empty() ? 0 : 1));
    for (const auto& n : p.notes) {
        o += fmt::format("<text x=\"{}\" y=\"{:.1f}\">{}</text>\n", ml + 8, ny, escape(n));
        ny += 16;
    }
    o += "</svg>\n";
    return o;
}

std::string rate_svg(const RateStudy& st, double theory_slope) {
    PlotSpec p;
    p.title = "Propagation of chaos: D(N)";
    p.xlabel = "N";
    p.ylabel = "D(N)";
    p.logx = p.logy = true;
    PlotSeries pts{"D(N) with 95% CI", {}, {}, true, "#1f77b4"};
    PlotSeries fit{fmt::format("fit slope {:.3f}", st.slope), {}, {}, false, "#d62728"};
    PlotSeries th{fmt::format("slope {:g} reference", theory_slope), {}, {}, false, "#555555", true};
    for (const auto& r : st.rows) {
        const double n = static_cast<double>(r.N);
        pts.x.push_back(n);
        pts.y.push_back(r.value);
        pts.y_lo.push_back(r.ci_low);
        pts.y_hi.push_back(r.ci_high);
        fit.x.push_back(n);
        fit.y.push_back(std::exp(st.intercept + st.slope * std::log(n)));
    }
    if (!st.rows.empty()) {
        const double n0 = static_cast<double>(st.rows.front().N);
        for (const auto& r : st.rows) {
            th.x.push_back(static_cast<double>(r.N));
            th.y.push_back(st.rows.front().value * std::pow(static_cast<double>(r.N) / n0, theory_slope));
        }
    }
    p.series = {pts, fit, th};
    p.notes.push_back(fmt::format("slope {:.3f}, 95% CI [{:.3f}, {:.3f}]{}", st.slope, st.slope_ci_low, st.slope_ci_high,
                                  st.reliable ? "" : " (unreliable: single replication)"));
    return svg_plot(p);
}

std::string densities_svg(const std::vector<EngineOutput>& outs, double t) {
    static const char* colors[] = {"#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#8c564b"};
    PlotSpec p;
    p.title = fmt::format("u(t, x) at t = {:g}", t);
    p.xlabel = "x";
    p.ylabel = "u";
    std::size_t k = 0;
    for (const auto& e : outs) {
        if (!e.ok) continue;
        for (std::size_t i = 0; i < e.times.size(); ++i)
            if (e.times[i] == t) p.series.push_back({e.engine, e.densities[i].x, e.densities[i].values, false, colors[k % 6], k % 2 == 1});
        ++k;
    }
    return svg_plot(p);
}

nlohmann::json RunManifest::to_json() const {
    nlohmann::json j;
    j["command"] = command;
    j["scenario"] = scenario;
    j["config_hash"] = config_hash;
    j["master_seed"] = master_seed;
    j["seeds"] = seeds;
    j["artifact_version"] = artifact_version;
    j["csv_schema_version"] = csv_schema_version;
    j["stages"] = nlohmann::json::array();
    for (const auto& s : stages) j["stages"].push_back({{"name", s.name}, {"seconds", s.seconds}, {"status", s.status}});
    nlohmann::json t = nlohmann::json::object();
    for (const auto& [k, v] : tolerances) t[k] = v;
    j["tolerances"] = t;
    j["status"] = status;
    return j;
}

RunManifest make_manifest(const ScenarioConfig& c, const std::string& command, const Tolerances& tol) {
    RunManifest m;
    m.command = command;
    m.scenario = c.name;
    m.config_hash = config_hash(c);
    m.master_seed = c.seed;
    for (const char* s : {"tilted", "particles", "chaos"}) m.seeds[s] = stage_seed(c, s);
    m.tolerances = tol.entries();
    return m;
}

} // namespace rmsolve
