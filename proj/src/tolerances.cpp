#include "rmsolve/tolerances.hpp"

namespace rmsolve {

namespace {

template <class F>
void visit(Tolerances& t, F&& f) {
    f("constant_condition", t.constant_condition);
    f("eigen_residual_analytic", t.eigen_residual_analytic);
    f("eigen_residual_grid", t.eigen_residual_grid);
    f("riccati_residual", t.riccati_residual);
    f("linear_v_residual", t.linear_v_residual);
    f("grid_normalization", t.grid_normalization);
    f("solution_normalization", t.solution_normalization);
    f("kde_normalization", t.kde_normalization);
    f("pde_mass_leak", t.pde_mass_leak);
    f("pde_normalization", t.pde_normalization);
    f("pde_clip", t.pde_clip);
    f("tilted_clip_mass", t.tilted_clip_mass);
    f("shift_invariance", t.shift_invariance);
    f("mass_identity", t.mass_identity);
    f("symmetric", t.symmetric);
    f("psd_floor", t.psd_floor);
    f("metric_symmetry", t.metric_symmetry);
    f("metric_triangle", t.metric_triangle);
    f("lp_feasibility", t.lp_feasibility);
    f("compact_mass", t.compact_mass);
    f("kummer_series", t.kummer_series);
    f("kummer_recurrence", t.kummer_recurrence);
    f("schrodinger_boundary", t.schrodinger_boundary);
}

} // namespace

Tolerances Tolerances::scaled(double factor) const {
    Tolerances out = *this;
    visit(out, [factor](const char*, double& v) { v *= factor; });
    return out;
}

std::vector<std::pair<std::string, double>> Tolerances::entries() const {
    std::vector<std::pair<std::string, double>> out;
    Tolerances copy = *this;
    visit(copy, [&out](const char* name, double& v) { out.emplace_back(name, v); });
    return out;
}

const Tolerances& default_tolerances() {
    static const Tolerances t{};
    return t;
}

} // namespace rmsolve
