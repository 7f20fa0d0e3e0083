#include "rmsolve/network_simplex.hpp"

#include "rmsolve/errors.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

namespace rmsolve {

TransshipmentSolver::TransshipmentSolver(int nodes, int root)
    : n_(nodes), root_(root), root_out_(nodes, -1), root_in_(nodes, -1), parent_(nodes, -1), parc_(nodes, -1),
      depth_(nodes, 0), pi_(nodes, 0.0), stamp_(nodes, 0) {
    if (nodes < 1 || root < 0 || root >= nodes) throw ConfigError("TransshipmentSolver: bad node count or root");
}

int TransshipmentSolver::add_arc(int from, int to, double cost) {
    if (from < 0 || to < 0 || from >= n_ || to >= n_ || from == to) throw ConfigError("TransshipmentSolver: bad arc");
    const int a = static_cast<int>(from_.size());
    from_.push_back(from);
    to_.push_back(to);
    cost_.push_back(cost);
    flow_.push_back(0.0);
    in_tree_.push_back(0);
    if (from == root_) root_out_[to] = a;
    if (to == root_) root_in_[from] = a;
    ready_ = false;
    return a;
}

void TransshipmentSolver::set_supplies(std::span<const double> supply) {
    if (static_cast<int>(supply.size()) != n_) throw ConfigError("TransshipmentSolver: supply size mismatch");
    double total = 0.0, scale = 0.0;
    for (double s : supply) {
        total += s;
        scale += std::abs(s);
    }
    if (std::abs(total) > 1e-9 * std::max(1.0, scale)) throw ConfigError("TransshipmentSolver: supplies do not balance");
    std::fill(flow_.begin(), flow_.end(), 0.0);
    std::fill(in_tree_.begin(), in_tree_.end(), 0);
    flow_eps_ = 1e-15 * std::max(1.0, scale);
    for (int v = 0; v < n_; ++v) {
        if (v == root_) continue;
        if (root_out_[v] < 0 || root_in_[v] < 0) throw ConfigError("TransshipmentSolver: root must connect to every node");
        parent_[v] = root_;
        // zero-flow tree arcs point away from the root (strong feasibility)
        if (supply[v] > 0.0) {
            parc_[v] = root_in_[v];
            flow_[parc_[v]] = supply[v];
        } else {
            parc_[v] = root_out_[v];
            flow_[parc_[v]] = -supply[v];
        }
        in_tree_[parc_[v]] = 1;
    }
    parent_[root_] = -1;
    parc_[root_] = -1;
    pivots_ = 0;
    ready_ = true;
}

void TransshipmentSolver::refresh_tree() {
    ++epoch_;
    stamp_[root_] = epoch_;
    depth_[root_] = 0;
    pi_[root_] = 0.0;
    for (int v = 0; v < n_; ++v) {
        if (stamp_[v] == epoch_) continue;
        stack_.clear();
        int x = v;
        while (stamp_[x] != epoch_) {
            stack_.push_back(x);
            x = parent_[x];
        }
        for (auto it = stack_.rbegin(); it != stack_.rend(); ++it) {
            const int y = *it, p = parent_[y], a = parc_[y];
            depth_[y] = depth_[p] + 1;
            // tree arcs have zero reduced cost
            pi_[y] = from_[a] == y ? pi_[p] + cost_[a] : pi_[p] - cost_[a];
            stamp_[y] = epoch_;
        }
    }
}

void TransshipmentSolver::pivot(int e) {
    const int u = from_[e], v = to_[e];
    int a = u, b = v;
    while (a != b) {
        if (depth_[a] > depth_[b]) a = parent_[a];
        else if (depth_[b] > depth_[a]) b = parent_[b];
        else {
            a = parent_[a];
            b = parent_[b];
        }
    }
    const int w = a;
    path1_.clear();
    path2_.clear();
    for (int x = u; x != w; x = parent_[x]) path1_.push_back(x);
    for (int x = v; x != w; x = parent_[x]) path2_.push_back(x);

    // Traverse from the apex down to u, across e, then up from v; keep the
    // last blocking arc of minimum flow.
    double delta = std::numeric_limits<double>::infinity();
    int leave = -1;
    bool leave_on_u_side = false;
    for (auto it = path1_.rbegin(); it != path1_.rend(); ++it) {
        const int x = *it, arc = parc_[x];
        if (from_[arc] == x && flow_[arc] <= delta) {
            delta = flow_[arc];
            leave = x;
            leave_on_u_side = true;
        }
    }
    for (int x : path2_) {
        const int arc = parc_[x];
        if (to_[arc] == x && flow_[arc] <= delta) {
            delta = flow_[arc];
            leave = x;
            leave_on_u_side = false;
        }
    }
    if (leave < 0) throw NumericError("network simplex: unbounded transshipment (negative cycle)");

    if (delta > 0.0) {
        for (int x : path1_) {
            const int arc = parc_[x];
            flow_[arc] += from_[arc] == x ? -delta : delta;
            if (flow_[arc] < flow_eps_) flow_[arc] = 0.0;
        }
        for (int x : path2_) {
            const int arc = parc_[x];
            flow_[arc] += to_[arc] == x ? -delta : delta;
            if (flow_[arc] < flow_eps_) flow_[arc] = 0.0;
        }
    }
    flow_[e] = delta;
    in_tree_[parc_[leave]] = 0;
    in_tree_[e] = 1;

    // Re-hang the cut subtree: reverse parent links from the entering
    // endpoint up to the leaving node.
    int x = leave_on_u_side ? u : v;
    int new_parent = leave_on_u_side ? v : u;
    int new_arc = e;
    while (true) {
        const int old_parent = parent_[x], old_arc = parc_[x];
        parent_[x] = new_parent;
        parc_[x] = new_arc;
        if (x == leave) break;
        new_parent = x;
        new_arc = old_arc;
        x = old_parent;
    }
    ++pivots_;
}

double TransshipmentSolver::solve() {
    if (!ready_) throw ConfigError("TransshipmentSolver: supplies not set");
    refresh_tree();
    const std::size_t m = from_.size();
    const std::size_t block = std::max<std::size_t>(64, static_cast<std::size_t>(std::sqrt(static_cast<double>(m))));
    double cmax = 0.0;
    for (double c : cost_) cmax = std::max(cmax, std::abs(c));
    const double tol = 1e-13 * (1.0 + cmax);
    const std::size_t cap = 200 * m + 1000;
    std::size_t local = 0;
    while (true) {
        int best = -1;
        double best_rc = -tol;
        std::size_t scanned = 0;
        while (scanned < m) {
            const std::size_t len = std::min(block, m - scanned);
            for (std::size_t k = 0; k < len; ++k) {
                const std::size_t arc = (cursor_ + k) % m;
                if (in_tree_[arc]) continue;
                const double rc = reduced(static_cast<int>(arc));
                if (rc < best_rc) {
                    best_rc = rc;
                    best = static_cast<int>(arc);
                }
            }
            cursor_ = (cursor_ + len) % m;
            scanned += len;
            if (best >= 0) break;
        }
        if (best < 0) break;
        pivot(best);
        refresh_tree();
        if (++local > cap) throw NumericError("network simplex: pivot limit reached (cycling guard)");
    }
    double total = 0.0;
    for (std::size_t a = 0; a < m; ++a) total += cost_[a] * flow_[a];
    return total;
}

} // namespace rmsolve
