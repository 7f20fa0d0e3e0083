#pragma once

#include <cstddef>
#include <span>
#include <vector>

namespace rmsolve {

// Uncapacitated min-cost transshipment by the primal network simplex with
// strongly feasible trees (Cunningham's leaving-arc rule).
//
// The root must have arcs to and from every other node; the initial tree
// routes all supply through it. Costs may be changed between solves and
// the previous tree is reused.
class TransshipmentSolver {
public:
    TransshipmentSolver(int nodes, int root);

    int add_arc(int from, int to, double cost = 0.0);
    void set_cost(int arc, double cost) { cost_[arc] = cost; }
    // Supplies must sum to zero; resets the tree to the root star.
    void set_supplies(std::span<const double> supply);

    double solve();  // optimal cost

    int nodes() const { return n_; }
    int arcs() const { return static_cast<int>(from_.size()); }
    int from(int a) const { return from_[a]; }
    int to(int a) const { return to_[a]; }
    double cost(int a) const { return cost_[a]; }
    double flow(int a) const { return flow_[a]; }
    // Node potentials with potential(root) = 0; pi_i - pi_j <= c_ij for every arc.
    double potential(int v) const { return pi_[v]; }
    std::size_t pivots() const { return pivots_; }

private:
    void refresh_tree();
    void pivot(int entering);
    double reduced(int a) const { return cost_[a] - pi_[from_[a]] + pi_[to_[a]]; }

    int n_, root_;
    std::vector<int> from_, to_;
    std::vector<double> cost_, flow_;
    std::vector<int> root_out_, root_in_;  // arc root->v and v->root
    std::vector<int> parent_, parc_, depth_;
    std::vector<double> pi_;
    std::vector<char> in_tree_;
    std::vector<int> stamp_;
    int epoch_ = 0;
    std::size_t pivots_ = 0;
    std::size_t cursor_ = 0;
    double flow_eps_ = 0.0;
    bool ready_ = false;
    std::vector<int> path1_, path2_, stack_;
};

} // namespace rmsolve
