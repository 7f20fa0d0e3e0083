#pragma once

#include "rmsolve/tolerances.hpp"

#include <string>
#include <vector>

namespace rmsolve {

struct InvariantResult {
    std::string id;
    std::string description;
    bool pass = false;
    double value = 0.0;
    double threshold = 0.0;
    std::string detail;  // exception text when the check itself failed
};

// Stable identifiers, in run order.
std::vector<std::string> invariant_ids();

// Runs the whole suite. Thresholds come from `tol` where the tolerance table
// has an entry, so a zeroed table forces failures.
std::vector<InvariantResult> run_invariants(const Tolerances& tol = default_tolerances(), int threads = 1);

// Fixed-width pass/fail matrix.
std::string format_matrix(const std::vector<InvariantResult>& rows);

} // namespace rmsolve
