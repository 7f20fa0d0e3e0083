#pragma once

#include <cstddef>
#include <functional>
#include <cmath>
#include <span>

namespace rmsolve {

// Resolve a requested worker count; k <= 0 means hardware concurrency.
int resolve_threads(int k);

// Runs body(begin, end) over contiguous chunks of [0, n). Work assignment
// never influences results as long as body writes only to its own indices.
void parallel_for(std::size_t n, int threads,
                  const std::function<void(std::size_t, std::size_t)>& body);

// Pairwise summation with a fixed association order.
double pairwise_sum(std::span<const double> v);

// Neumaier compensated accumulator.
struct CompensatedSum {
    double sum = 0.0;
    double c = 0.0;
    void add(double x) {
        const double t = sum + x;
        if (std::abs(sum) >= std::abs(x))
            c += (sum - t) + x;
        else
            c += (x - t) + sum;
        sum = t;
    }
    double value() const { return sum + c; }
};

} // namespace rmsolve
