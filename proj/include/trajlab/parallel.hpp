#pragma once

#include <cstddef>
#include <span>

namespace trajlab {

// Execution policy for the data-parallel kernels. Every parallel kernel has
// a serial twin with identical (bitwise) results; tests compare the two and
// the bench target times them.
enum class Exec { Serial, Parallel };

int hardware_threads();

// Deterministic pairwise reduction; independent of worker count because it
// runs after per-slot results are gathered.
double pairwise_sum(std::span<const double> v);

inline double pairwise_mean(std::span<const double> v) {
    return v.empty() ? 0.0 : pairwise_sum(v) / static_cast<double>(v.size());
}

}  // namespace trajlab
