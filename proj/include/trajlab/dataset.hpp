#pragma once

#include <array>
#include <cstdint>
#include <string>
#include <vector>

#include "trajlab/parallel.hpp"
#include "trajlab/sim.hpp"

namespace trajlab::data {

/// One stored trajectory: normalized f32 states in [n_steps][n_particles][4]
/// order (x, y, vx, vy) plus its ground-truth interaction graph.
struct StoredTrajectory {
    sim::InteractionGraph graph;
    std::vector<float> states;  // n_steps * n_particles * 4
};

struct Dataset {
    std::string split;  // train/val/test, carried by filename
    int n_particles = 0;
    int n_steps = 0;
    double effective_dt = 0.0;
    std::array<double, 4> norm_factors{1.0, 1.0, 1.0, 1.0};  // max-abs per coordinate
    std::vector<StoredTrajectory> trajectories;

    std::size_t state_count() const {
        return static_cast<std::size_t>(n_steps) * n_particles * 4;
    }
    bool operator==(const Dataset& other) const;
};

// Max-abs per coordinate over raw trajectories; factors are strictly positive
// (a coordinate that is identically zero gets factor 1).
std::array<double, 4> compute_norm_factors(const std::vector<sim::Trajectory>& trajs);

Dataset normalize(const std::vector<sim::Trajectory>& trajs, const std::array<double, 4>& factors,
                  const std::string& split);

// TULD container, little-endian. Writes to <path>.tmp then renames, so an
// I/O failure never leaves a partial file at <path>.
void write_dataset(const std::string& path, const Dataset& ds);
Dataset read_dataset(const std::string& path);

struct SplitCounts {
    int train = 0;
    int val = 0;
    int test = 0;
};

// Simulates all splits (normalization factors come from the train split
// only) and writes <out_dir>/{train,val,test}.tuld.
void generate_dataset(const sim::SimConfig& cfg, const SplitCounts& counts, std::uint64_t seed,
                      const std::string& out_dir, Exec exec = Exec::Parallel);

}  // namespace trajlab::data
