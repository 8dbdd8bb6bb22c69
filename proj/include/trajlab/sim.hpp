#pragma once

#include <cstdint>
#include <random>
#include <vector>

#include "trajlab/parallel.hpp"

namespace trajlab::sim {

struct SimConfig {
    int n_particles = 5;
    double box_half_width = 5.0;
    double dt_fine = 0.001;
    int sample_every = 100;
    int n_sampled_steps = 100;
    double spring_constant = 0.1;
    double charge_constant = 1.0;
    double charge_sign = 1.0;  // +1 repulsive between like charges
    double softening = 0.1;
    double init_pos_sigma = 0.5;
    double init_speed = 0.5;
    double spring_edge_prob = 0.5;
    double charge_prob = 0.5;
    std::uint64_t rng_seed = 0;

    double effective_dt() const { return dt_fine * sample_every; }
    void validate() const;  // throws std::invalid_argument
};

/// Symmetric spring adjacency plus per-particle charge flags.
struct InteractionGraph {
    int n = 0;
    std::vector<std::uint8_t> springs;  // row-major n*n, symmetric, zero diagonal
    std::vector<std::uint8_t> charges;  // length n

    bool spring(int i, int j) const { return springs[static_cast<std::size_t>(i) * n + j] != 0; }
    void set_spring(int i, int j, bool on) {
        springs[static_cast<std::size_t>(i) * n + j] = on ? 1 : 0;
        springs[static_cast<std::size_t>(j) * n + i] = on ? 1 : 0;
    }
};

/// All particles at one instant; struct-of-arrays over particles.
struct PhasePoint {
    std::vector<double> x, y, vx, vy;

    int n() const { return static_cast<int>(x.size()); }
    static PhasePoint zeros(int n) { return {std::vector<double>(n, 0.0), std::vector<double>(n, 0.0), std::vector<double>(n, 0.0), std::vector<double>(n, 0.0)}; }
    bool finite() const;
};

struct Forces {
    std::vector<double> fx, fy;
};

struct Trajectory {
    std::vector<PhasePoint> states;  // length n_sampled_steps, states[0] = initial
    InteractionGraph graph;
    double effective_dt = 0.0;
};

InteractionGraph sample_interaction_graph(const SimConfig& cfg, std::mt19937_64& rng);
PhasePoint sample_initial_conditions(const SimConfig& cfg, std::mt19937_64& rng);

Forces compute_forces(const PhasePoint& state, const InteractionGraph& graph, const SimConfig& cfg);

// Kick-drift-kick step followed by elastic wall reflection (iterated
// mirroring, normal velocity negated).
PhasePoint leapfrog_step(const PhasePoint& state, const InteractionGraph& graph,
                         const SimConfig& cfg, double dt);

// Records states[0] = initial, then every sample_every-th fine step, for
// n_sampled_steps states total. Throws std::runtime_error on numerical
// blow-up (non-finite state).
Trajectory simulate_trajectory(const InteractionGraph& graph, const PhasePoint& initial,
                               const SimConfig& cfg);

// Kinetic + spring + softened-charge potential energy.
double total_energy(const PhasePoint& state, const InteractionGraph& graph, const SimConfig& cfg);
void total_momentum(const PhasePoint& state, double& px, double& py);

// Independent simulations for indices [first_index, first_index + count);
// each draws graph and initial conditions from rng::derive_stream(seed, index),
// so output is identical for Serial and Parallel execution.
std::vector<Trajectory> generate_trajectories(const SimConfig& cfg, int count,
                                              std::uint64_t seed, std::uint64_t first_index,
                                              Exec exec = Exec::Parallel);

}  // namespace trajlab::sim
