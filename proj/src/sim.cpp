#include "trajlab/sim.hpp"

#include <cmath>
#include <numbers>
#include <stdexcept>
#include <string>

#include "trajlab/rng.hpp"

namespace trajlab::sim {

void SimConfig::validate() const {
    auto fail = [](const std::string& what) { throw std::invalid_argument("SimConfig: " + what); };
    if (n_particles < 1) fail("n_particles must be >= 1");
    if (box_half_width <= 0.0) fail("box_half_width must be positive");
    if (dt_fine <= 0.0) fail("dt_fine must be positive");
    if (sample_every < 1) fail("sample_every must be >= 1");
    if (n_sampled_steps < 1) fail("n_sampled_steps must be >= 1");
    if (spring_constant < 0.0) fail("spring_constant must be >= 0");
    if (charge_constant < 0.0) fail("charge_constant must be >= 0");
    if (softening <= 0.0) fail("softening must be positive");
    if (init_pos_sigma < 0.0) fail("init_pos_sigma must be >= 0");
    if (init_speed < 0.0) fail("init_speed must be >= 0");
    if (spring_edge_prob < 0.0 || spring_edge_prob > 1.0) fail("spring_edge_prob must be in [0,1]");
    if (charge_prob < 0.0 || charge_prob > 1.0) fail("charge_prob must be in [0,1]");
}

bool PhasePoint::finite() const {
    for (int i = 0; i < n(); ++i)
        if (!std::isfinite(x[i]) || !std::isfinite(y[i]) || !std::isfinite(vx[i]) ||
            !std::isfinite(vy[i]))
            return false;
    return true;
}

InteractionGraph sample_interaction_graph(const SimConfig& cfg, std::mt19937_64& rng) {
    cfg.validate();
    const int n = cfg.n_particles;
    InteractionGraph g;
    g.n = n;
    g.springs.assign(static_cast<std::size_t>(n) * n, 0);
    g.charges.assign(n, 0);
    std::uniform_real_distribution<double> u(0.0, 1.0);
    // one Bernoulli draw per unordered pair
    for (int i = 0; i < n; ++i)
        for (int j = i + 1; j < n; ++j)
            if (u(rng) < cfg.spring_edge_prob) g.set_spring(i, j, true);
    for (int i = 0; i < n; ++i)
        if (u(rng) < cfg.charge_prob) g.charges[i] = 1;
    return g;
}

PhasePoint sample_initial_conditions(const SimConfig& cfg, std::mt19937_64& rng) {
    cfg.validate();
    const int n = cfg.n_particles;
    PhasePoint s = PhasePoint::zeros(n);
    std::normal_distribution<double> gauss(0.0, cfg.init_pos_sigma);
    std::uniform_real_distribution<double> angle(0.0, 2.0 * std::numbers::pi);
    for (int i = 0; i < n; ++i) {
        // resample out-of-box positions rather than clipping
        do {
            s.x[i] = gauss(rng);
            s.y[i] = gauss(rng);
        } while (std::abs(s.x[i]) > cfg.box_half_width || std::abs(s.y[i]) > cfg.box_half_width);
        const double theta = angle(rng);
        s.vx[i] = cfg.init_speed * std::cos(theta);
        s.vy[i] = cfg.init_speed * std::sin(theta);
    }
    return s;
}

Forces compute_forces(const PhasePoint& state, const InteractionGraph& graph, const SimConfig& cfg) {
    if (!state.finite()) throw std::invalid_argument("compute_forces: non-finite positions");
    const int n = state.n();
    Forces f{std::vector<double>(n, 0.0), std::vector<double>(n, 0.0)};
    const double soft2 = cfg.softening * cfg.softening;
    // evaluate each unordered pair once and apply +/- so the pair sum is
    // exactly zero
    for (int i = 0; i < n; ++i) {
        for (int j = i + 1; j < n; ++j) {
            const double dx = state.x[i] - state.x[j];
            const double dy = state.y[i] - state.y[j];
            double fx = 0.0, fy = 0.0;
            if (graph.spring(i, j)) {
                fx -= cfg.spring_constant * dx;
                fy -= cfg.spring_constant * dy;
            }
            if (graph.charges[i] && graph.charges[j]) {
                const double r2 = dx * dx + dy * dy + soft2;
                const double inv = cfg.charge_sign * cfg.charge_constant / (r2 * std::sqrt(r2));
                fx += inv * dx;
                fy += inv * dy;
            }
            f.fx[i] += fx;
            f.fy[i] += fy;
            f.fx[j] -= fx;
            f.fy[j] -= fy;
        }
    }
    return f;
}

namespace {

void reflect_walls(PhasePoint& s, double half_width) {
    const int n = s.n();
    for (int i = 0; i < n; ++i) {
        // iterated mirroring handles multiple crossings in one step
        while (std::abs(s.x[i]) > half_width) {
            s.x[i] = (s.x[i] > 0.0 ? 2.0 * half_width : -2.0 * half_width) - s.x[i];
            s.vx[i] = -s.vx[i];
        }
        while (std::abs(s.y[i]) > half_width) {
            s.y[i] = (s.y[i] > 0.0 ? 2.0 * half_width : -2.0 * half_width) - s.y[i];
            s.vy[i] = -s.vy[i];
        }
    }
}

}  // namespace

PhasePoint leapfrog_step(const PhasePoint& state, const InteractionGraph& graph,
                         const SimConfig& cfg, double dt) {
    if (dt <= 0.0) throw std::invalid_argument("leapfrog_step: dt must be positive");
    const int n = state.n();
    PhasePoint next = state;
    const Forces f0 = compute_forces(state, graph, cfg);
    for (int i = 0; i < n; ++i) {
        next.vx[i] += 0.5 * dt * f0.fx[i];
        next.vy[i] += 0.5 * dt * f0.fy[i];
        next.x[i] += dt * next.vx[i];
        next.y[i] += dt * next.vy[i];
    }
    const Forces f1 = compute_forces(next, graph, cfg);
    for (int i = 0; i < n; ++i) {
        next.vx[i] += 0.5 * dt * f1.fx[i];
        next.vy[i] += 0.5 * dt * f1.fy[i];
    }
    reflect_walls(next, cfg.box_half_width);
    return next;
}

Trajectory simulate_trajectory(const InteractionGraph& graph, const PhasePoint& initial,
                               const SimConfig& cfg) {
    cfg.validate();
    Trajectory traj;
    traj.graph = graph;
    traj.effective_dt = cfg.effective_dt();
    traj.states.reserve(cfg.n_sampled_steps);
    traj.states.push_back(initial);
    PhasePoint cur = initial;
    for (int s = 1; s < cfg.n_sampled_steps; ++s) {
        for (int k = 0; k < cfg.sample_every; ++k) cur = leapfrog_step(cur, graph, cfg, cfg.dt_fine);
        if (!cur.finite())
            throw std::runtime_error("simulate_trajectory: non-finite state at sampled step " +
                                     std::to_string(s));
        traj.states.push_back(cur);
    }
    return traj;
}

double total_energy(const PhasePoint& state, const InteractionGraph& graph, const SimConfig& cfg) {
    const int n = state.n();
    double e = 0.0;
    for (int i = 0; i < n; ++i) e += 0.5 * (state.vx[i] * state.vx[i] + state.vy[i] * state.vy[i]);
    const double soft2 = cfg.softening * cfg.softening;
    for (int i = 0; i < n; ++i) {
        for (int j = i + 1; j < n; ++j) {
            const double dx = state.x[i] - state.x[j];
            const double dy = state.y[i] - state.y[j];
            const double r2 = dx * dx + dy * dy;
            if (graph.spring(i, j)) e += 0.5 * cfg.spring_constant * r2;
            if (graph.charges[i] && graph.charges[j])
                e += cfg.charge_sign * cfg.charge_constant / std::sqrt(r2 + soft2);
        }
    }
    return e;
}

void total_momentum(const PhasePoint& state, double& px, double& py) {
    px = 0.0;
    py = 0.0;
    for (int i = 0; i < state.n(); ++i) {
        px += state.vx[i];
        py += state.vy[i];
    }
}

std::vector<Trajectory> generate_trajectories(const SimConfig& cfg, int count, std::uint64_t seed,
                                              std::uint64_t first_index, Exec exec) {
    cfg.validate();
    std::vector<Trajectory> out(count);
    const bool par = exec == Exec::Parallel;
#pragma omp parallel for schedule(dynamic) if (par)
    for (int i = 0; i < count; ++i) {
        auto rng = rng::derive_stream(seed, first_index + static_cast<std::uint64_t>(i));
        const InteractionGraph g = sample_interaction_graph(cfg, rng);
        const PhasePoint init = sample_initial_conditions(cfg, rng);
        out[i] = simulate_trajectory(g, init, cfg);
    }
    return out;
}

}  // namespace trajlab::sim
