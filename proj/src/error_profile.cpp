#include "trajlab/error_profile.hpp"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <limits>
#include <stdexcept>

#include "trajlab/rng.hpp"

namespace trajlab::err {

namespace {

// mean |difference| over all particles and all four coordinates
double mean_abs_deviation(const sim::PhasePoint& a, const sim::PhasePoint& b) {
    const int n = a.n();
    double s = 0.0;
    for (int i = 0; i < n; ++i)
        s += std::abs(a.x[i] - b.x[i]) + std::abs(a.y[i] - b.y[i]) + std::abs(a.vx[i] - b.vx[i]) +
             std::abs(a.vy[i] - b.vy[i]);
    return s / (4.0 * n);
}

int steps_per_sample(double sample_interval, double dt) {
    const double ratio = sample_interval / dt;
    const int k = static_cast<int>(std::llround(ratio));
    if (k < 1 || std::abs(ratio - k) > 1e-9 * ratio)
        throw std::invalid_argument("error_profile: dt must divide the sampling interval");
    return k;
}

sim::Trajectory integrate_sampled(const sim::InteractionGraph& graph, const sim::PhasePoint& init,
                                  const sim::SimConfig& base, double dt, int horizon) {
    sim::SimConfig cfg = base;
    cfg.dt_fine = dt;
    cfg.sample_every = steps_per_sample(base.effective_dt(), dt);
    cfg.n_sampled_steps = horizon;
    return sim::simulate_trajectory(graph, init, cfg);
}

// Reduce per-run cell values (already gathered in run order) with a
// deterministic pairwise sum; returns mean and standard error.
void reduce_runs(const std::vector<double>& vals, double& mean_out, double& stderr_out) {
    const std::size_t n = vals.size();
    if (n == 0) {
        mean_out = 0.0;
        stderr_out = 0.0;
        return;
    }
    mean_out = pairwise_sum(vals) / static_cast<double>(n);
    if (n < 2) {
        stderr_out = 0.0;
        return;
    }
    std::vector<double> sq(n);
    for (std::size_t i = 0; i < n; ++i) {
        const double d = vals[i] - mean_out;
        sq[i] = d * d;
    }
    const double var = pairwise_sum(sq) / static_cast<double>(n - 1);
    stderr_out = std::sqrt(var / static_cast<double>(n));
}

struct RunTable {
    // deviation[run][time * n_axis2 + a]; NaN marks an excluded (run, axis2)
    std::vector<std::vector<double>> deviation;
};

ErrorGrid assemble_grid(const sim::SimConfig& cfg, const std::vector<double>& axis2, int horizon,
                        int n_runs, const RunTable& table) {
    ErrorGrid grid;
    grid.n_runs = n_runs;
    grid.axis2 = axis2;
    grid.times.resize(horizon);
    for (int k = 0; k < horizon; ++k) grid.times[k] = k * cfg.effective_dt();
    const std::size_t na = axis2.size();
    grid.mean.assign(static_cast<std::size_t>(horizon) * na, 0.0);
    grid.stderr_mean.assign(static_cast<std::size_t>(horizon) * na, 0.0);
    grid.n_effective.assign(na, 0);
    for (std::size_t a = 0; a < na; ++a) {
        int eff = 0;
        for (int r = 0; r < n_runs; ++r)
            if (!std::isnan(table.deviation[r][a])) ++eff;
        grid.n_effective[a] = eff;
    }
    std::vector<double> cell;
    cell.reserve(n_runs);
    for (int k = 0; k < horizon; ++k) {
        for (std::size_t a = 0; a < na; ++a) {
            cell.clear();
            for (int r = 0; r < n_runs; ++r) {
                const double v = table.deviation[r][static_cast<std::size_t>(k) * na + a];
                if (!std::isnan(v)) cell.push_back(v);
            }
            reduce_runs(cell, grid.mean[static_cast<std::size_t>(k) * na + a],
                        grid.stderr_mean[static_cast<std::size_t>(k) * na + a]);
        }
    }
    return grid;
}

}  // namespace

ErrorGrid computational_error(const sim::SimConfig& cfg, const std::vector<double>& dt_grid,
                              double reference_dt, int horizon, int n_runs, std::uint64_t seed,
                              Exec exec) {
    cfg.validate();
    if (horizon < 1 || n_runs < 1)
        throw std::invalid_argument("computational_error: horizon and n_runs must be >= 1");
    if (dt_grid.empty()) throw std::invalid_argument("computational_error: empty dt grid");
    for (double dt : dt_grid)
        if (reference_dt > dt)
            throw std::invalid_argument("computational_error: reference_dt must not exceed the grid");
    steps_per_sample(cfg.effective_dt(), reference_dt);
    for (double dt : dt_grid) steps_per_sample(cfg.effective_dt(), dt);

    const std::size_t na = dt_grid.size();
    RunTable table;
    table.deviation.assign(n_runs, std::vector<double>(static_cast<std::size_t>(horizon) * na,
                                                       std::numeric_limits<double>::quiet_NaN()));
    const bool par = exec == Exec::Parallel;
#pragma omp parallel for schedule(dynamic) if (par)
    for (int r = 0; r < n_runs; ++r) {
        auto rng = rng::derive_stream(seed, static_cast<std::uint64_t>(r));
        const auto graph = sim::sample_interaction_graph(cfg, rng);
        const auto init = sim::sample_initial_conditions(cfg, rng);
        sim::Trajectory reference;
        try {
            reference = integrate_sampled(graph, init, cfg, reference_dt, horizon);
        } catch (const std::runtime_error&) {
            continue;  // whole run excluded; NaNs already in place
        }
        for (std::size_t a = 0; a < na; ++a) {
            try {
                const auto traj = integrate_sampled(graph, init, cfg, dt_grid[a], horizon);
                for (int k = 0; k < horizon; ++k)
                    table.deviation[r][static_cast<std::size_t>(k) * na + a] =
                        mean_abs_deviation(traj.states[k], reference.states[k]);
            } catch (const std::runtime_error&) {
                // this (run, dt) stays excluded
            }
        }
    }
    return assemble_grid(cfg, dt_grid, horizon, n_runs, table);
}

ErrorGrid physical_error(const sim::SimConfig& cfg, const std::vector<double>& sigma_grid,
                         int horizon, int n_runs, std::uint64_t seed, Exec exec) {
    cfg.validate();
    if (horizon < 1 || n_runs < 1)
        throw std::invalid_argument("physical_error: horizon and n_runs must be >= 1");
    if (sigma_grid.empty()) throw std::invalid_argument("physical_error: empty sigma grid");
    for (double s : sigma_grid)
        if (s < 0.0) throw std::invalid_argument("physical_error: sigma must be >= 0");

    const std::size_t na = sigma_grid.size();
    RunTable table;
    table.deviation.assign(n_runs, std::vector<double>(static_cast<std::size_t>(horizon) * na,
                                                       std::numeric_limits<double>::quiet_NaN()));
    const bool par = exec == Exec::Parallel;
#pragma omp parallel for schedule(dynamic) if (par)
    for (int r = 0; r < n_runs; ++r) {
        auto rng = rng::derive_stream(seed, static_cast<std::uint64_t>(r));
        const auto graph = sim::sample_interaction_graph(cfg, rng);
        const auto init = sim::sample_initial_conditions(cfg, rng);
        // one unit draw per run, scaled by each sigma (common random numbers)
        std::normal_distribution<double> gauss(0.0, 1.0);
        const int n = init.n();
        std::vector<double> unit(static_cast<std::size_t>(n) * 4);
        for (double& u : unit) u = gauss(rng);
        sim::Trajectory base;
        try {
            base = integrate_sampled(graph, init, cfg, cfg.dt_fine, horizon);
        } catch (const std::runtime_error&) {
            continue;
        }
        for (std::size_t a = 0; a < na; ++a) {
            sim::PhasePoint perturbed = init;
            for (int i = 0; i < n; ++i) {
                perturbed.x[i] += sigma_grid[a] * unit[static_cast<std::size_t>(i) * 4 + 0];
                perturbed.y[i] += sigma_grid[a] * unit[static_cast<std::size_t>(i) * 4 + 1];
                perturbed.vx[i] += sigma_grid[a] * unit[static_cast<std::size_t>(i) * 4 + 2];
                perturbed.vy[i] += sigma_grid[a] * unit[static_cast<std::size_t>(i) * 4 + 3];
            }
            try {
                const auto traj = integrate_sampled(graph, perturbed, cfg, cfg.dt_fine, horizon);
                for (int k = 0; k < horizon; ++k)
                    table.deviation[r][static_cast<std::size_t>(k) * na + a] =
                        mean_abs_deviation(traj.states[k], base.states[k]);
            } catch (const std::runtime_error&) {
            }
        }
    }
    return assemble_grid(cfg, sigma_grid, horizon, n_runs, table);
}

double delta_x0(const data::Dataset& ds) {
    if (ds.trajectories.empty() || ds.n_steps < 2)
        throw std::invalid_argument("delta_x0: dataset needs >= 1 trajectory and >= 2 steps");
    const std::size_t per_step = static_cast<std::size_t>(ds.n_particles) * 4;
    double sum = 0.0;
    for (const auto& tr : ds.trajectories)
        for (std::size_t c = 0; c < per_step; ++c)
            sum += std::abs(static_cast<double>(tr.states[per_step + c]) -
                            static_cast<double>(tr.states[c]));
    return sum / (static_cast<double>(per_step) * ds.trajectories.size());
}

double bilinear(const std::vector<double>& xs, const std::vector<double>& ys,
                const std::vector<double>& values, double x, double y, bool* clamped) {
    if (xs.empty() || ys.empty() || values.size() != xs.size() * ys.size())
        throw std::invalid_argument("bilinear: malformed grid");
    auto bracket = [&](const std::vector<double>& axis, double q, std::size_t& lo, double& w) {
        if (q <= axis.front()) {
            lo = 0;
            w = 0.0;
            if (clamped && q < axis.front()) *clamped = true;
            return;
        }
        if (q >= axis.back()) {
            lo = axis.size() >= 2 ? axis.size() - 2 : 0;
            w = axis.size() >= 2 ? 1.0 : 0.0;
            if (clamped && q > axis.back()) *clamped = true;
            return;
        }
        const auto it = std::upper_bound(axis.begin(), axis.end(), q);
        lo = static_cast<std::size_t>(it - axis.begin()) - 1;
        w = (q - axis[lo]) / (axis[lo + 1] - axis[lo]);
    };
    std::size_t i, j;
    double wx, wy;
    bracket(xs, x, i, wx);
    bracket(ys, y, j, wy);
    const std::size_t ny = ys.size();
    const std::size_t i1 = std::min(i + 1, xs.size() - 1);
    const std::size_t j1 = std::min(j + 1, ys.size() - 1);
    const double v00 = values[i * ny + j], v01 = values[i * ny + j1];
    const double v10 = values[i1 * ny + j], v11 = values[i1 * ny + j1];
    return (1.0 - wx) * ((1.0 - wy) * v00 + wy * v01) + wx * ((1.0 - wy) * v10 + wy * v11);
}

PriorSchedule build_prior_schedule(const ErrorGrid& comp, const ErrorGrid& phys, double delta_x0,
                                   double model_dt, int n_steps) {
    if (delta_x0 <= 0.0) throw std::invalid_argument("build_prior_schedule: delta_x0 must be > 0");
    if (n_steps < 1) throw std::invalid_argument("build_prior_schedule: n_steps must be >= 1");
    PriorSchedule prior;
    prior.delta_x0 = delta_x0;
    prior.sigma.resize(n_steps);
    bool clamped = false;
    for (int k = 0; k < n_steps; ++k) {
        const double t = k * model_dt;
        const double comp_t = bilinear(comp.times, comp.axis2, comp.mean, t, model_dt, &clamped);
        // the computational error seeds the expected physical error
        const double phys_t = bilinear(phys.times, phys.axis2, phys.mean, t, comp_t, &clamped);
        prior.sigma[k] =
            std::sqrt(delta_x0 * delta_x0 + comp_t * comp_t + phys_t * phys_t);
    }
    prior.clamped = clamped;
    return prior;
}

void write_grid_csv(const std::string& path, const ErrorGrid& grid) {
    std::ofstream os(path, std::ios::trunc);
    if (!os) throw std::runtime_error("write_grid_csv: cannot open " + path);
    os << "axis1,axis2,mean_deviation,stderr,n_effective\n";
    os.precision(17);
    const std::size_t na = grid.axis2.size();
    for (std::size_t k = 0; k < grid.times.size(); ++k)
        for (std::size_t a = 0; a < na; ++a)
            os << grid.times[k] << ',' << grid.axis2[a] << ',' << grid.mean[k * na + a] << ','
               << grid.stderr_mean[k * na + a] << ',' << grid.n_effective[a] << '\n';
    if (!os) throw std::runtime_error("write_grid_csv: write failed for " + path);
}

void write_prior_csv(const std::string& path, const PriorSchedule& prior) {
    std::ofstream os(path, std::ios::trunc);
    if (!os) throw std::runtime_error("write_prior_csv: cannot open " + path);
    os.precision(17);
    os << "t_index,sigma\n";
    for (std::size_t k = 0; k < prior.sigma.size(); ++k) os << k << ',' << prior.sigma[k] << '\n';
    if (!os) throw std::runtime_error("write_prior_csv: write failed for " + path);
}

PriorSchedule read_prior_csv(const std::string& path) {
    std::ifstream is(path);
    if (!is) throw std::runtime_error("read_prior_csv: cannot open " + path);
    PriorSchedule prior;
    std::string line;
    std::getline(is, line);  // header
    while (std::getline(is, line)) {
        if (line.empty()) continue;
        const auto comma = line.find(',');
        if (comma == std::string::npos)
            throw std::runtime_error("read_prior_csv: malformed line in " + path);
        prior.sigma.push_back(std::stod(line.substr(comma + 1)));
    }
    if (prior.sigma.empty()) throw std::runtime_error("read_prior_csv: no rows in " + path);
    prior.delta_x0 = prior.sigma.front();
    return prior;
}

}  // namespace trajlab::err
