#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "trajlab/dataset.hpp"
#include "trajlab/parallel.hpp"
#include "trajlab/sim.hpp"

namespace trajlab::err {

/// Mean absolute phase-space deviation tabulated over (trajectory time,
/// second axis), where the second axis is either the integration time-step
/// or the initial-perturbation sigma.
struct ErrorGrid {
    std::vector<double> times;        // axis 1, sampled trajectory times (t=0 first)
    std::vector<double> axis2;        // dt values or sigma values
    std::vector<double> mean;         // row-major [times.size()][axis2.size()]
    std::vector<double> stderr_mean;  // Monte-Carlo standard error, same layout
    std::vector<int> n_effective;     // runs that survived per column of axis2
    int n_runs = 0;

    double at(std::size_t ti, std::size_t ai) const { return mean[ti * axis2.size() + ai]; }
};

// Deviation of dt-integrations from a reference_dt integration started from
// identical (graph, initial conditions), sampled on the shared time grid
// t_k = k * cfg.effective_dt() for k in [0, horizon). Every dt (and
// reference_dt) must divide the sampling interval.
ErrorGrid computational_error(const sim::SimConfig& cfg, const std::vector<double>& dt_grid,
                              double reference_dt, int horizon, int n_runs, std::uint64_t seed,
                              Exec exec = Exec::Parallel);

// Deviation between an unperturbed trajectory and one whose initial phase
// point got i.i.d. Gaussian(0, sigma) noise on all four coordinates (the
// same unit draw is scaled by each sigma).
ErrorGrid physical_error(const sim::SimConfig& cfg, const std::vector<double>& sigma_grid,
                         int horizon, int n_runs, std::uint64_t seed, Exec exec = Exec::Parallel);

// Mean absolute change over the first sampled step: mean over trajectories,
// particles and the 4 coordinates of |state[1] - state[0]|, in the dataset's
// stored (normalized) units.
double delta_x0(const data::Dataset& ds);

struct PriorSchedule {
    double delta_x0 = 0.0;
    std::vector<double> sigma;  // one entry per sampled prediction step
    bool clamped = false;       // some lookup fell outside a grid and was clamped
};

// sigma_t = sqrt(d0^2 + comp(t, model_dt)^2 + phys(t, comp(t, model_dt))^2)
// with bilinear interpolation on both grids; out-of-range lookups clamp to
// the nearest edge and set `clamped`.
PriorSchedule build_prior_schedule(const ErrorGrid& comp, const ErrorGrid& phys, double delta_x0,
                                   double model_dt, int n_steps);

// Clamped bilinear interpolation helper (exposed for tests).
double bilinear(const std::vector<double>& xs, const std::vector<double>& ys,
                const std::vector<double>& values, double x, double y, bool* clamped = nullptr);

// CSV: axis1,axis2,mean_deviation,stderr,n_effective (one row per cell).
void write_grid_csv(const std::string& path, const ErrorGrid& grid);
// CSV: t_index,sigma
void write_prior_csv(const std::string& path, const PriorSchedule& prior);
PriorSchedule read_prior_csv(const std::string& path);

}  // namespace trajlab::err
