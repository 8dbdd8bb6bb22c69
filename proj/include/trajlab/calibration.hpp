#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <vector>

namespace trajlab::cal {

/// Standardized residuals pooled over coordinates, particles, steps and
/// trajectories.
struct ZScoreSet {
    std::vector<double> values;
    std::size_t n_trajectories = 0;
    std::size_t n_steps = 0;
    std::size_t n_particles = 0;
};

// Elementwise (pred - target) / sigma over aligned flat arrays (sigma
// already expanded to one value per coordinate).
ZScoreSet z_scores(std::span<const double> pred, std::span<const double> target,
                   std::span<const double> sigma);

struct Histogram {
    std::vector<double> edges;          // n_bins + 1
    std::vector<double> density;        // per bin, normalized over included samples
    std::vector<std::size_t> counts;
    std::size_t n_included = 0;

    double width() const { return edges.size() > 1 ? edges[1] - edges[0] : 0.0; }
    double area() const;
};

// Equal-width bins spanning the central [q_lo, q_hi] quantile range.
Histogram build_histogram(std::span<const double> samples, int n_bins, double q_lo = 0.005,
                          double q_hi = 0.995);

struct FitResult {
    bool ok = false;
    double location = 0.0;  // Gaussian mu / Lorentzian x0
    double scale_param = 0.0;  // Gaussian sigma / Lorentzian gamma (FWHM)
    double qof = 0.0;       // reduced chi^2 against Poisson bin variances
};

enum class BestFit { None, Gaussian, Lorentzian };

struct FitReport {
    Histogram hist;
    FitResult gaussian;
    FitResult lorentzian;
    BestFit best = BestFit::None;
};

// Least-squares fits of the Gaussian and Lorentzian densities to the bin
// heights (bin-averaged model densities, deterministic multi-start
// Gauss-Newton); best = smaller qof among the fits that converged.
FitReport fit_distributions(const ZScoreSet& zset, int n_bins = 100);

double mse_metric(std::span<const double> pred, std::span<const double> target);

/// Hard-decoded edge types, [factor][ordered pair] per trajectory.
struct DecodedEdges {
    std::vector<std::vector<std::uint8_t>> factors;
};

// Mean agreement with the ground-truth layers, maximized over
// factor-to-layer assignments and within-factor label swaps; in percent.
// truth_layers follow the same structure (layer 0 springs, layer 1
// charge-product edges).
double edge_accuracy_percent(const std::vector<DecodedEdges>& predicted,
                             const std::vector<DecodedEdges>& truth_layers);

struct EpochSigmaStats {
    double min = 0.0;
    double median = 0.0;
    double iqr = 0.0;
    double max = 0.0;
};

struct PathologyInput {
    double sigma0 = 0.0;
    std::vector<EpochSigmaStats> epochs;  // training log, >= 10 entries
    double median_abs_z = 0.0;
    std::vector<double> mse_by_step;      // free-rollout MSE per predicted step
};

enum PathologyFlags : unsigned {
    kNone = 0,
    kConstantSigma = 1u << 0,
    kOverestimatedSigma = 1u << 1,
};

// CONSTANT_SIGMA: sigma IQR stays below 1% of sigma0 for the final half of
// the epochs. OVERESTIMATED_SIGMA: median |z| < 0.2 while late-rollout MSE
// exceeds 10x the early-rollout MSE.
unsigned detect_pathologies(const PathologyInput& input);
std::string pathology_names(unsigned flags);

// percentile helper (linear interpolation between order statistics)
double quantile(std::vector<double> values, double q);

}  // namespace trajlab::cal
