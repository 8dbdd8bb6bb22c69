#include "trajlab/calibration.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numbers>
#include <stdexcept>

#include "trajlab/parallel.hpp"

namespace trajlab::cal {

namespace {

double gaussian_cdf(double x, double mu, double sigma) {
    return 0.5 * std::erfc(-(x - mu) / (sigma * std::numbers::sqrt2));
}

double lorentzian_cdf(double x, double x0, double gamma) {
    return 0.5 + std::atan(2.0 * (x - x0) / gamma) / std::numbers::pi;
}

struct FitProblem {
    const Histogram* hist;
    // bin-averaged model density
    double (*cdf)(double, double, double);

    // residuals weighted by Poisson-estimated bin standard deviations;
    // params are (location, ln scale)
    void residuals(const double* p, std::vector<double>& r) const {
        const double loc = p[0];
        const double scale = std::exp(p[1]);
        const auto& h = *hist;
        const double w = h.width();
        const double n = static_cast<double>(h.n_included);
        r.resize(h.density.size());
        for (std::size_t i = 0; i < h.density.size(); ++i) {
            const double model =
                (cdf(h.edges[i + 1], loc, scale) - cdf(h.edges[i], loc, scale)) / w;
            const double sd =
                std::sqrt(static_cast<double>(std::max<std::size_t>(h.counts[i], 1))) / (n * w);
            r[i] = (model - h.density[i]) / sd;
        }
    }

    double chi2(const double* p) const {
        std::vector<double> r;
        residuals(p, r);
        double s = 0.0;
        for (double x : r) s += x * x;
        return s;
    }
};

// Damped Gauss-Newton with numeric Jacobian on 2 parameters. Deterministic.
bool gauss_newton(const FitProblem& prob, double p[2], double& chi2_out) {
    std::vector<double> r, rp, rm;
    prob.residuals(p, r);
    double chi2 = 0.0;
    for (double x : r) chi2 += x * x;
    if (!std::isfinite(chi2)) return false;

    double lambda = 1e-3;
    const int max_iter = 200;
    for (int iter = 0; iter < max_iter; ++iter) {
        // central-difference Jacobian
        const std::size_t nb = r.size();
        std::vector<double> j0(nb), j1(nb);
        for (int c = 0; c < 2; ++c) {
            const double h = 1e-6 * (1.0 + std::abs(p[c]));
            double pp[2] = {p[0], p[1]};
            pp[c] += h;
            prob.residuals(pp, rp);
            pp[c] = p[c] - h;
            prob.residuals(pp, rm);
            auto& col = c == 0 ? j0 : j1;
            for (std::size_t i = 0; i < nb; ++i) col[i] = (rp[i] - rm[i]) / (2.0 * h);
        }
        double a00 = 0.0, a01 = 0.0, a11 = 0.0, b0 = 0.0, b1 = 0.0;
        for (std::size_t i = 0; i < nb; ++i) {
            a00 += j0[i] * j0[i];
            a01 += j0[i] * j1[i];
            a11 += j1[i] * j1[i];
            b0 -= j0[i] * r[i];
            b1 -= j1[i] * r[i];
        }
        bool stepped = false;
        for (int attempt = 0; attempt < 12; ++attempt) {
            const double d00 = a00 * (1.0 + lambda), d11 = a11 * (1.0 + lambda);
            const double det = d00 * d11 - a01 * a01;
            if (det == 0.0 || !std::isfinite(det)) {
                lambda *= 10.0;
                continue;
            }
            const double s0 = (b0 * d11 - a01 * b1) / det;
            const double s1 = (d00 * b1 - a01 * b0) / det;
            double pn[2] = {p[0] + s0, p[1] + s1};
            const double chi2_new = prob.chi2(pn);
            if (std::isfinite(chi2_new) && chi2_new <= chi2) {
                const bool converged = std::abs(s0) < 1e-10 * (1.0 + std::abs(p[0])) &&
                                       std::abs(s1) < 1e-10 * (1.0 + std::abs(p[1]));
                p[0] = pn[0];
                p[1] = pn[1];
                const double drop = chi2 - chi2_new;
                chi2 = chi2_new;
                prob.residuals(p, r);
                lambda = std::max(lambda / 3.0, 1e-12);
                stepped = true;
                if (converged || drop < 1e-12 * (1.0 + chi2)) {
                    chi2_out = chi2;
                    return true;
                }
                break;
            }
            lambda *= 10.0;
        }
        if (!stepped) break;  // no downhill step found
    }
    chi2_out = chi2;
    return std::isfinite(chi2);
}

FitResult fit_family(const Histogram& hist, double (*cdf)(double, double, double),
                     const std::vector<std::pair<double, double>>& starts) {
    FitProblem prob{&hist, cdf};
    FitResult best;
    double best_chi2 = std::numeric_limits<double>::infinity();
    for (const auto& [loc, scale] : starts) {
        if (!(scale > 0.0) || !std::isfinite(loc) || !std::isfinite(scale)) continue;
        double p[2] = {loc, std::log(scale)};
        double chi2 = 0.0;
        if (!gauss_newton(prob, p, chi2)) continue;
        if (chi2 < best_chi2) {
            best_chi2 = chi2;
            best.ok = true;
            best.location = p[0];
            best.scale_param = std::exp(p[1]);
        }
    }
    if (best.ok) {
        const double dof = static_cast<double>(hist.density.size()) - 2.0;
        best.qof = dof > 0.0 ? best_chi2 / dof : best_chi2;
    }
    return best;
}

}  // namespace

double Histogram::area() const {
    double a = 0.0;
    for (double d : density) a += d * width();
    return a;
}

double quantile(std::vector<double> values, double q) {
    if (values.empty()) throw std::invalid_argument("quantile: empty sample");
    std::sort(values.begin(), values.end());
    const double pos = q * static_cast<double>(values.size() - 1);
    const std::size_t lo = static_cast<std::size_t>(pos);
    if (lo + 1 >= values.size()) return values.back();
    const double frac = pos - static_cast<double>(lo);
    return values[lo] * (1.0 - frac) + values[lo + 1] * frac;
}

ZScoreSet z_scores(std::span<const double> pred, std::span<const double> target,
                   std::span<const double> sigma) {
    if (pred.size() != target.size() || pred.size() != sigma.size())
        throw std::invalid_argument("z_scores: misaligned inputs");
    ZScoreSet zs;
    zs.values.resize(pred.size());
    for (std::size_t i = 0; i < pred.size(); ++i) {
        if (!(sigma[i] > 0.0)) throw std::invalid_argument("z_scores: non-positive sigma");
        zs.values[i] = (pred[i] - target[i]) / sigma[i];
    }
    return zs;
}

Histogram build_histogram(std::span<const double> samples, int n_bins, double q_lo, double q_hi) {
    if (n_bins < 2) throw std::invalid_argument("build_histogram: need >= 2 bins");
    if (samples.empty()) throw std::invalid_argument("build_histogram: empty sample");
    std::vector<double> sorted(samples.begin(), samples.end());
    const double lo = quantile(sorted, q_lo);
    const double hi = quantile(sorted, q_hi);
    if (!(hi > lo)) throw std::invalid_argument("build_histogram: degenerate sample range");

    Histogram h;
    h.counts.assign(n_bins, 0);
    h.edges.resize(n_bins + 1);
    const double w = (hi - lo) / n_bins;
    for (int i = 0; i <= n_bins; ++i) h.edges[i] = lo + i * w;
    for (double x : samples) {
        if (x < lo || x > hi) continue;
        int b = static_cast<int>((x - lo) / w);
        b = std::clamp(b, 0, n_bins - 1);
        ++h.counts[b];
        ++h.n_included;
    }
    h.density.resize(n_bins);
    for (int i = 0; i < n_bins; ++i)
        h.density[i] = static_cast<double>(h.counts[i]) / (static_cast<double>(h.n_included) * w);
    return h;
}

FitReport fit_distributions(const ZScoreSet& zset, int n_bins) {
    if (zset.values.size() < 1000)
        throw std::invalid_argument("fit_distributions: need >= 1000 samples");
    FitReport report;
    report.hist = build_histogram(zset.values, n_bins);

    // moment starts computed over the histogram range only (robust against
    // heavy tails)
    std::vector<double> included;
    included.reserve(zset.values.size());
    for (double x : zset.values)
        if (x >= report.hist.edges.front() && x <= report.hist.edges.back()) included.push_back(x);
    double mean = 0.0;
    for (double x : included) mean += x;
    mean /= static_cast<double>(included.size());
    double var = 0.0;
    for (double x : included) var += (x - mean) * (x - mean);
    var /= static_cast<double>(included.size());
    const double sd = std::sqrt(var);
    const double med = quantile(included, 0.5);
    const double iqr = quantile(included, 0.75) - quantile(included, 0.25);

    report.gaussian = fit_family(report.hist, gaussian_cdf,
                                 {{mean, sd},
                                  {med, iqr / 1.349},
                                  {med, sd * 0.5},
                                  {med, sd * 2.0}});
    report.lorentzian = fit_family(report.hist, lorentzian_cdf,
                                   {{med, iqr},
                                    {med, iqr * 0.5},
                                    {med, iqr * 2.0},
                                    {mean, sd}});

    if (report.gaussian.ok && report.lorentzian.ok)
        report.best = report.gaussian.qof <= report.lorentzian.qof ? BestFit::Gaussian
                                                                   : BestFit::Lorentzian;
    else if (report.gaussian.ok)
        report.best = BestFit::Gaussian;
    else if (report.lorentzian.ok)
        report.best = BestFit::Lorentzian;
    return report;
}

double mse_metric(std::span<const double> pred, std::span<const double> target) {
    if (pred.size() != target.size() || pred.empty())
        throw std::invalid_argument("mse_metric: misaligned inputs");
    std::vector<double> sq(pred.size());
    for (std::size_t i = 0; i < pred.size(); ++i) {
        const double d = pred[i] - target[i];
        sq[i] = d * d;
    }
    return pairwise_sum(sq) / static_cast<double>(sq.size());
}

double edge_accuracy_percent(const std::vector<DecodedEdges>& predicted,
                             const std::vector<DecodedEdges>& truth_layers) {
    if (predicted.size() != truth_layers.size() || predicted.empty())
        throw std::invalid_argument("edge_accuracy: misaligned trajectory counts");
    const std::size_t n_factors = predicted[0].factors.size();
    if (n_factors != 2 || truth_layers[0].factors.size() != 2)
        throw std::invalid_argument("edge_accuracy: expects exactly 2 factors");

    double best = 0.0;
    for (int perm = 0; perm < 2; ++perm) {
        for (int swap_mask = 0; swap_mask < 4; ++swap_mask) {
            std::size_t agree = 0, total = 0;
            for (std::size_t t = 0; t < predicted.size(); ++t) {
                for (std::size_t f = 0; f < 2; ++f) {
                    const auto& pred = predicted[t].factors[f];
                    const auto& truth = truth_layers[t].factors[perm == 0 ? f : 1 - f];
                    const bool swap = ((swap_mask >> f) & 1) != 0;
                    if (pred.size() != truth.size())
                        throw std::invalid_argument("edge_accuracy: pair count mismatch");
                    for (std::size_t e = 0; e < pred.size(); ++e) {
                        const std::uint8_t p = swap ? (1 - pred[e]) : pred[e];
                        agree += (p == truth[e]) ? 1 : 0;
                        ++total;
                    }
                }
            }
            best = std::max(best, static_cast<double>(agree) / static_cast<double>(total));
        }
    }
    return 100.0 * best;
}

unsigned detect_pathologies(const PathologyInput& input) {
    if (input.epochs.size() < 10)
        throw std::invalid_argument("detect_pathologies: log must span >= 10 epochs");
    if (!(input.sigma0 > 0.0))
        throw std::invalid_argument("detect_pathologies: sigma0 must be positive");
    unsigned flags = kNone;

    const std::size_t half = input.epochs.size() / 2;
    bool constant = true;
    for (std::size_t e = half; e < input.epochs.size(); ++e)
        if (input.epochs[e].iqr >= 0.01 * input.sigma0) constant = false;
    if (constant) flags |= kConstantSigma;

    if (!input.mse_by_step.empty()) {
        const std::size_t n = input.mse_by_step.size();
        const std::size_t tail = std::max<std::size_t>(1, n / 10);
        double early = 0.0, late = 0.0;
        for (std::size_t i = 0; i < tail; ++i) early += input.mse_by_step[i];
        for (std::size_t i = n - tail; i < n; ++i) late += input.mse_by_step[i];
        early /= static_cast<double>(tail);
        late /= static_cast<double>(tail);
        if (std::abs(input.median_abs_z) < 0.2 && late > 10.0 * early)
            flags |= kOverestimatedSigma;
    }
    return flags;
}

std::string pathology_names(unsigned flags) {
    if (flags == kNone) return "NONE";
    std::string s;
    if (flags & kConstantSigma) s += "CONSTANT_SIGMA";
    if (flags & kOverestimatedSigma) {
        if (!s.empty()) s += ",";
        s += "OVERESTIMATED_SIGMA";
    }
    return s;
}

}  // namespace trajlab::cal
