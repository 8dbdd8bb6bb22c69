// Test-only oracles, independent of the library implementation paths they
// check: finite-difference gradients, quadrature, and the closed-form
// two-body oscillator.
#pragma once

#include <cmath>
#include <functional>
#include <random>
#include <vector>

#include "trajlab/tensor.hpp"

namespace oracles {

// Central finite differences over every element of every parameter.
// Returns the max relative error against the analytic gradients produced by
// one taped backward pass.
inline double max_rel_grad_err(const std::function<trajlab::ad::Tensor()>& forward,
                               std::vector<trajlab::ad::Tensor> params, double h = 1e-5) {
    using trajlab::ad::Tape;
    using trajlab::ad::Tensor;

    for (Tensor& p : params) p.zero_grad();
    std::vector<std::vector<double>> analytic;
    {
        Tape tape;
        Tensor loss = forward();
        tape.backward(loss);
        for (Tensor& p : params) analytic.emplace_back(p.grad().begin(), p.grad().end());
    }

    double worst = 0.0;
    for (std::size_t k = 0; k < params.size(); ++k) {
        auto vals = params[k].raw_values();
        for (std::size_t i = 0; i < vals.size(); ++i) {
            const double orig = vals[i];
            vals[i] = orig + h;
            const double fp = forward().value();
            vals[i] = orig - h;
            const double fm = forward().value();
            vals[i] = orig;
            const double fd = (fp - fm) / (2.0 * h);
            const double an = analytic[k][i];
            const double denom = std::max({1.0, std::abs(fd), std::abs(an)});
            worst = std::max(worst, std::abs(fd - an) / denom);
        }
    }
    return worst;
}

// Simpson quadrature on [a, b].
inline double simpson(const std::function<double(double)>& f, double a, double b, int n = 4000) {
    if (n % 2 != 0) ++n;
    const double h = (b - a) / n;
    double s = f(a) + f(b);
    for (int i = 1; i < n; ++i) s += f(a + i * h) * (i % 2 == 0 ? 2.0 : 4.0);
    return s * h / 3.0;
}

// Two equal masses joined by a spring with rest length zero and stiffness k:
// the relative coordinate oscillates at omega = sqrt(2k), the center of
// mass drifts freely.
struct SpringPairOracle {
    double k;
    double x1_0, x2_0, v1_0, v2_0;

    void positions(double t, double& x1, double& x2) const {
        const double omega = std::sqrt(2.0 * k);
        const double com0 = 0.5 * (x1_0 + x2_0);
        const double vcom = 0.5 * (v1_0 + v2_0);
        const double r0 = x1_0 - x2_0;
        const double rv0 = v1_0 - v2_0;
        const double r = r0 * std::cos(omega * t) + rv0 / omega * std::sin(omega * t);
        const double com = com0 + vcom * t;
        x1 = com + 0.5 * r;
        x2 = com - 0.5 * r;
    }
};

inline std::mt19937_64 test_rng(std::uint64_t seed) { return std::mt19937_64(seed); }

}  // namespace oracles
