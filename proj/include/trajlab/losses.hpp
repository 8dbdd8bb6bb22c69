#pragma once

#include <array>
#include <string>
#include <utility>
#include <vector>

#include "trajlab/error_profile.hpp"
#include "trajlab/fnri.hpp"
#include "trajlab/tensor.hpp"

namespace trajlab::loss {

enum class Kind { Fixed, IsoGauss, SemiIsoGauss, AnisoGauss, Lorentzian, AnisoGaussKL, Niw };

std::string to_string(Kind kind);
Kind kind_from_string(const std::string& name);
fnri::SigmaMode sigma_mode_for(Kind kind);

// Objective sign for the latent categorical term. Vae adds +KL to the
// minimized objective; Literal uses -KL as printed in the source loss.
enum class KlSign { Vae, Literal };

struct NiwHyper {
    std::array<double, 4> mu0{0.0, 0.0, 0.0, 0.0};
    double kappa0 = 1.0;
    double psi0_diag = 1e-4;  // Psi0 = psi0_diag * I
    double nu0 = 6.0;
};

struct Config {
    Kind kind = Kind::Fixed;
    double fixed_sigma2 = 5e-5;
    bool convexify = false;
    double lambda0 = 1.0;
    double lambda_decay = 0.99;  // geometric per epoch
    double sigma0 = 0.007071067811865475;  // anchor for the convex term
    NiwHyper niw;
    KlSign kl_sign = KlSign::Vae;
    const err::PriorSchedule* prior = nullptr;  // required for AnisoGaussKL

    double lambda_at(int epoch) const;
};

struct LossValue {
    ad::Tensor total;
    // components in the order they were added; their in-order sum equals
    // total exactly
    std::vector<std::pair<std::string, double>> components;

    double component(const std::string& name) const;
};

// Expand a sigma field ([rows, 1|2|4] by mode) to one value per coordinate.
ad::Tensor expand_sigma(const ad::Tensor& sigma, fnri::SigmaMode mode);

// sum of squared residuals / (2 sigma2)
ad::Tensor nll_fixed(const ad::Tensor& pred, const ad::Tensor& target, double sigma2);

// Diagonal-covariance Gaussian negative log likelihood (constant dropped):
// sum over coordinates of r^2/(2 sigma^2) + ln sigma.
ad::Tensor nll_gaussian(const ad::Tensor& pred, const ad::Tensor& sigma, const ad::Tensor& target,
                        fnri::SigmaMode mode);

// sum of ln(1 + r^2/gamma^2) + ln gamma, gamma = FWHM.
ad::Tensor nll_lorentzian(const ad::Tensor& pred, const ad::Tensor& gamma,
                          const ad::Tensor& target, fnri::SigmaMode mode);

// Categorical KL against the uniform prior, summed over factors and pairs.
ad::Tensor latent_kl(const fnri::EdgePosterior& posterior);

// lambda * (sum r^2 + sum (sigma - sigma0)^2); the sigma term is skipped
// when the field carries no gradient (fixed mode).
ad::Tensor convexify(const ad::Tensor& pred, const ad::Tensor& sigma, const ad::Tensor& target,
                     double sigma0, double lambda);

// Closed-form KL( N(pred, sigma^2) || N(target, prior_sigma_t^2) ) summed
// elementwise; prior_by_step supplies one sigma per prediction step, rows
// are grouped step-major with rows_per_step rows each.
ad::Tensor bayes_gaussian_kl(const ad::Tensor& pred, const ad::Tensor& sigma,
                             const ad::Tensor& target, fnri::SigmaMode mode,
                             const std::vector<double>& prior_by_step, int rows_per_step);

struct NiwPosterior {
    std::array<double, 4> mu{};
    double kappa = 0.0;
    double nu = 0.0;
    std::array<std::array<double, 4>, 4> psi{};
};

// Conjugate update of the NIW hyperparameters with the rows of `samples`
// (each row one 4-coordinate observation).
NiwPosterior niw_update(const NiwHyper& hyper, const std::vector<std::array<double, 4>>& samples);

// -ln NIW(mu = pred_row, Sigma = diag(sigma_row^2) | posterior), summed over
// rows, constants included.
ad::Tensor niw_neg_log_posterior(const ad::Tensor& pred, const ad::Tensor& sigma,
                                 const ad::Tensor& target_batch, fnri::SigmaMode mode,
                                 const NiwHyper& hyper);

struct ModelOutputs {
    ad::Tensor mean;    // [rows, 4], step-major rows
    ad::Tensor sigma;   // [rows, channels]; undefined for Fixed
    const fnri::EdgePosterior* posterior = nullptr;
    int rows_per_step = 0;
    int n_steps = 0;
};

LossValue total_loss(const Config& cfg, const ModelOutputs& outputs, const ad::Tensor& target,
                     int epoch);

}  // namespace trajlab::loss
