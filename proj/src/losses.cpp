#include "trajlab/losses.hpp"

#include <cmath>
#include <numbers>
#include <stdexcept>

namespace trajlab::loss {

namespace {

constexpr int kDim = 4;

void check_positive(const char* op, const ad::Tensor& sigma) {
    for (double s : sigma.values())
        if (!(s > 0.0)) throw std::invalid_argument(std::string(op) + ": non-positive sigma");
}

void check_aligned(const char* op, const ad::Tensor& pred, const ad::Tensor& target) {
    if (pred.rows() != target.rows() || pred.cols() != target.cols() || pred.cols() != kDim)
        throw std::invalid_argument(std::string(op) + ": prediction/target must be [rows, 4]");
}

// ln of a 4x4 determinant via LU with partial pivoting; throws if the
// matrix is not positive-definite enough to take a log.
double log_det4(std::array<std::array<double, 4>, 4> a) {
    double det = 1.0;
    for (int c = 0; c < 4; ++c) {
        int piv = c;
        for (int r = c + 1; r < 4; ++r)
            if (std::abs(a[r][c]) > std::abs(a[piv][c])) piv = r;
        if (piv != c) {
            std::swap(a[piv], a[c]);
            det = -det;
        }
        if (a[c][c] == 0.0) throw std::invalid_argument("log_det4: singular matrix");
        det *= a[c][c];
        for (int r = c + 1; r < 4; ++r) {
            const double f = a[r][c] / a[c][c];
            for (int k = c; k < 4; ++k) a[r][k] -= f * a[c][k];
        }
    }
    if (det <= 0.0) throw std::invalid_argument("log_det4: non-positive determinant");
    return std::log(det);
}

double log_multigamma4(double a) {
    double s = 3.0 * std::log(std::numbers::pi);
    for (int j = 0; j < 4; ++j) s += std::lgamma(a - 0.5 * j);
    return s;
}

}  // namespace

std::string to_string(Kind kind) {
    switch (kind) {
        case Kind::Fixed: return "fixed";
        case Kind::IsoGauss: return "iso_gauss";
        case Kind::SemiIsoGauss: return "semi_iso_gauss";
        case Kind::AnisoGauss: return "aniso_gauss";
        case Kind::Lorentzian: return "lorentzian";
        case Kind::AnisoGaussKL: return "aniso_gauss_kl";
        case Kind::Niw: return "niw";
    }
    throw std::logic_error("loss::to_string: bad kind");
}

Kind kind_from_string(const std::string& name) {
    if (name == "fixed") return Kind::Fixed;
    if (name == "iso_gauss") return Kind::IsoGauss;
    if (name == "semi_iso_gauss") return Kind::SemiIsoGauss;
    if (name == "aniso_gauss") return Kind::AnisoGauss;
    if (name == "lorentzian") return Kind::Lorentzian;
    if (name == "aniso_gauss_kl") return Kind::AnisoGaussKL;
    if (name == "niw") return Kind::Niw;
    throw std::invalid_argument("unknown loss kind: " + name);
}

fnri::SigmaMode sigma_mode_for(Kind kind) {
    switch (kind) {
        case Kind::Fixed: return fnri::SigmaMode::Fixed;
        case Kind::IsoGauss: return fnri::SigmaMode::Isotropic;
        case Kind::SemiIsoGauss: return fnri::SigmaMode::SemiIsotropic;
        case Kind::AnisoGauss: return fnri::SigmaMode::Anisotropic;
        case Kind::Lorentzian: return fnri::SigmaMode::Isotropic;
        case Kind::AnisoGaussKL: return fnri::SigmaMode::Anisotropic;
        case Kind::Niw: return fnri::SigmaMode::Anisotropic;
    }
    throw std::logic_error("sigma_mode_for: bad kind");
}

double Config::lambda_at(int epoch) const {
    return lambda0 * std::pow(lambda_decay, epoch);
}

double LossValue::component(const std::string& name) const {
    for (const auto& [n, v] : components)
        if (n == name) return v;
    throw std::out_of_range("LossValue: no component " + name);
}

ad::Tensor expand_sigma(const ad::Tensor& sigma, fnri::SigmaMode mode) {
    switch (mode) {
        case fnri::SigmaMode::Fixed:
        case fnri::SigmaMode::Isotropic:
            if (sigma.cols() != 1) throw std::invalid_argument("expand_sigma: expected 1 column");
            return ad::repeat_cols(sigma, kDim);
        case fnri::SigmaMode::SemiIsotropic: {
            if (sigma.cols() != 2) throw std::invalid_argument("expand_sigma: expected 2 columns");
            const ad::Tensor pos = ad::repeat_cols(ad::slice_cols(sigma, 0, 1), 2);
            const ad::Tensor vel = ad::repeat_cols(ad::slice_cols(sigma, 1, 1), 2);
            return ad::concat_cols(std::vector<ad::Tensor>{pos, vel});
        }
        case fnri::SigmaMode::Anisotropic:
            if (sigma.cols() != kDim) throw std::invalid_argument("expand_sigma: expected 4 columns");
            return sigma;
    }
    throw std::logic_error("expand_sigma: bad mode");
}

ad::Tensor nll_fixed(const ad::Tensor& pred, const ad::Tensor& target, double sigma2) {
    check_aligned("nll_fixed", pred, target);
    if (sigma2 <= 0.0) throw std::invalid_argument("nll_fixed: sigma2 must be positive");
    return ad::scale(ad::sum(ad::square(ad::sub(pred, target))), 1.0 / (2.0 * sigma2));
}

ad::Tensor nll_gaussian(const ad::Tensor& pred, const ad::Tensor& sigma, const ad::Tensor& target,
                        fnri::SigmaMode mode) {
    check_aligned("nll_gaussian", pred, target);
    check_positive("nll_gaussian", sigma);
    const ad::Tensor se = expand_sigma(sigma, mode);
    const ad::Tensor r2 = ad::square(ad::sub(pred, target));
    const ad::Tensor quad = ad::div(r2, ad::scale(ad::square(se), 2.0));
    return ad::sum(ad::add(quad, ad::ln(se)));
}

ad::Tensor nll_lorentzian(const ad::Tensor& pred, const ad::Tensor& gamma,
                          const ad::Tensor& target, fnri::SigmaMode mode) {
    check_aligned("nll_lorentzian", pred, target);
    check_positive("nll_lorentzian", gamma);
    const ad::Tensor ge = expand_sigma(gamma, mode);
    const ad::Tensor r2 = ad::square(ad::sub(pred, target));
    const ad::Tensor shape = ad::ln(ad::add_scalar(ad::div(r2, ad::square(ge)), 1.0));
    return ad::sum(ad::add(shape, ad::ln(ge)));
}

ad::Tensor latent_kl(const fnri::EdgePosterior& posterior) {
    ad::Tensor total;
    for (const ad::Tensor& logits : posterior.factor_logits) {
        const double log_k = std::log(static_cast<double>(logits.cols()));
        const ad::Tensor ls = ad::log_softmax(logits);
        const ad::Tensor term = ad::sum(ad::mul(ad::exp(ls), ad::add_scalar(ls, log_k)));
        total = total.defined() ? ad::add(total, term) : term;
    }
    if (!total.defined()) throw std::invalid_argument("latent_kl: empty posterior");
    return total;
}

ad::Tensor convexify(const ad::Tensor& pred, const ad::Tensor& sigma, const ad::Tensor& target,
                     double sigma0, double lambda) {
    if (lambda < 0.0) throw std::invalid_argument("convexify: lambda must be >= 0");
    check_aligned("convexify", pred, target);
    ad::Tensor term = ad::sum(ad::square(ad::sub(pred, target)));
    if (sigma.defined())
        term = ad::add(term, ad::sum(ad::square(ad::add_scalar(sigma, -sigma0))));
    return ad::scale(term, lambda);
}

ad::Tensor bayes_gaussian_kl(const ad::Tensor& pred, const ad::Tensor& sigma,
                             const ad::Tensor& target, fnri::SigmaMode mode,
                             const std::vector<double>& prior_by_step, int rows_per_step) {
    check_aligned("bayes_gaussian_kl", pred, target);
    check_positive("bayes_gaussian_kl", sigma);
    if (rows_per_step < 1 || pred.rows() % rows_per_step != 0)
        throw std::invalid_argument("bayes_gaussian_kl: rows_per_step must divide rows");
    const int n_steps = pred.rows() / rows_per_step;
    if (static_cast<int>(prior_by_step.size()) < n_steps)
        throw std::invalid_argument("bayes_gaussian_kl: prior schedule shorter than rollout");
    for (int k = 0; k < n_steps; ++k)
        if (!(prior_by_step[k] > 0.0))
            throw std::invalid_argument("bayes_gaussian_kl: non-positive prior sigma");

    std::vector<double> ln_p(static_cast<std::size_t>(pred.rows()) * kDim);
    std::vector<double> inv_2p2(ln_p.size());
    for (int i = 0; i < pred.rows(); ++i) {
        const double sp = prior_by_step[i / rows_per_step];
        for (int c = 0; c < kDim; ++c) {
            ln_p[static_cast<std::size_t>(i) * kDim + c] = std::log(sp);
            inv_2p2[static_cast<std::size_t>(i) * kDim + c] = 1.0 / (2.0 * sp * sp);
        }
    }
    const ad::Tensor lnp = ad::Tensor::from_values(pred.rows(), kDim, std::move(ln_p));
    const ad::Tensor inv = ad::Tensor::from_values(pred.rows(), kDim, std::move(inv_2p2));

    const ad::Tensor se = expand_sigma(sigma, mode);
    const ad::Tensor r2 = ad::square(ad::sub(pred, target));
    const ad::Tensor ratio = ad::sub(lnp, ad::ln(se));
    const ad::Tensor quad = ad::mul(ad::add(ad::square(se), r2), inv);
    return ad::sum(ad::add_scalar(ad::add(ratio, quad), -0.5));
}

NiwPosterior niw_update(const NiwHyper& hyper, const std::vector<std::array<double, 4>>& samples) {
    if (!(hyper.kappa0 > 0.0)) throw std::invalid_argument("niw_update: kappa0 must be positive");
    if (!(hyper.nu0 > kDim - 1)) throw std::invalid_argument("niw_update: nu0 must exceed d-1");
    if (!(hyper.psi0_diag > 0.0)) throw std::invalid_argument("niw_update: psi0 must be positive");
    const double n = static_cast<double>(samples.size());
    NiwPosterior post;
    for (int c = 0; c < kDim; ++c) post.psi[c][c] = hyper.psi0_diag;
    if (samples.empty()) {
        post.mu = hyper.mu0;
        post.kappa = hyper.kappa0;
        post.nu = hyper.nu0;
        return post;
    }
    std::array<double, 4> mean{};
    for (const auto& s : samples)
        for (int c = 0; c < kDim; ++c) mean[c] += s[c];
    for (int c = 0; c < kDim; ++c) mean[c] /= n;

    post.kappa = hyper.kappa0 + n;
    post.nu = hyper.nu0 + n;
    for (int c = 0; c < kDim; ++c)
        post.mu[c] = (hyper.kappa0 * hyper.mu0[c] + n * mean[c]) / post.kappa;
    // scatter about the sample mean
    for (const auto& s : samples)
        for (int a = 0; a < kDim; ++a)
            for (int b = 0; b < kDim; ++b)
                post.psi[a][b] += (s[a] - mean[a]) * (s[b] - mean[b]);
    const double w = hyper.kappa0 * n / post.kappa;
    for (int a = 0; a < kDim; ++a)
        for (int b = 0; b < kDim; ++b)
            post.psi[a][b] += w * (mean[a] - hyper.mu0[a]) * (mean[b] - hyper.mu0[b]);
    return post;
}

ad::Tensor niw_neg_log_posterior(const ad::Tensor& pred, const ad::Tensor& sigma,
                                 const ad::Tensor& target_batch, fnri::SigmaMode mode,
                                 const NiwHyper& hyper) {
    check_aligned("niw_neg_log_posterior", pred, target_batch);
    check_positive("niw_neg_log_posterior", sigma);

    std::vector<std::array<double, 4>> samples(target_batch.rows());
    for (int i = 0; i < target_batch.rows(); ++i)
        for (int c = 0; c < kDim; ++c) samples[i][c] = target_batch.at(i, c);
    const NiwPosterior post = niw_update(hyper, samples);
    const double log_det_psi = log_det4(post.psi);

    const int rows = pred.rows();
    // per-row constant: d/2 ln(2 pi) - d/2 ln kappa - nu/2 ln|Psi|
    //                   + nu d/2 ln 2 + ln Gamma_4(nu/2)
    const double row_const = 0.5 * kDim * std::log(2.0 * std::numbers::pi) -
                             0.5 * kDim * std::log(post.kappa) - 0.5 * post.nu * log_det_psi +
                             0.5 * post.nu * kDim * std::log(2.0) + log_multigamma4(0.5 * post.nu);

    std::vector<double> mu_rows(static_cast<std::size_t>(rows) * kDim);
    std::vector<double> psi_diag_rows(static_cast<std::size_t>(rows) * kDim);
    for (int i = 0; i < rows; ++i)
        for (int c = 0; c < kDim; ++c) {
            mu_rows[static_cast<std::size_t>(i) * kDim + c] = post.mu[c];
            psi_diag_rows[static_cast<std::size_t>(i) * kDim + c] = post.psi[c][c];
        }
    const ad::Tensor mu = ad::Tensor::from_values(rows, kDim, std::move(mu_rows));
    const ad::Tensor psi_diag = ad::Tensor::from_values(rows, kDim, std::move(psi_diag_rows));

    const ad::Tensor se = expand_sigma(sigma, mode);
    const ad::Tensor s2 = ad::square(se);
    // (1 + nu + d + 1)/2 multiplies sum(ln sigma^2): the Normal contributes
    // 1/2 and the inverse-Wishart (nu + d + 1)/2
    const double ln_s2_coeff = 0.5 * (post.nu + kDim + 2.0);
    const ad::Tensor ln_s2 = ad::scale(ad::ln(se), 2.0);
    const ad::Tensor quad = ad::div(ad::square(ad::sub(pred, mu)), s2);
    const ad::Tensor trace = ad::div(psi_diag, s2);
    ad::Tensor per_elem = ad::add(ad::scale(ln_s2, ln_s2_coeff),
                                  ad::add(ad::scale(quad, 0.5 * post.kappa), ad::scale(trace, 0.5)));
    return ad::add_scalar(ad::sum(per_elem), row_const * rows);
}

LossValue total_loss(const Config& cfg, const ModelOutputs& outputs, const ad::Tensor& target,
                     int epoch) {
    LossValue value;
    auto push = [&value](const std::string& name, const ad::Tensor& term) {
        value.components.emplace_back(name, term.value());
        value.total = value.total.defined() ? ad::add(value.total, term) : term;
    };

    const fnri::SigmaMode mode = sigma_mode_for(cfg.kind);
    switch (cfg.kind) {
        case Kind::Fixed:
            push("L_y", nll_fixed(outputs.mean, target, cfg.fixed_sigma2));
            break;
        case Kind::IsoGauss:
        case Kind::SemiIsoGauss:
        case Kind::AnisoGauss:
        case Kind::AnisoGaussKL:
            push("L_y", nll_gaussian(outputs.mean, outputs.sigma, target, mode));
            break;
        case Kind::Lorentzian:
            push("L_y", nll_lorentzian(outputs.mean, outputs.sigma, target, mode));
            break;
        case Kind::Niw:
            push("niw", niw_neg_log_posterior(outputs.mean, outputs.sigma, target, mode, cfg.niw));
            break;
    }

    if (outputs.posterior != nullptr) {
        const ad::Tensor kl = latent_kl(*outputs.posterior);
        push("L_KD", cfg.kl_sign == KlSign::Vae ? kl : ad::neg(kl));
    }

    if (cfg.convexify) {
        const ad::Tensor sigma =
            cfg.kind == Kind::Fixed ? ad::Tensor() : outputs.sigma;
        push("convex", convexify(outputs.mean, sigma, target, cfg.sigma0, cfg.lambda_at(epoch)));
    }

    if (cfg.kind == Kind::AnisoGaussKL) {
        if (cfg.prior == nullptr)
            throw std::invalid_argument("total_loss: aniso_gauss_kl requires a prior schedule");
        push("prior_kl", bayes_gaussian_kl(outputs.mean, outputs.sigma, target, mode,
                                           cfg.prior->sigma, outputs.rows_per_step));
    }
    return value;
}

}  // namespace trajlab::loss
