#include <doctest.h>

#include <cmath>
#include <numbers>
#include <random>

#include "oracles.hpp"
#include "trajlab/losses.hpp"

using namespace trajlab;
using ad::Tensor;

namespace {

Tensor random_tensor(int rows, int cols, std::uint64_t seed, double lo = -1.0, double hi = 1.0,
                     bool requires_grad = false) {
    auto rng = oracles::test_rng(seed);
    std::uniform_real_distribution<double> u(lo, hi);
    std::vector<double> v(static_cast<std::size_t>(rows) * cols);
    for (double& x : v) x = u(rng);
    return Tensor::from_values(rows, cols, std::move(v), requires_grad);
}

fnri::EdgePosterior posterior_from(Tensor logits) {
    fnri::EdgePosterior post;
    post.batch = 1;
    post.n_pairs = logits.rows();
    post.factor_logits.push_back(std::move(logits));
    return post;
}

}  // namespace

TEST_CASE("nll_fixed") {
    SUBCASE("perfect prediction gives zero") {
        auto y = random_tensor(6, 4, 1);
        CHECK(loss::nll_fixed(y, y, 5e-5).value() == 0.0);
    }
    SUBCASE("single element arithmetic") {
        auto pred = Tensor::from_values(1, 4, {0.01, 0.0, 0.0, 0.0});
        auto target = Tensor::zeros(1, 4);
        CHECK(loss::nll_fixed(pred, target, 5e-5).value() == doctest::Approx(1.0).epsilon(1e-12));
    }
    SUBCASE("matches a scalar-loop recomputation") {
        auto pred = random_tensor(40, 4, 2);
        auto target = random_tensor(40, 4, 3);
        double expected = 0.0;
        for (int i = 0; i < 40; ++i)
            for (int c = 0; c < 4; ++c) {
                const double r = pred.at(i, c) - target.at(i, c);
                expected += r * r / (2.0 * 5e-5);
            }
        CHECK(loss::nll_fixed(pred, target, 5e-5).value() ==
              doctest::Approx(expected).epsilon(1e-10));
    }
}

TEST_CASE("nll_gaussian") {
    SUBCASE("zero residual with unit sigma gives zero") {
        auto y = random_tensor(5, 4, 4);
        auto sigma = Tensor::full(5, 4, 1.0);
        CHECK(loss::nll_gaussian(y, sigma, y, fnri::SigmaMode::Anisotropic).value() == 0.0);
    }
    SUBCASE("isotropic unit-residual arithmetic") {
        auto pred = Tensor::full(1, 4, 1.0);
        auto target = Tensor::zeros(1, 4);
        auto sigma = Tensor::full(1, 1, 1.0);
        CHECK(loss::nll_gaussian(pred, sigma, target, fnri::SigmaMode::Isotropic).value() ==
              doctest::Approx(2.0).epsilon(1e-14));
    }
    SUBCASE("anisotropic with equal sigmas equals isotropic exactly") {
        for (int rep = 0; rep < 100; ++rep) {
            auto pred = random_tensor(8, 4, 100 + rep);
            auto target = random_tensor(8, 4, 200 + rep);
            auto s1 = random_tensor(8, 1, 300 + rep, 0.2, 2.0);
            std::vector<double> s4v;
            for (int i = 0; i < 8; ++i)
                for (int c = 0; c < 4; ++c) s4v.push_back(s1.at(i, 0));
            auto s4 = Tensor::from_values(8, 4, std::move(s4v));
            const double iso =
                loss::nll_gaussian(pred, s1, target, fnri::SigmaMode::Isotropic).value();
            const double aniso =
                loss::nll_gaussian(pred, s4, target, fnri::SigmaMode::Anisotropic).value();
            CHECK(std::abs(iso - aniso) <= 1e-12 * std::max(1.0, std::abs(iso)));
        }
    }
    SUBCASE("semi-isotropic expands position and velocity sigmas separately") {
        auto pred = Tensor::from_values(1, 4, {1.0, 2.0, 3.0, 4.0});
        auto target = Tensor::zeros(1, 4);
        auto s2 = Tensor::from_values(1, 2, {0.5, 2.0});
        const double expected = (1.0 + 4.0) / (2 * 0.25) + 2 * std::log(0.5) +
                                (9.0 + 16.0) / (2 * 4.0) + 2 * std::log(2.0);
        CHECK(loss::nll_gaussian(pred, s2, target, fnri::SigmaMode::SemiIsotropic).value() ==
              doctest::Approx(expected).epsilon(1e-12));
    }
    SUBCASE("non-positive sigma is rejected") {
        auto y = random_tensor(2, 4, 5);
        auto bad = Tensor::zeros(2, 4);
        CHECK_THROWS_AS(loss::nll_gaussian(y, bad, y, fnri::SigmaMode::Anisotropic),
                        std::invalid_argument);
    }
    SUBCASE("sigma stationary point sits at |residual|") {
        // d/dsigma [r^2/(2 s^2) + ln s] = 0 at s = |r|
        auto pred = Tensor::from_values(1, 4, {0.7, 0.7, 0.7, 0.7});
        auto target = Tensor::zeros(1, 4);
        auto probe = [&](double s) {
            auto st = Tensor::full(1, 4, s);
            return loss::nll_gaussian(pred, st, target, fnri::SigmaMode::Anisotropic).value();
        };
        const double h = 1e-6;
        const double grad = (probe(0.7 + h) - probe(0.7 - h)) / (2 * h);
        CHECK(std::abs(grad) < 1e-6);
        CHECK(probe(0.7) < probe(0.5));
        CHECK(probe(0.7) < probe(0.9));
    }
}

TEST_CASE("nll_lorentzian") {
    SUBCASE("zero residual with unit gamma gives zero") {
        auto y = random_tensor(4, 4, 6);
        auto gamma = Tensor::full(4, 4, 1.0);
        CHECK(loss::nll_lorentzian(y, gamma, y, fnri::SigmaMode::Anisotropic).value() == 0.0);
    }
    SUBCASE("r = gamma = 1 gives ln 2 per element") {
        auto pred = Tensor::full(1, 4, 1.0);
        auto target = Tensor::zeros(1, 4);
        auto gamma = Tensor::full(1, 1, 1.0);
        CHECK(loss::nll_lorentzian(pred, gamma, target, fnri::SigmaMode::Isotropic).value() ==
              doctest::Approx(4.0 * std::numbers::ln2).epsilon(1e-12));
    }
    SUBCASE("gamma gradient vanishes at the stationary point r = gamma") {
        auto pred = Tensor::full(1, 4, 1.0);
        auto target = Tensor::zeros(1, 4);
        auto gamma = Tensor::full(1, 4, 1.0, /*requires_grad=*/true);
        auto fwd = [&] {
            return loss::nll_lorentzian(pred, gamma, target, fnri::SigmaMode::Anisotropic);
        };
        CHECK(oracles::max_rel_grad_err(fwd, {gamma}) < 1e-4);
        gamma.zero_grad();
        ad::Tape tape;
        auto l = fwd();
        tape.backward(l);
        for (double g : gamma.grad()) CHECK(std::abs(g) < 1e-12);
    }
}

TEST_CASE("latent_kl") {
    SUBCASE("uniform posterior gives exactly zero") {
        auto post = posterior_from(Tensor::full(10, 2, 1.23));
        CHECK(loss::latent_kl(post).value() == 0.0);
    }
    SUBCASE("one-hot posterior gives ln 2 per pair") {
        auto post = posterior_from(Tensor::from_values(1, 2, {60.0, 0.0}));
        CHECK(loss::latent_kl(post).value() == doctest::Approx(std::numbers::ln2).epsilon(1e-9));
    }
    SUBCASE("matches the direct sum q ln(q/p)") {
        auto logits = random_tensor(12, 2, 7, -2.0, 2.0);
        auto post = posterior_from(logits);
        double expected = 0.0;
        for (int i = 0; i < 12; ++i) {
            const double a = logits.at(i, 0), b = logits.at(i, 1);
            const double m = std::max(a, b);
            const double za = std::exp(a - m), zb = std::exp(b - m);
            const double qa = za / (za + zb), qb = zb / (za + zb);
            expected += qa * std::log(qa / 0.5) + qb * std::log(qb / 0.5);
        }
        CHECK(loss::latent_kl(post).value() == doctest::Approx(expected).epsilon(1e-12));
    }
}

TEST_CASE("convexify") {
    auto pred = random_tensor(3, 4, 8);
    auto target = random_tensor(3, 4, 9);
    auto sigma = random_tensor(3, 4, 10, 0.1, 1.0);

    SUBCASE("lambda = 0 adds nothing") {
        CHECK(loss::convexify(pred, sigma, target, 0.5, 0.0).value() == 0.0);
    }
    SUBCASE("anchored prediction and sigma add nothing") {
        auto s0 = Tensor::full(3, 4, 0.25);
        CHECK(loss::convexify(pred, s0, pred, 0.25, 1.0).value() == 0.0);
    }
    SUBCASE("unit lambda arithmetic") {
        auto p = Tensor::from_values(1, 4, {2.0, 0.0, 0.0, 0.0});
        auto t = Tensor::zeros(1, 4);
        auto s = Tensor::from_values(1, 4, {1.5, 0.5, 0.5, 0.5});
        // r^2 = 4, (sigma - sigma0)^2 = 1 with sigma0 = 0.5
        CHECK(loss::convexify(p, s, t, 0.5, 1.0).value() == doctest::Approx(5.0).epsilon(1e-12));
    }
    SUBCASE("geometric decay schedule") {
        loss::Config cfg;
        cfg.lambda0 = 1.0;
        cfg.lambda_decay = 0.99;
        CHECK(cfg.lambda_at(0) == 1.0);
        CHECK(cfg.lambda_at(10) == doctest::Approx(std::pow(0.99, 10)).epsilon(1e-12));
    }
}

TEST_CASE("bayes_gaussian_kl") {
    SUBCASE("matched distributions give zero") {
        auto y = random_tensor(6, 4, 11);
        auto sigma = Tensor::full(6, 2, 0.03);
        const std::vector<double> prior(3, 0.03);
        CHECK(loss::bayes_gaussian_kl(y, sigma, y, fnri::SigmaMode::SemiIsotropic, prior, 2)
                  .value() == doctest::Approx(0.0).epsilon(1e-15));
    }
    SUBCASE("matched sigma leaves only the quadratic term") {
        const double sp = 0.05, d = 0.02;
        auto pred = Tensor::full(1, 4, d);
        auto target = Tensor::zeros(1, 4);
        auto sigma = Tensor::full(1, 4, sp);
        const std::vector<double> prior{sp};
        const double v =
            loss::bayes_gaussian_kl(pred, sigma, target, fnri::SigmaMode::Anisotropic, prior, 1)
                .value();
        CHECK(v == doctest::Approx(4.0 * d * d / (2.0 * sp * sp)).epsilon(1e-12));
    }
    SUBCASE("matches numerical quadrature of the KL integral") {
        auto rng = oracles::test_rng(12);
        std::uniform_real_distribution<double> um(-0.5, 0.5), us(0.05, 0.4);
        for (int rep = 0; rep < 10; ++rep) {
            const double mu_q = um(rng), s_q = us(rng), mu_p = um(rng), s_p = us(rng);
            auto pred = Tensor::from_values(1, 4, {mu_q, 0, 0, 0});
            auto target = Tensor::from_values(1, 4, {mu_p, 0, 0, 0});
            auto sigma = Tensor::from_values(1, 4, {s_q, s_p, s_p, s_p});
            const std::vector<double> prior{s_p};
            const double closed =
                loss::bayes_gaussian_kl(pred, sigma, target, fnri::SigmaMode::Anisotropic, prior, 1)
                    .value();
            auto gauss = [](double x, double m, double s) {
                return std::exp(-(x - m) * (x - m) / (2 * s * s)) /
                       (s * std::sqrt(2 * std::numbers::pi));
            };
            const double lo = mu_q - 12 * std::max(s_q, s_p);
            const double hi = mu_q + 12 * std::max(s_q, s_p);
            const double quad = oracles::simpson(
                [&](double x) {
                    const double p = gauss(x, mu_q, s_q);
                    return p <= 0.0 ? 0.0 : p * std::log(p / gauss(x, mu_p, s_p));
                },
                lo, hi, 20000);
            CHECK(closed == doctest::Approx(quad).epsilon(1e-6));
        }
    }
    SUBCASE("prior schedule must cover the rollout") {
        auto y = random_tensor(4, 4, 13);
        auto sigma = Tensor::full(4, 4, 0.1);
        const std::vector<double> prior{0.1};  // one step, but rows imply two
        CHECK_THROWS_AS(
            loss::bayes_gaussian_kl(y, sigma, y, fnri::SigmaMode::Anisotropic, prior, 2),
            std::invalid_argument);
    }
}

TEST_CASE("normal-inverse-Wishart") {
    loss::NiwHyper hyper;
    hyper.mu0 = {0.1, -0.2, 0.05, 0.0};
    hyper.kappa0 = 1.5;
    hyper.psi0_diag = 1e-3;
    hyper.nu0 = 6.0;

    SUBCASE("batch update equals sequential single-point conjugate updates") {
        auto rng = oracles::test_rng(14);
        std::uniform_real_distribution<double> u(-1.0, 1.0);
        std::uniform_int_distribution<int> usize(1, 20);
        for (int rep = 0; rep < 20; ++rep) {
            const int n = usize(rng);
            std::vector<std::array<double, 4>> samples(n);
            for (auto& s : samples)
                for (double& x : s) x = u(rng);

            const auto batch = loss::niw_update(hyper, samples);

            // sequential oracle: one conjugate update per point, full Psi
            // carried between steps
            std::array<double, 4> mu = hyper.mu0;
            double kappa = hyper.kappa0, nu = hyper.nu0;
            std::array<std::array<double, 4>, 4> psi{};
            for (int c = 0; c < 4; ++c) psi[c][c] = hyper.psi0_diag;
            for (const auto& s : samples) {
                const double kn = kappa + 1.0;
                std::array<double, 4> mu_n;
                for (int c = 0; c < 4; ++c) mu_n[c] = (kappa * mu[c] + s[c]) / kn;
                for (int a = 0; a < 4; ++a)
                    for (int b = 0; b < 4; ++b)
                        psi[a][b] += (kappa / kn) * (s[a] - mu[a]) * (s[b] - mu[b]);
                mu = mu_n;
                kappa = kn;
                nu += 1.0;
            }
            CHECK(kappa == doctest::Approx(batch.kappa).epsilon(1e-12));
            CHECK(nu == doctest::Approx(batch.nu).epsilon(1e-12));
            for (int c = 0; c < 4; ++c)
                CHECK(std::abs(mu[c] - batch.mu[c]) < 1e-9);
            for (int a = 0; a < 4; ++a)
                for (int b = 0; b < 4; ++b)
                    CHECK(std::abs(psi[a][b] - batch.psi[a][b]) < 1e-9);
        }
    }
    SUBCASE("empty batch returns the prior") {
        const auto post = loss::niw_update(hyper, {});
        CHECK(post.kappa == hyper.kappa0);
        CHECK(post.nu == hyper.nu0);
        for (int c = 0; c < 4; ++c) {
            CHECK(post.mu[c] == hyper.mu0[c]);
            CHECK(post.psi[c][c] == hyper.psi0_diag);
        }
    }
    SUBCASE("negative log posterior gradcheck") {
        auto pred = random_tensor(3, 4, 15, -0.5, 0.5, true);
        auto sigma = random_tensor(3, 4, 16, 0.2, 1.0, true);
        auto target = random_tensor(3, 4, 17);
        auto fwd = [&] {
            return loss::niw_neg_log_posterior(pred, sigma, target,
                                               fnri::SigmaMode::Anisotropic, hyper);
        };
        CHECK(oracles::max_rel_grad_err(fwd, {pred, sigma}) < 1e-4);
    }
    SUBCASE("invalid hyperparameters are rejected") {
        loss::NiwHyper bad = hyper;
        bad.nu0 = 2.0;  // must exceed d - 1 = 3
        CHECK_THROWS_AS(loss::niw_update(bad, {}), std::invalid_argument);
    }
}

TEST_CASE("every loss gradient passes finite differences") {
    auto pred = random_tensor(4, 4, 18, -0.5, 0.5, true);
    auto sigma4 = random_tensor(4, 4, 19, 0.2, 1.5, true);
    auto sigma1 = random_tensor(4, 1, 20, 0.2, 1.5, true);
    auto sigma2 = random_tensor(4, 2, 21, 0.2, 1.5, true);
    auto target = random_tensor(4, 4, 22);
    auto logits = random_tensor(6, 2, 23, -1.0, 1.0, true);
    const std::vector<double> prior{0.4, 0.6};

    using Fwd = std::function<Tensor()>;
    auto post = posterior_from(logits);
    const std::vector<std::pair<const char*, Fwd>> cases = {
        {"fixed", [&] { return loss::nll_fixed(pred, target, 5e-5); }},
        {"iso",
         [&] { return loss::nll_gaussian(pred, sigma1, target, fnri::SigmaMode::Isotropic); }},
        {"semi",
         [&] { return loss::nll_gaussian(pred, sigma2, target, fnri::SigmaMode::SemiIsotropic); }},
        {"aniso",
         [&] { return loss::nll_gaussian(pred, sigma4, target, fnri::SigmaMode::Anisotropic); }},
        {"lorentzian",
         [&] { return loss::nll_lorentzian(pred, sigma1, target, fnri::SigmaMode::Isotropic); }},
        {"latent_kl", [&] { return loss::latent_kl(post); }},
        {"convexify", [&] { return loss::convexify(pred, sigma4, target, 0.3, 0.7); }},
        {"bayes_kl",
         [&] {
             return loss::bayes_gaussian_kl(pred, sigma4, target, fnri::SigmaMode::Anisotropic,
                                            prior, 2);
         }},
    };
    std::vector<Tensor> params{pred, sigma4, sigma1, sigma2, logits};
    for (const auto& [name, fwd] : cases) {
        INFO(name);
        CHECK(oracles::max_rel_grad_err(fwd, params) < 1e-4);
    }
}

TEST_CASE("losses are translation invariant except NIW") {
    auto pred = random_tensor(5, 4, 24);
    auto target = random_tensor(5, 4, 25);
    auto sigma = random_tensor(5, 4, 26, 0.2, 1.0);
    auto shift = [](const Tensor& t, double c) { return ad::add_scalar(t, c); };
    for (double c : {0.37, -1.2}) {
        CHECK(loss::nll_fixed(pred, target, 5e-5).value() ==
              loss::nll_fixed(shift(pred, c), shift(target, c), 5e-5).value());
        CHECK(loss::nll_gaussian(pred, sigma, target, fnri::SigmaMode::Anisotropic).value() ==
              loss::nll_gaussian(shift(pred, c), sigma, shift(target, c),
                                 fnri::SigmaMode::Anisotropic)
                  .value());
        CHECK(loss::nll_lorentzian(pred, sigma, target, fnri::SigmaMode::Anisotropic).value() ==
              loss::nll_lorentzian(shift(pred, c), sigma, shift(target, c),
                                   fnri::SigmaMode::Anisotropic)
                  .value());
    }
    loss::NiwHyper hyper;
    const double base = loss::niw_neg_log_posterior(pred, sigma, target,
                                                    fnri::SigmaMode::Anisotropic, hyper)
                            .value();
    const double shifted =
        loss::niw_neg_log_posterior(shift(pred, 0.37), sigma, shift(target, 0.37),
                                    fnri::SigmaMode::Anisotropic, hyper)
            .value();
    CHECK(base != shifted);  // the posterior depends on y absolutely
}

TEST_CASE("total_loss") {
    auto pred = random_tensor(6, 4, 27);
    auto target = random_tensor(6, 4, 28);
    auto sigma1 = random_tensor(6, 1, 29, 0.2, 1.5);
    auto logits = random_tensor(4, 2, 30);
    auto post = posterior_from(logits);

    SUBCASE("perfect fixed prediction with a uniform posterior totals zero") {
        auto uniform = posterior_from(Tensor::full(4, 2, 0.0));
        loss::Config cfg;
        cfg.kind = loss::Kind::Fixed;
        loss::ModelOutputs outputs{pred, ad::Tensor(), &uniform, 6, 1};
        const auto lv = loss::total_loss(cfg, outputs, pred, 0);
        CHECK(lv.total.value() == 0.0);
        CHECK(lv.component("L_y") == 0.0);
        CHECK(lv.component("L_KD") == 0.0);
    }
    SUBCASE("components sum to the total exactly") {
        loss::Config cfg;
        cfg.kind = loss::Kind::IsoGauss;
        cfg.convexify = true;
        loss::ModelOutputs outputs{pred, sigma1, &post, 6, 1};
        const auto lv = loss::total_loss(cfg, outputs, target, 3);
        double acc = 0.0;
        for (const auto& [name, v] : lv.components) acc += v;
        CHECK(acc == lv.total.value());
    }
    SUBCASE("iso_gauss assembles the Gaussian term plus the latent KL") {
        loss::Config cfg;
        cfg.kind = loss::Kind::IsoGauss;
        loss::ModelOutputs outputs{pred, sigma1, &post, 6, 1};
        const auto lv = loss::total_loss(cfg, outputs, target, 0);
        const double expected =
            loss::nll_gaussian(pred, sigma1, target, fnri::SigmaMode::Isotropic).value() +
            loss::latent_kl(post).value();
        CHECK(lv.total.value() == doctest::Approx(expected).epsilon(1e-10));
    }
    SUBCASE("literal KL sign flips the latent component") {
        loss::Config cfg;
        cfg.kind = loss::Kind::Fixed;
        cfg.kl_sign = loss::KlSign::Literal;
        loss::ModelOutputs outputs{pred, ad::Tensor(), &post, 6, 1};
        const auto lv = loss::total_loss(cfg, outputs, target, 0);
        CHECK(lv.component("L_KD") == doctest::Approx(-loss::latent_kl(post).value()));
    }
    SUBCASE("aniso_gauss_kl without a schedule is rejected") {
        loss::Config cfg;
        cfg.kind = loss::Kind::AnisoGaussKL;
        auto sigma4 = random_tensor(6, 4, 31, 0.2, 1.5);
        loss::ModelOutputs outputs{pred, sigma4, &post, 6, 1};
        CHECK_THROWS_AS(loss::total_loss(cfg, outputs, target, 0), std::invalid_argument);
    }
}
