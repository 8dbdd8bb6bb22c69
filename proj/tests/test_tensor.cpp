#include <doctest.h>

#include <cmath>
#include <random>

#include "oracles.hpp"
#include "trajlab/optim.hpp"
#include "trajlab/tensor.hpp"

using namespace trajlab;
using ad::Tensor;

namespace {

Tensor random_param(int rows, int cols, std::mt19937_64& rng, double lo = -1.0, double hi = 1.0) {
    std::uniform_real_distribution<double> u(lo, hi);
    std::vector<double> v(static_cast<std::size_t>(rows) * cols);
    for (double& x : v) x = u(rng);
    return Tensor::from_values(rows, cols, std::move(v), /*requires_grad=*/true);
}

}  // namespace

TEST_CASE("elementwise forward definitions") {
    auto x = Tensor::from_values(1, 3, {0.0, 1.0, -50.0});
    auto y = ad::elu(x);
    CHECK(y.at(0, 0) == 0.0);
    CHECK(y.at(0, 1) == 1.0);
    CHECK(y.at(0, 2) == doctest::Approx(-1.0).epsilon(1e-12));

    auto logits = Tensor::from_values(1, 2, {0.3, 0.3});
    auto sm = ad::softmax(logits);
    CHECK(sm.at(0, 0) == doctest::Approx(0.5).epsilon(1e-15));
    CHECK(sm.at(0, 1) == doctest::Approx(0.5).epsilon(1e-15));

    auto z = Tensor::from_values(1, 2, {2.0, 8.0});
    CHECK(ad::ln(z).at(0, 0) == doctest::Approx(std::log(2.0)));
    CHECK(ad::softplus(Tensor::scalar(-1e6), 5.0).value() > 0.0);
}

TEST_CASE("batch norm training normalizes each feature") {
    auto rng = oracles::test_rng(7);
    auto x = random_param(64, 5, rng, -3.0, 3.0);
    auto gamma = Tensor::full(1, 5, 1.0);
    auto beta = Tensor::zeros(1, 5);
    auto y = ad::batch_norm_train(x, gamma, beta, 1e-12);
    for (int j = 0; j < 5; ++j) {
        double mean = 0.0, var = 0.0;
        for (int i = 0; i < 64; ++i) mean += y.at(i, j);
        mean /= 64;
        for (int i = 0; i < 64; ++i) var += (y.at(i, j) - mean) * (y.at(i, j) - mean);
        var /= 64;
        CHECK(std::abs(mean) < 1e-6);
        CHECK(var == doctest::Approx(1.0).epsilon(1e-6));
    }
}

TEST_CASE("shape mismatches name the op and shapes") {
    auto a = Tensor::zeros(2, 3);
    auto b = Tensor::zeros(2, 3);
    CHECK_THROWS_WITH_AS(ad::matmul(a, b), doctest::Contains("matmul"), std::invalid_argument);
    CHECK_THROWS_AS(ad::add(a, Tensor::zeros(3, 2)), std::invalid_argument);
    CHECK_THROWS_AS(ad::slice_cols(a, 2, 5), std::invalid_argument);
}

TEST_CASE("basic backward identities") {
    auto x = Tensor::from_values(1, 1, {3.0}, true);
    auto unused = Tensor::from_values(1, 1, {2.0}, true);
    {
        ad::Tape tape;
        auto loss = ad::sum(ad::square(x));
        tape.backward(loss);
    }
    CHECK(x.grad()[0] == doctest::Approx(6.0).epsilon(1e-14));
    CHECK(unused.grad()[0] == 0.0);

    x.zero_grad();
    ad::Tape tape;
    auto loss = ad::sum(ad::scale(x, 2.0));
    tape.backward(loss);
    CHECK_THROWS_AS(tape.backward(loss), std::logic_error);
}

TEST_CASE("backward requires scalar and finite loss") {
    auto x = Tensor::from_values(1, 2, {1.0, 2.0}, true);
    {
        ad::Tape tape;
        auto y = ad::square(x);
        CHECK_THROWS_AS(tape.backward(y), std::invalid_argument);
    }
    {
        ad::Tape tape;
        auto y = ad::sum(ad::ln(ad::add_scalar(x, -1.0)));  // ln(0) -> -inf
        CHECK_THROWS_AS(tape.backward(y), std::runtime_error);
    }
}

TEST_CASE("finite-difference gradcheck for every primitive") {
    auto rng = oracles::test_rng(11);
    auto a = random_param(3, 4, rng);
    auto b = random_param(3, 4, rng);
    auto w = random_param(4, 2, rng);
    auto row = random_param(1, 4, rng);
    auto pos = random_param(3, 4, rng, 0.5, 2.0);
    auto col = random_param(3, 1, rng);
    auto gamma = random_param(1, 4, rng, 0.5, 1.5);
    auto beta = random_param(1, 4, rng);
    const std::vector<int> idx{2, 0, 1, 1, 2};
    const std::vector<double> running_mean{0.1, -0.2, 0.05, 0.3};
    const std::vector<double> running_var{1.1, 0.9, 1.3, 0.7};

    using Fwd = std::function<Tensor()>;
    const std::vector<std::pair<const char*, Fwd>> cases = {
        {"matmul", [&] { return ad::sum(ad::square(ad::matmul(a, w))); }},
        {"add", [&] { return ad::sum(ad::square(ad::add(a, b))); }},
        {"add_rowvec", [&] { return ad::sum(ad::square(ad::add_rowvec(a, row))); }},
        {"add_scalar", [&] { return ad::sum(ad::square(ad::add_scalar(a, 0.7))); }},
        {"sub", [&] { return ad::sum(ad::square(ad::sub(a, b))); }},
        {"mul", [&] { return ad::sum(ad::square(ad::mul(a, b))); }},
        {"div", [&] { return ad::sum(ad::square(ad::div(a, pos))); }},
        {"scale", [&] { return ad::sum(ad::square(ad::scale(a, -1.7))); }},
        {"square", [&] { return ad::sum(ad::square(ad::square(a))); }},
        {"ln", [&] { return ad::sum(ad::square(ad::ln(pos))); }},
        {"exp", [&] { return ad::sum(ad::square(ad::exp(a))); }},
        {"elu", [&] { return ad::sum(ad::square(ad::elu(a))); }},
        {"softplus", [&] { return ad::sum(ad::square(ad::softplus(a, 5.0))); }},
        {"softmax", [&] { return ad::sum(ad::square(ad::softmax(a))); }},
        {"log_softmax", [&] { return ad::sum(ad::square(ad::log_softmax(a))); }},
        {"mean", [&] { return ad::mean(ad::square(a)); }},
        {"concat_cols",
         [&] { return ad::sum(ad::square(ad::concat_cols(std::vector<Tensor>{a, b, col}))); }},
        {"concat_rows",
         [&] { return ad::sum(ad::square(ad::concat_rows(std::vector<Tensor>{a, b}))); }},
        {"slice_cols", [&] { return ad::sum(ad::square(ad::slice_cols(a, 1, 2))); }},
        {"repeat_cols", [&] { return ad::sum(ad::square(ad::repeat_cols(col, 3))); }},
        {"rows_select", [&] { return ad::sum(ad::square(ad::rows_select(a, idx))); }},
        {"rows_scatter_add",
         [&] {
             return ad::sum(ad::square(ad::rows_scatter_add(ad::rows_select(a, idx), idx, 3)));
         }},
        {"batch_norm_train",
         [&] { return ad::sum(ad::square(ad::batch_norm_train(a, gamma, beta, 1e-5))); }},
        {"batch_norm_eval",
         [&] {
             return ad::sum(
                 ad::square(ad::batch_norm_eval(a, gamma, beta, running_mean, running_var, 1e-5)));
         }},
    };

    std::vector<Tensor> params{a, b, w, row, pos, col, gamma, beta};
    for (const auto& [name, fwd] : cases) {
        INFO(name);
        CHECK(oracles::max_rel_grad_err(fwd, params) < 1e-4);
    }
}

TEST_CASE("two-layer MLP gradcheck matches finite differences") {
    auto rng = oracles::test_rng(23);
    auto x = random_param(5, 6, rng);
    auto w1 = random_param(6, 8, rng);
    auto b1 = random_param(1, 8, rng);
    auto w2 = random_param(8, 3, rng);
    auto b2 = random_param(1, 3, rng);
    auto target = Tensor::from_values(5, 3, std::vector<double>(15, 0.25));
    auto fwd = [&] {
        auto h = ad::elu(ad::add_rowvec(ad::matmul(x, w1), b1));
        auto y = ad::add_rowvec(ad::matmul(h, w2), b2);
        return ad::sum(ad::square(ad::sub(y, target)));
    };
    CHECK(oracles::max_rel_grad_err(fwd, {x, w1, b1, w2, b2}) < 1e-4);
}

TEST_CASE("matmul parallel path is bitwise equal to the serial reference") {
    auto rng = oracles::test_rng(31);
    auto a = random_param(70, 40, rng);
    auto b = random_param(40, 30, rng);
    ad::set_parallel_kernels(false);
    auto serial = ad::matmul(a, b);
    ad::set_parallel_kernels(true);
    auto parallel = ad::matmul(a, b);
    for (std::size_t i = 0; i < serial.numel(); ++i)
        CHECK(serial.values()[i] == parallel.values()[i]);
}

TEST_CASE("batch norm eval is stateless and idempotent") {
    auto x = Tensor::from_values(2, 2, {1.0, 2.0, 3.0, 4.0});
    auto gamma = Tensor::full(1, 2, 1.0);
    auto beta = Tensor::zeros(1, 2);
    const std::vector<double> mean{0.5, 0.5}, var{2.0, 2.0};
    auto y1 = ad::batch_norm_eval(x, gamma, beta, mean, var, 1e-5);
    auto y2 = ad::batch_norm_eval(x, gamma, beta, mean, var, 1e-5);
    for (std::size_t i = 0; i < y1.numel(); ++i) CHECK(y1.values()[i] == y2.values()[i]);
}

TEST_CASE("adam") {
    SUBCASE("zero gradients leave parameters unchanged") {
        auto p = Tensor::from_values(1, 3, {1.0, -2.0, 3.0}, true);
        ad::Adam adam({p});
        adam.zero_grad();
        adam.step();
        CHECK(p.at(0, 0) == 1.0);
        CHECK(p.at(0, 1) == -2.0);
        CHECK(p.at(0, 2) == 3.0);
    }
    SUBCASE("first step with unit gradients moves by ~lr") {
        auto p = Tensor::from_values(1, 2, {0.0, 0.0}, true);
        ad::Adam adam({p}, {1e-3, 0.9, 0.999, 1e-8});
        adam.zero_grad();
        {
            ad::Tape tape;
            auto loss = ad::sum(p);
            tape.backward(loss);
        }
        adam.step();
        CHECK(p.at(0, 0) == doctest::Approx(-1e-3).epsilon(1e-6));
    }
    SUBCASE("descends a quadratic bowl") {
        auto p = Tensor::from_values(1, 2, {4.0, -3.0}, true);
        ad::Adam adam({p}, {0.05, 0.9, 0.999, 1e-8});
        double prev_window = 25.0;  // |p|^2 at start
        for (int window = 0; window < 10; ++window) {
            for (int s = 0; s < 10; ++s) {
                adam.zero_grad();
                ad::Tape tape;
                auto loss = ad::sum(ad::square(p));
                tape.backward(loss);
                adam.step();
            }
            const double d2 = p.at(0, 0) * p.at(0, 0) + p.at(0, 1) * p.at(0, 1);
            CHECK(d2 < prev_window);
            prev_window = d2;
        }
    }
}

TEST_CASE("learning-rate schedule halves every 200 epochs") {
    CHECK(ad::lr_schedule(0.0005, 0, 200) == doctest::Approx(0.0005).epsilon(1e-15));
    CHECK(ad::lr_schedule(0.0005, 200, 200) == doctest::Approx(0.00025).epsilon(1e-15));
    CHECK(ad::lr_schedule(0.0005, 399, 200) == doctest::Approx(0.00025).epsilon(1e-15));
    CHECK(ad::lr_schedule(0.0005, 400, 200) == doctest::Approx(0.000125).epsilon(1e-15));
}
