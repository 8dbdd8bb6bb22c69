#include "trajlab/nn.hpp"

#include <cmath>

namespace trajlab::nn {

Linear::Linear(int in, int out, std::mt19937_64& rng) {
    // Xavier-uniform
    const double bound = std::sqrt(6.0 / (in + out));
    std::uniform_real_distribution<double> u(-bound, bound);
    std::vector<double> w(static_cast<std::size_t>(in) * out);
    for (double& x : w) x = u(rng);
    weight = ad::Tensor::from_values(in, out, std::move(w), /*requires_grad=*/true);
    bias = ad::Tensor::zeros(1, out, /*requires_grad=*/true);
}

ad::Tensor Linear::forward(const ad::Tensor& x) const {
    return ad::add_rowvec(ad::matmul(x, weight), bias);
}

void Linear::collect(const std::string& prefix, NamedTensors& out) {
    out.emplace_back(prefix + ".weight", weight);
    out.emplace_back(prefix + ".bias", bias);
}

BatchNorm::BatchNorm(int features)
    : gamma(ad::Tensor::full(1, features, 1.0, true)),
      beta(ad::Tensor::zeros(1, features, true)),
      running_mean(features, 0.0),
      running_var(features, 1.0) {}

ad::Tensor BatchNorm::forward(const ad::Tensor& x, bool training) {
    if (!training) return ad::batch_norm_eval(x, gamma, beta, running_mean, running_var, eps);
    std::vector<double> mu, var;
    ad::Tensor y = ad::batch_norm_train(x, gamma, beta, eps, &mu, &var);
    const int n = x.rows();
    const double unbias = n > 1 ? static_cast<double>(n) / (n - 1) : 1.0;
    for (std::size_t j = 0; j < running_mean.size(); ++j) {
        running_mean[j] = (1.0 - momentum) * running_mean[j] + momentum * mu[j];
        running_var[j] = (1.0 - momentum) * running_var[j] + momentum * var[j] * unbias;
    }
    return y;
}

void BatchNorm::collect(const std::string& prefix, NamedTensors& params, NamedBuffers& buffers) {
    params.emplace_back(prefix + ".gamma", gamma);
    params.emplace_back(prefix + ".beta", beta);
    buffers.emplace_back(prefix + ".running_mean", &running_mean);
    buffers.emplace_back(prefix + ".running_var", &running_var);
}

MlpBlock::MlpBlock(int in, int hidden, int out, std::mt19937_64& rng)
    : fc1(in, hidden, rng), fc2(hidden, out, rng), bn(out) {}

ad::Tensor MlpBlock::forward(const ad::Tensor& x, bool training) {
    ad::Tensor h = ad::elu(fc1.forward(x));
    h = ad::elu(fc2.forward(h));
    return bn.forward(h, training);
}

void MlpBlock::collect(const std::string& prefix, NamedTensors& params, NamedBuffers& buffers) {
    fc1.collect(prefix + ".fc1", params);
    fc2.collect(prefix + ".fc2", params);
    bn.collect(prefix + ".bn", params, buffers);
}

}  // namespace trajlab::nn
