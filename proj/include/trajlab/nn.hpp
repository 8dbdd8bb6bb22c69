#pragma once

#include <random>
#include <string>
#include <utility>
#include <vector>

#include "trajlab/tensor.hpp"

namespace trajlab::nn {

using NamedTensors = std::vector<std::pair<std::string, ad::Tensor>>;
// Non-trainable state (batch-norm running statistics).
using NamedBuffers = std::vector<std::pair<std::string, std::vector<double>*>>;

class Linear {
  public:
    Linear() = default;
    Linear(int in, int out, std::mt19937_64& rng);

    ad::Tensor forward(const ad::Tensor& x) const;
    void collect(const std::string& prefix, NamedTensors& out);

    ad::Tensor weight;  // [in, out]
    ad::Tensor bias;    // [1, out]
};

class BatchNorm {
  public:
    BatchNorm() = default;
    explicit BatchNorm(int features);

    ad::Tensor forward(const ad::Tensor& x, bool training);
    void collect(const std::string& prefix, NamedTensors& params, NamedBuffers& buffers);

    ad::Tensor gamma;
    ad::Tensor beta;
    std::vector<double> running_mean;
    std::vector<double> running_var;
    double momentum = 0.1;
    double eps = 1e-5;
};

// Two dense layers with ELU activations followed by batch norm over rows.
class MlpBlock {
  public:
    MlpBlock() = default;
    MlpBlock(int in, int hidden, int out, std::mt19937_64& rng);

    ad::Tensor forward(const ad::Tensor& x, bool training);
    void collect(const std::string& prefix, NamedTensors& params, NamedBuffers& buffers);

    Linear fc1, fc2;
    BatchNorm bn;
};

}  // namespace trajlab::nn
