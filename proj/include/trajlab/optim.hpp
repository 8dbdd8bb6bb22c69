#pragma once

#include <cmath>
#include <vector>

#include "trajlab/tensor.hpp"

namespace trajlab::ad {

struct AdamConfig {
    double lr = 5e-4;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
};

/// Adam with bias correction. Moments mirror parameter shapes; updates are
/// deterministic functions of (params, grads, state).
class Adam {
  public:
    explicit Adam(std::vector<Tensor> params, AdamConfig cfg = {});

    void set_lr(double lr) { cfg_.lr = lr; }
    double lr() const { return cfg_.lr; }
    int step_count() const { return t_; }

    void zero_grad();
    void step();

  private:
    std::vector<Tensor> params_;
    std::vector<std::vector<double>> m_;
    std::vector<std::vector<double>> v_;
    AdamConfig cfg_;
    int t_ = 0;
};

// lr0 halved every `halving_epochs` epochs.
inline double lr_schedule(double lr0, int epoch, int halving_epochs) {
    return lr0 * std::pow(0.5, static_cast<double>(epoch / halving_epochs));
}

}  // namespace trajlab::ad
