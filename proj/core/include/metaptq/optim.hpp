#pragma once

#include <vector>

#include "metaptq/tensor.hpp"

namespace metaptq {

// Plain value-space Adam over leaf tensors.
class Adam {
  public:
    Adam(std::vector<Tensor> params, double lr, double beta1 = 0.9, double beta2 = 0.999,
         double eps = 1e-8);

    void step(const std::vector<Tensor>& grads);
    void set_lr(double lr) { lr_ = lr; }
    // Per-parameter learning rates; parameters of very different magnitudes
    // (rounding vars vs quantization scales) need different step sizes
    // because Adam steps are gradient-magnitude invariant.
    void set_param_lrs(std::vector<double> lrs);
    double lr() const { return lr_; }
    int64_t step_count() const { return t_; }

  private:
    std::vector<Tensor> params_;
    std::vector<std::vector<double>> m_, v_;
    std::vector<double> param_lrs_;  // empty -> uniform lr_
    double lr_, beta1_, beta2_, eps_;
    int64_t t_ = 0;
};

class Sgd {
  public:
    Sgd(std::vector<Tensor> params, double lr);
    void step(const std::vector<Tensor>& grads);
    void set_lr(double lr) { lr_ = lr; }

  private:
    std::vector<Tensor> params_;
    double lr_;
};

}  // namespace metaptq
