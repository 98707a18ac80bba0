#pragma once

#include <functional>
#include <vector>

#include "metaptq/tensor.hpp"

namespace metaptq {

enum class InnerOptKind { Sgd, Adam };

// State of the unrolled inner optimizer. Adam moments are carried as
// plain values between steps; only the current gradient is differentiated
// through, so the Adam variant is an approximation of the true unrolled
// derivative. Sgd is exact.
struct InnerOptState {
    InnerOptKind kind = InnerOptKind::Sgd;
    double eta = 1e-3;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
    int64_t t = 0;
    std::vector<std::vector<double>> m, v;
};

// One differentiable optimizer step: returns updated parameters as recorded
// functions of the inputs of train_loss. Advances st.
std::vector<Tensor> inner_step(const Tensor& train_loss, const std::vector<Tensor>& params,
                               InnerOptState& st);

// A bilevel problem: both closures must rebuild their losses from the
// current leaf values on every call.
struct BilevelProblem {
    std::function<Tensor()> train_loss;
    std::function<Tensor(const std::vector<Tensor>& theta_hat)> val_loss;
};

// d(val(theta - eta * d(train)/d(theta))) / d(outer), computed by
// differentiating through the inner step.
std::vector<Tensor> hypergrad(const BilevelProblem& prob, const std::vector<Tensor>& inner_params,
                              const std::vector<Tensor>& outer_params, InnerOptState& st);

// Scalar value of the same one-step objective, for finite differencing.
// Takes the optimizer state by value so probes do not advance it.
double bilevel_val_value(const BilevelProblem& prob, const std::vector<Tensor>& inner_params,
                         InnerOptState st);

// Central differences of f over selected coordinates of one parameter.
std::vector<double> finite_diff_grad_coords(const std::function<double()>& f, Tensor param,
                                            const std::vector<int64_t>& coords, double h);

// Self-check: a randomly generated smooth one-step bilevel problem, with
// the unrolled hypergradient compared coordinate-wise against central
// differences of the scalar objective.
struct HypergradCheckResult {
    double max_abs_err = 0.0;
    int64_t coords_checked = 0;
};

HypergradCheckResult check_hypergrad_random(uint64_t seed, int64_t dim = 6);

}  // namespace metaptq
