#include "metaptq/optim.hpp"

#include <cmath>

namespace metaptq {

Adam::Adam(std::vector<Tensor> params, double lr, double beta1, double beta2, double eps)
    : params_(std::move(params)), lr_(lr), beta1_(beta1), beta2_(beta2), eps_(eps) {
    for (const auto& p : params_) {
        if (!p.is_leaf()) throw NumericError("Adam: parameters must be leaf tensors");
        m_.emplace_back(p.numel(), 0.0);
        v_.emplace_back(p.numel(), 0.0);
    }
}

void Adam::set_param_lrs(std::vector<double> lrs) {
    if (lrs.size() != params_.size()) throw NumericError("Adam: lr count mismatch");
    param_lrs_ = std::move(lrs);
}

void Adam::step(const std::vector<Tensor>& grads) {
    if (grads.size() != params_.size()) throw NumericError("Adam: gradient count mismatch");
    ++t_;
    double bc1 = 1.0 - std::pow(beta1_, static_cast<double>(t_));
    double bc2 = 1.0 - std::pow(beta2_, static_cast<double>(t_));
    for (size_t i = 0; i < params_.size(); ++i) {
        double lr = param_lrs_.empty() ? lr_ : param_lrs_[i];
        const auto& g = grads[i].values();
        std::vector<double> p = params_[i].values();
        auto& m = m_[i];
        auto& v = v_[i];
        for (size_t j = 0; j < p.size(); ++j) {
            m[j] = beta1_ * m[j] + (1.0 - beta1_) * g[j];
            v[j] = beta2_ * v[j] + (1.0 - beta2_) * g[j] * g[j];
            double mhat = m[j] / bc1;
            double vhat = v[j] / bc2;
            p[j] -= lr * mhat / (std::sqrt(vhat) + eps_);
        }
        params_[i].set_values(p);
    }
}

Sgd::Sgd(std::vector<Tensor> params, double lr) : params_(std::move(params)), lr_(lr) {
    for (const auto& p : params_) {
        if (!p.is_leaf()) throw NumericError("Sgd: parameters must be leaf tensors");
    }
}

void Sgd::step(const std::vector<Tensor>& grads) {
    if (grads.size() != params_.size()) throw NumericError("Sgd: gradient count mismatch");
    for (size_t i = 0; i < params_.size(); ++i) {
        const auto& g = grads[i].values();
        std::vector<double> p = params_[i].values();
        for (size_t j = 0; j < p.size(); ++j) p[j] -= lr_ * g[j];
        params_[i].set_values(p);
    }
}

}  // namespace metaptq
