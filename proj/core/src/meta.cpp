#include "metaptq/meta.hpp"

#include <algorithm>
#include <cmath>
#include <random>

namespace metaptq {

namespace {

void ensure_moments(InnerOptState& st, const std::vector<Tensor>& params) {
    if (!st.m.empty()) {
        if (st.m.size() != params.size()) {
            throw NumericError("inner_step: parameter count changed under one optimizer state");
        }
        return;
    }
    for (const auto& p : params) {
        st.m.emplace_back(p.numel(), 0.0);
        st.v.emplace_back(p.numel(), 0.0);
    }
}

}  // namespace

std::vector<Tensor> inner_step(const Tensor& train_loss, const std::vector<Tensor>& params,
                               InnerOptState& st) {
    GradResult g = grad(train_loss, params, /*create_graph=*/true);
    std::vector<Tensor> out;
    out.reserve(params.size());
    if (st.kind == InnerOptKind::Sgd) {
        ++st.t;
        for (size_t i = 0; i < params.size(); ++i) {
            out.push_back(sub(params[i], scale(g.grads[i], st.eta)));
        }
        return out;
    }
    ensure_moments(st, params);
    ++st.t;
    double bc1 = 1.0 - std::pow(st.beta1, static_cast<double>(st.t));
    double bc2 = 1.0 - std::pow(st.beta2, static_cast<double>(st.t));
    for (size_t i = 0; i < params.size(); ++i) {
        const auto& gv = g.grads[i].values();
        auto& m = st.m[i];
        auto& v = st.v[i];
        // detached direction pieces: previous first moment and the fully
        // detached second-moment denominator
        std::vector<double> m_prev_part(m.size());
        std::vector<double> inv_denom(m.size());
        for (size_t j = 0; j < m.size(); ++j) {
            m_prev_part[j] = st.beta1 * m[j] / bc1;
            double v_new = st.beta2 * v[j] + (1.0 - st.beta2) * gv[j] * gv[j];
            inv_denom[j] = 1.0 / (std::sqrt(v_new / bc2) + st.eps);
            m[j] = st.beta1 * m[j] + (1.0 - st.beta1) * gv[j];
            v[j] = v_new;
        }
        Tensor mhat = add(Tensor::from_data(params[i].shape(), std::move(m_prev_part)),
                          scale(g.grads[i], (1.0 - st.beta1) / bc1));
        Tensor step = mul(mhat, Tensor::from_data(params[i].shape(), std::move(inv_denom)));
        out.push_back(sub(params[i], scale(step, st.eta)));
    }
    return out;
}

std::vector<Tensor> hypergrad(const BilevelProblem& prob, const std::vector<Tensor>& inner_params,
                              const std::vector<Tensor>& outer_params, InnerOptState& st) {
    Tensor train = prob.train_loss();
    std::vector<Tensor> theta_hat = inner_step(train, inner_params, st);
    Tensor val = prob.val_loss(theta_hat);
    return grad(val, outer_params).grads;
}

double bilevel_val_value(const BilevelProblem& prob, const std::vector<Tensor>& inner_params,
                         InnerOptState st) {
    Tensor train = prob.train_loss();
    std::vector<Tensor> theta_hat = inner_step(train, inner_params, st);
    std::vector<Tensor> frozen;
    frozen.reserve(theta_hat.size());
    for (const auto& t : theta_hat) frozen.push_back(t.detach());
    NoGradGuard ng;
    return prob.val_loss(frozen).item();
}

std::vector<double> finite_diff_grad_coords(const std::function<double()>& f, Tensor param,
                                            const std::vector<int64_t>& coords, double h) {
    if (h <= 0.0) throw NumericError("finite_diff_grad_coords: step must be positive");
    std::vector<double> base = param.values();
    std::vector<double> probe = base;
    std::vector<double> out;
    out.reserve(coords.size());
    for (int64_t c : coords) {
        if (c < 0 || c >= static_cast<int64_t>(base.size())) {
            throw NumericError("finite_diff_grad_coords: coordinate out of range");
        }
        probe[c] = base[c] + h;
        param.set_values(probe);
        double fp = f();
        probe[c] = base[c] - h;
        param.set_values(probe);
        double fm = f();
        probe[c] = base[c];
        out.push_back((fp - fm) / (2.0 * h));
    }
    param.set_values(base);
    return out;
}

HypergradCheckResult check_hypergrad_random(uint64_t seed, int64_t dim) {
    std::mt19937_64 rng(seed);
    Tensor theta = Tensor::param({dim}, Tensor::randn({dim}, rng, 0.5).values());
    Tensor omega = Tensor::param({dim}, Tensor::randn({dim}, rng, 0.5).values());
    Tensor a = Tensor::randn({dim}, rng, 0.5);
    Tensor b = Tensor::randn({dim}, rng, 0.5);
    std::uniform_real_distribution<double> eta_pick(0.01, 0.2);

    BilevelProblem prob;
    prob.train_loss = [=]() {
        // smooth in both parameter sets, with cross terms
        Tensor quad = mul(mul(theta, theta), sigmoid(omega));
        Tensor cross = mul(theta, add(omega, a));
        Tensor bump = mul(exp(scale(theta, 0.3)), b);
        return scale(sum_all(add(add(quad, cross), bump)), 1.0 / static_cast<double>(dim));
    };
    prob.val_loss = [=](const std::vector<Tensor>& theta_hat) {
        Tensor d = sub(theta_hat[0], sigmoid(omega));
        Tensor direct = scale(sum_all(mul(omega, omega)), 0.1);
        return add(scale(sum_all(mul(d, d)), 1.0 / static_cast<double>(dim)), direct);
    };

    InnerOptState st;
    st.eta = eta_pick(rng);

    InnerOptState st_copy = st;
    std::vector<Tensor> hg = hypergrad(prob, {theta}, {omega}, st_copy);

    std::vector<int64_t> coords(dim);
    for (int64_t i = 0; i < dim; ++i) coords[i] = i;
    auto f = [&]() { return bilevel_val_value(prob, {theta}, st); };
    std::vector<double> fd = finite_diff_grad_coords(f, omega, coords, 1e-5);

    HypergradCheckResult res;
    res.coords_checked = dim;
    for (int64_t i = 0; i < dim; ++i) {
        res.max_abs_err = std::max(res.max_abs_err, std::abs(hg[0].values()[i] - fd[i]));
    }
    return res;
}

}  // namespace metaptq
