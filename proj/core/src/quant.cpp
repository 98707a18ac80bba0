#include "metaptq/quant.hpp"

#include <algorithm>
#include <cmath>

namespace metaptq {

int64_t quant_min(int bits, bool is_signed) {
    return is_signed ? -(int64_t{1} << (bits - 1)) : 0;
}

int64_t quant_max(int bits, bool is_signed) {
    return is_signed ? (int64_t{1} << (bits - 1)) - 1 : (int64_t{1} << bits) - 1;
}

namespace {

void check_scale_positive(const Tensor& scale) {
    for (double s : scale.values()) {
        if (s <= 0.0) throw NumericError("quantization scale must be positive");
    }
}

// w / s and s * q with either a per-tensor scalar scale or a per-channel
// scale along the leading axis.
Tensor div_by_scale(const Tensor& w, const Tensor& scale) {
    if (scale.numel() == 1) return scalar_mul(reciprocal(scale), w);
    int64_t o = scale.shape()[0];
    if (w.shape().empty() || w.shape()[0] != o) {
        throw NumericError("per-channel scale does not match leading weight axis");
    }
    int64_t rest = w.numel() / o;
    Tensor w2 = reshape(w, {o, rest});
    return reshape(mul(w2, broadcast_cols(reciprocal(scale), rest)), w.shape());
}

Tensor mul_by_scale(const Tensor& q, const Tensor& scale) {
    if (scale.numel() == 1) return scalar_mul(scale, q);
    int64_t o = scale.shape()[0];
    int64_t rest = q.numel() / o;
    Tensor q2 = reshape(q, {o, rest});
    return reshape(mul(q2, broadcast_cols(scale, rest)), q.shape());
}

}  // namespace

Tensor h_rectified_sigmoid(const Tensor& v) {
    return clamp(add_scalar(scale(sigmoid(v), 1.2), -0.1), 0.0, 1.0);
}

Tensor quantize_uniform(const Tensor& w, const Tensor& scale, int bits, bool is_signed) {
    check_scale_positive(scale);
    double n = static_cast<double>(quant_min(bits, is_signed));
    double p = static_cast<double>(quant_max(bits, is_signed));
    Tensor q = clamp(ste_round(div_by_scale(w, scale)), n, p);
    return mul_by_scale(q, scale);
}

Tensor quantize_uniform(const Tensor& w, const QuantParams& q) {
    return quantize_uniform(w, q.scale, q.bits, q.is_signed);
}

Tensor quantize_learned_with(const Tensor& w, const Tensor& scale_raw, const Tensor& v,
                             const QuantParams& q) {
    // a simulated optimizer step may overshoot below zero; the clamp keeps
    // the quantizer defined while passing gradient at the floor
    Tensor scale = clamp(scale_raw, 1e-8, 1e12);
    if (!shape_equal(v.shape(), w.shape())) {
        throw NumericError("rounding variables shaped " + shape_str(v.shape()) +
                           " do not match weight " + shape_str(w.shape()));
    }
    double n = static_cast<double>(q.qmin());
    double p = static_cast<double>(q.qmax());
    // the floor index is detached so the scale gradient is the exact local
    // derivative s -> s * (idx + h) between lattice boundaries, which keeps
    // the whole quantizer finite-difference-consistent away from boundaries
    Tensor soft = add(ste_floor(div_by_scale(w, scale)).detach(), h_rectified_sigmoid(v));
    return mul_by_scale(clamp(soft, n, p), scale);
}

Tensor quantize_learned(const Tensor& w, const QuantParams& q) {
    return quantize_learned_with(w, q.scale, q.v, q);
}

Tensor rounding_regularizer(const Tensor& v, double beta) {
    if (beta < 1.0) throw NumericError("rounding_regularizer: beta must be >= 1");
    Tensor h = h_rectified_sigmoid(v);
    Tensor t = abs(add_scalar(scale(h, 2.0), -1.0));  // |2h - 1|
    return sum_all(add_scalar(neg(pow_const(t, beta)), 1.0));
}

Tensor lsq_quantize_act_with(const Tensor& a, const Tensor& scale_t, const ActQuantState& st) {
    double p = static_cast<double>(quant_max(st.bits, st.is_signed));
    double g = 1.0 / std::sqrt(static_cast<double>(a.numel()) * p);
    Tensor s = grad_scale(clamp(scale_t, 1e-8, 1e12), g);
    double n = static_cast<double>(quant_min(st.bits, st.is_signed));
    Tensor q = clamp(ste_round(scalar_mul(reciprocal(s), a)), n, p);
    return scalar_mul(s, q);
}

Tensor lsq_quantize_act(const Tensor& a, const ActQuantState& st) {
    return lsq_quantize_act_with(a, st.scale, st);
}

namespace {

double mse_at_scale(const std::vector<double>& w, double s, double n, double p) {
    double err = 0.0;
    for (double x : w) {
        double q = std::round(x / s);
        q = std::min(std::max(q, n), p);
        double d = x - s * q;
        err += d * d;
    }
    return err;
}

double grid_search(const std::vector<double>& w, double lo, double hi, int steps, double n,
                   double p, double* best_err) {
    double best_s = lo;
    double best = mse_at_scale(w, lo, n, p);
    for (int i = 1; i < steps; ++i) {
        double s = lo + (hi - lo) * static_cast<double>(i) / static_cast<double>(steps - 1);
        double e = mse_at_scale(w, s, n, p);
        if (e < best) {
            best = e;
            best_s = s;
        }
    }
    if (best_err) *best_err = best;
    return best_s;
}

}  // namespace

double init_scale_search(const Tensor& w, int bits, bool is_signed) {
    const auto& wv = w.values();
    if (wv.empty()) throw NumericError("init_scale_search: empty weight tensor");
    double amax = 0.0;
    for (double x : wv) amax = std::max(amax, std::abs(x));
    if (amax == 0.0) return 1e-8;
    double p = static_cast<double>(quant_max(bits, is_signed));
    double n = static_cast<double>(quant_min(bits, is_signed));
    double lo = amax / p * 0.5;
    double hi = amax / p * 1.2;
    double best_err = 0.0;
    double best = grid_search(wv, lo, hi, 100, n, p, &best_err);
    // repeated local refinement around the running argmin; each pass shrinks
    // the bracket by ~50x, so a lattice-aligned scale is recovered to full
    // double precision
    double step = (hi - lo) / 99.0;
    for (int pass = 0; pass < 10 && step > 1e-12 * best; ++pass) {
        double fine_err = 0.0;
        double fine = grid_search(wv, std::max(lo, best - step), std::min(hi, best + step), 100, n,
                                  p, &fine_err);
        if (fine_err < best_err) {
            best_err = fine_err;
            best = fine;
        }
        step = 2.0 * step / 99.0;
    }
    return std::max(best, 1e-8);
}

QuantParams make_weight_quant(const Tensor& w, int bits, bool is_signed, bool per_channel) {
    QuantParams q;
    q.bits = bits;
    q.is_signed = is_signed;
    q.per_channel = per_channel;
    const auto& wv = w.values();
    std::vector<double> scales;
    if (per_channel) {
        int64_t o = w.shape()[0];
        int64_t rest = w.numel() / o;
        for (int64_t i = 0; i < o; ++i) {
            std::vector<double> row(wv.begin() + i * rest, wv.begin() + (i + 1) * rest);
            scales.push_back(init_scale_search(Tensor::from_data({rest}, std::move(row)), bits, is_signed));
        }
        q.scale = Tensor::param({o}, std::move(scales));
    } else {
        q.scale = Tensor::param(Shape{}, {init_scale_search(w, bits, is_signed)});
    }
    // floor + h(v) should reproduce round-to-nearest at init; +/-2 keeps
    // h(v) in (0,1) so gradients stay alive.
    std::vector<double> v(wv.size());
    const auto& sv = q.scale.values();
    int64_t rest = per_channel ? w.numel() / w.shape()[0] : 0;
    for (size_t i = 0; i < wv.size(); ++i) {
        double s = per_channel ? sv[static_cast<int64_t>(i) / rest] : sv[0];
        double u = wv[i] / s;
        double r = u - std::floor(u);
        v[i] = r >= 0.5 ? 2.0 : -2.0;
    }
    q.v = Tensor::param(w.shape(), std::move(v));
    return q;
}

void init_act_scale(ActQuantState& st, const Tensor& sample) {
    double mean_abs = 0.0;
    for (double x : sample.values()) mean_abs += std::abs(x);
    mean_abs /= static_cast<double>(sample.numel());
    double p = static_cast<double>(quant_max(st.bits, st.is_signed));
    double s = std::max(2.0 * mean_abs / std::sqrt(p), 1e-8);
    st.scale = Tensor::param(Shape{}, {s});
    st.initialized = true;
}

void harden_rounding(QuantParams& q) {
    const Tensor h = h_rectified_sigmoid(q.v);
    std::vector<double> v(q.v.numel());
    const auto& hv = h.values();
    // sigmoid(+/-20) saturates past the rectification clip, so h(v) is
    // exactly 0 or 1 afterwards.
    for (size_t i = 0; i < v.size(); ++i) v[i] = hv[i] >= 0.5 ? 20.0 : -20.0;
    q.v.set_values(v);
    q.hardened = true;
}

void clamp_scale_floor(Tensor& scale, double floor_value) {
    std::vector<double> s = scale.values();
    for (double& x : s) x = std::max(x, floor_value);
    scale.set_values(s);
}

}  // namespace metaptq
