#include "metaptq/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>
#include <unordered_map>
#include <unordered_set>

namespace metaptq {

int64_t shape_numel(const Shape& s) {
    int64_t n = 1;
    for (int64_t d : s) n *= d;
    return n;
}

bool shape_equal(const Shape& a, const Shape& b) { return a == b; }

std::string shape_str(const Shape& s) {
    std::ostringstream os;
    os << "[";
    for (size_t i = 0; i < s.size(); ++i) os << (i ? "," : "") << s[i];
    os << "]";
    return os.str();
}

namespace {

thread_local bool g_grad_enabled = true;

void check_finite(const std::vector<double>& v, const char* where) {
    for (double x : v) {
        if (!std::isfinite(x)) {
            throw NumericError(std::string("non-finite value produced in ") + where);
        }
    }
}

std::shared_ptr<detail::Node> make_leaf(Shape shape, std::vector<double> values, bool requires_grad) {
    if (shape_numel(shape) != static_cast<int64_t>(values.size())) {
        throw NumericError("tensor data length does not match shape " + shape_str(shape));
    }
    check_finite(values, "leaf creation");
    auto n = std::make_shared<detail::Node>();
    n->shape = std::move(shape);
    n->values = std::move(values);
    n->requires_grad = requires_grad;
    n->is_leaf = true;
    return n;
}

void require_defined(const Tensor& t, const char* op) {
    if (!t.defined()) throw NumericError(std::string("undefined tensor passed to ") + op);
}

void require_same_shape(const Tensor& a, const Tensor& b, const char* op) {
    if (!shape_equal(a.shape(), b.shape())) {
        throw NumericError(std::string(op) + ": shape mismatch " + shape_str(a.shape()) + " vs " +
                           shape_str(b.shape()));
    }
}

}  // namespace

NoGradGuard::NoGradGuard() : prev_(g_grad_enabled) { g_grad_enabled = false; }
NoGradGuard::~NoGradGuard() { g_grad_enabled = prev_; }

bool grad_mode_enabled() { return g_grad_enabled; }

// ---- Tensor ----

Tensor Tensor::zeros(Shape shape) {
    auto n = shape_numel(shape);
    return Tensor(make_leaf(std::move(shape), std::vector<double>(n, 0.0), false));
}

Tensor Tensor::full(Shape shape, double value) {
    auto n = shape_numel(shape);
    return Tensor(make_leaf(std::move(shape), std::vector<double>(n, value), false));
}

Tensor Tensor::scalar(double value) { return Tensor(make_leaf(Shape{}, {value}, false)); }

Tensor Tensor::from_data(Shape shape, std::vector<double> values) {
    return Tensor(make_leaf(std::move(shape), std::move(values), false));
}

Tensor Tensor::param(Shape shape, std::vector<double> values) {
    return Tensor(make_leaf(std::move(shape), std::move(values), true));
}

Tensor Tensor::randn(Shape shape, std::mt19937_64& rng, double stddev) {
    std::normal_distribution<double> d(0.0, stddev);
    std::vector<double> v(shape_numel(shape));
    for (auto& x : v) x = d(rng);
    return Tensor(make_leaf(std::move(shape), std::move(v), false));
}

Tensor Tensor::rand_uniform(Shape shape, std::mt19937_64& rng, double lo, double hi) {
    std::uniform_real_distribution<double> d(lo, hi);
    std::vector<double> v(shape_numel(shape));
    for (auto& x : v) x = d(rng);
    return Tensor(make_leaf(std::move(shape), std::move(v), false));
}

const Shape& Tensor::shape() const {
    require_defined(*this, "shape()");
    return node_->shape;
}

int64_t Tensor::numel() const { return shape_numel(shape()); }

const std::vector<double>& Tensor::values() const {
    require_defined(*this, "values()");
    return node_->values;
}

double Tensor::item() const {
    if (numel() != 1) throw NumericError("item() on tensor with " + std::to_string(numel()) + " elements");
    return node_->values[0];
}

bool Tensor::requires_grad() const {
    require_defined(*this, "requires_grad()");
    return node_->requires_grad;
}

bool Tensor::is_leaf() const {
    require_defined(*this, "is_leaf()");
    return node_->is_leaf;
}

Tensor Tensor::detach() const {
    require_defined(*this, "detach()");
    return Tensor(make_leaf(node_->shape, node_->values, false));
}

void Tensor::set_values(const std::vector<double>& values) {
    require_defined(*this, "set_values()");
    if (!node_->is_leaf) throw NumericError("set_values() on a non-leaf tensor");
    if (values.size() != node_->values.size()) throw NumericError("set_values(): size mismatch");
    check_finite(values, "set_values");
    node_->values = values;
}

Tensor make_op(Shape shape, std::vector<double> values, std::vector<Tensor> parents,
               std::function<std::vector<Tensor>(const Tensor&, const Tensor&)> vjp) {
    if (shape_numel(shape) != static_cast<int64_t>(values.size())) {
        throw NumericError("op output length does not match shape " + shape_str(shape));
    }
    check_finite(values, "op");
    bool track = g_grad_enabled;
    if (track) {
        track = false;
        for (const auto& p : parents) {
            if (p.defined() && p.requires_grad()) {
                track = true;
                break;
            }
        }
    }
    auto n = std::make_shared<detail::Node>();
    n->shape = std::move(shape);
    n->values = std::move(values);
    if (track) {
        n->requires_grad = true;
        n->parents = std::move(parents);
        n->vjp = std::move(vjp);
    }
    return Tensor(n);
}

// ---- elementwise ----

Tensor add(const Tensor& a, const Tensor& b) {
    require_same_shape(a, b, "add");
    const auto& av = a.values();
    const auto& bv = b.values();
    std::vector<double> out(av.size());
    for (size_t i = 0; i < av.size(); ++i) out[i] = av[i] + bv[i];
    return make_op(a.shape(), std::move(out), {a, b},
                   [](const Tensor&, const Tensor& cot) { return std::vector<Tensor>{cot, cot}; });
}

Tensor sub(const Tensor& a, const Tensor& b) { return add(a, scale(b, -1.0)); }

Tensor mul(const Tensor& a, const Tensor& b) {
    require_same_shape(a, b, "mul");
    const auto& av = a.values();
    const auto& bv = b.values();
    std::vector<double> out(av.size());
    for (size_t i = 0; i < av.size(); ++i) out[i] = av[i] * bv[i];
    return make_op(a.shape(), std::move(out), {a, b}, [a, b](const Tensor&, const Tensor& cot) {
        return std::vector<Tensor>{mul(cot, b), mul(cot, a)};
    });
}

Tensor div(const Tensor& a, const Tensor& b) { return mul(a, reciprocal(b)); }

Tensor neg(const Tensor& a) { return scale(a, -1.0); }

Tensor scale(const Tensor& a, double c) {
    const auto& av = a.values();
    std::vector<double> out(av.size());
    for (size_t i = 0; i < av.size(); ++i) out[i] = av[i] * c;
    return make_op(a.shape(), std::move(out), {a}, [c](const Tensor&, const Tensor& cot) {
        return std::vector<Tensor>{scale(cot, c)};
    });
}

Tensor add_scalar(const Tensor& a, double c) {
    const auto& av = a.values();
    std::vector<double> out(av.size());
    for (size_t i = 0; i < av.size(); ++i) out[i] = av[i] + c;
    return make_op(a.shape(), std::move(out), {a},
                   [](const Tensor&, const Tensor& cot) { return std::vector<Tensor>{cot}; });
}

Tensor exp(const Tensor& a) {
    const auto& av = a.values();
    std::vector<double> out(av.size());
    for (size_t i = 0; i < av.size(); ++i) out[i] = std::exp(av[i]);
    return make_op(a.shape(), std::move(out), {a}, [](const Tensor& out, const Tensor& cot) {
        return std::vector<Tensor>{mul(cot, out)};
    });
}

Tensor log(const Tensor& a) {
    const auto& av = a.values();
    std::vector<double> out(av.size());
    for (size_t i = 0; i < av.size(); ++i) out[i] = std::log(av[i]);
    return make_op(a.shape(), std::move(out), {a}, [a](const Tensor&, const Tensor& cot) {
        return std::vector<Tensor>{mul(cot, reciprocal(a))};
    });
}

Tensor reciprocal(const Tensor& a) {
    const auto& av = a.values();
    std::vector<double> out(av.size());
    for (size_t i = 0; i < av.size(); ++i) out[i] = 1.0 / av[i];
    return make_op(a.shape(), std::move(out), {a}, [](const Tensor& out, const Tensor& cot) {
        return std::vector<Tensor>{neg(mul(cot, mul(out, out)))};
    });
}

Tensor pow_const(const Tensor& a, double p) {
    const auto& av = a.values();
    std::vector<double> out(av.size());
    for (size_t i = 0; i < av.size(); ++i) out[i] = std::pow(av[i], p);
    return make_op(a.shape(), std::move(out), {a}, [a, p](const Tensor&, const Tensor& cot) {
        return std::vector<Tensor>{scale(mul(cot, pow_const(a, p - 1.0)), p)};
    });
}

Tensor sqrt(const Tensor& a) { return pow_const(a, 0.5); }

Tensor abs(const Tensor& a) {
    const auto& av = a.values();
    std::vector<double> out(av.size());
    for (size_t i = 0; i < av.size(); ++i) out[i] = std::abs(av[i]);
    return make_op(a.shape(), std::move(out), {a}, [a](const Tensor&, const Tensor& cot) {
        return std::vector<Tensor>{mul(cot, detached_sign(a))};
    });
}

Tensor detached_sign(const Tensor& a) {
    const auto& av = a.values();
    std::vector<double> out(av.size());
    for (size_t i = 0; i < av.size(); ++i) out[i] = av[i] > 0.0 ? 1.0 : (av[i] < 0.0 ? -1.0 : 0.0);
    return Tensor::from_data(a.shape(), std::move(out));
}

Tensor sigmoid(const Tensor& a) {
    const auto& av = a.values();
    std::vector<double> out(av.size());
    for (size_t i = 0; i < av.size(); ++i) {
        double x = av[i];
        out[i] = x >= 0.0 ? 1.0 / (1.0 + std::exp(-x)) : std::exp(x) / (1.0 + std::exp(x));
    }
    return make_op(a.shape(), std::move(out), {a}, [](const Tensor& out, const Tensor& cot) {
        // s * (1 - s) * cot, expressed on the recorded output
        return std::vector<Tensor>{mul(cot, mul(out, add_scalar(neg(out), 1.0)))};
    });
}

Tensor relu(const Tensor& a) {
    const auto& av = a.values();
    std::vector<double> out(av.size());
    std::vector<double> mask(av.size());
    for (size_t i = 0; i < av.size(); ++i) {
        out[i] = av[i] > 0.0 ? av[i] : 0.0;
        mask[i] = av[i] > 0.0 ? 1.0 : 0.0;
    }
    Tensor m = Tensor::from_data(a.shape(), std::move(mask));
    return make_op(a.shape(), std::move(out), {a}, [m](const Tensor&, const Tensor& cot) {
        return std::vector<Tensor>{mul(cot, m)};
    });
}

Tensor clamp(const Tensor& a, double lo, double hi) {
    const auto& av = a.values();
    std::vector<double> out(av.size());
    std::vector<double> mask(av.size());
    for (size_t i = 0; i < av.size(); ++i) {
        out[i] = std::min(std::max(av[i], lo), hi);
        mask[i] = (av[i] >= lo && av[i] <= hi) ? 1.0 : 0.0;
    }
    Tensor m = Tensor::from_data(a.shape(), std::move(mask));
    return make_op(a.shape(), std::move(out), {a}, [m](const Tensor&, const Tensor& cot) {
        return std::vector<Tensor>{mul(cot, m)};
    });
}

Tensor ste_round(const Tensor& a) {
    const auto& av = a.values();
    std::vector<double> out(av.size());
    // std::round rounds halfway cases away from zero, the documented rule.
    for (size_t i = 0; i < av.size(); ++i) out[i] = std::round(av[i]);
    return make_op(a.shape(), std::move(out), {a},
                   [](const Tensor&, const Tensor& cot) { return std::vector<Tensor>{cot}; });
}

Tensor ste_floor(const Tensor& a) {
    const auto& av = a.values();
    std::vector<double> out(av.size());
    for (size_t i = 0; i < av.size(); ++i) out[i] = std::floor(av[i]);
    return make_op(a.shape(), std::move(out), {a},
                   [](const Tensor&, const Tensor& cot) { return std::vector<Tensor>{cot}; });
}

Tensor grad_scale(const Tensor& a, double g) {
    return make_op(a.shape(), a.values(), {a}, [g](const Tensor&, const Tensor& cot) {
        return std::vector<Tensor>{scale(cot, g)};
    });
}

Tensor scalar_mul(const Tensor& s, const Tensor& x) {
    if (s.numel() != 1) throw NumericError("scalar_mul: scale must have a single element");
    double sv = s.values()[0];
    const auto& xv = x.values();
    std::vector<double> out(xv.size());
    for (size_t i = 0; i < xv.size(); ++i) out[i] = sv * xv[i];
    Shape s_shape = s.shape();
    return make_op(x.shape(), std::move(out), {s, x}, [s, x, s_shape](const Tensor&, const Tensor& cot) {
        return std::vector<Tensor>{reshape(sum_all(mul(x, cot)), s_shape), scalar_mul(s, cot)};
    });
}

// ---- reductions / broadcasts ----

Tensor sum_all(const Tensor& a) {
    const auto& av = a.values();
    double s = 0.0;
    for (double x : av) s += x;
    Shape src = a.shape();
    return make_op(Shape{}, {s}, {a}, [src](const Tensor&, const Tensor& cot) {
        return std::vector<Tensor>{broadcast_full(cot, src)};
    });
}

Tensor mean_all(const Tensor& a) { return scale(sum_all(a), 1.0 / static_cast<double>(a.numel())); }

Tensor broadcast_full(const Tensor& s, Shape shape) {
    if (s.numel() != 1) throw NumericError("broadcast_full: source must be scalar");
    std::vector<double> out(shape_numel(shape), s.values()[0]);
    return make_op(std::move(shape), std::move(out), {s}, [](const Tensor&, const Tensor& cot) {
        return std::vector<Tensor>{sum_all(cot)};
    });
}

Tensor sum_rows(const Tensor& a) {
    if (a.shape().size() != 2) throw NumericError("sum_rows expects a 2-d tensor");
    int64_t n = a.shape()[0], c = a.shape()[1];
    std::vector<double> out(c, 0.0);
    const auto& av = a.values();
    for (int64_t i = 0; i < n; ++i)
        for (int64_t j = 0; j < c; ++j) out[j] += av[i * c + j];
    return make_op(Shape{c}, std::move(out), {a}, [n](const Tensor&, const Tensor& cot) {
        return std::vector<Tensor>{broadcast_rows(cot, n)};
    });
}

Tensor broadcast_rows(const Tensor& v, int64_t n) {
    if (v.shape().size() != 1) throw NumericError("broadcast_rows expects a 1-d tensor");
    int64_t c = v.shape()[0];
    std::vector<double> out(n * c);
    const auto& vv = v.values();
    for (int64_t i = 0; i < n; ++i)
        for (int64_t j = 0; j < c; ++j) out[i * c + j] = vv[j];
    return make_op(Shape{n, c}, std::move(out), {v}, [](const Tensor&, const Tensor& cot) {
        return std::vector<Tensor>{sum_rows(cot)};
    });
}

Tensor sum_cols(const Tensor& a) {
    if (a.shape().size() != 2) throw NumericError("sum_cols expects a 2-d tensor");
    int64_t n = a.shape()[0], c = a.shape()[1];
    std::vector<double> out(n, 0.0);
    const auto& av = a.values();
    for (int64_t i = 0; i < n; ++i)
        for (int64_t j = 0; j < c; ++j) out[i] += av[i * c + j];
    return make_op(Shape{n}, std::move(out), {a}, [c](const Tensor&, const Tensor& cot) {
        return std::vector<Tensor>{broadcast_cols(cot, c)};
    });
}

Tensor broadcast_cols(const Tensor& v, int64_t c) {
    if (v.shape().size() != 1) throw NumericError("broadcast_cols expects a 1-d tensor");
    int64_t n = v.shape()[0];
    std::vector<double> out(n * c);
    const auto& vv = v.values();
    for (int64_t i = 0; i < n; ++i)
        for (int64_t j = 0; j < c; ++j) out[i * c + j] = vv[i];
    return make_op(Shape{n, c}, std::move(out), {v}, [](const Tensor&, const Tensor& cot) {
        return std::vector<Tensor>{sum_cols(cot)};
    });
}

Tensor channel_sum(const Tensor& a) {
    if (a.shape().size() != 4) throw NumericError("channel_sum expects a 4-d tensor");
    int64_t n = a.shape()[0], c = a.shape()[1], h = a.shape()[2], w = a.shape()[3];
    std::vector<double> out(c, 0.0);
    const auto& av = a.values();
    int64_t hw = h * w;
    for (int64_t i = 0; i < n; ++i)
        for (int64_t j = 0; j < c; ++j) {
            const double* p = av.data() + (i * c + j) * hw;
            double s = 0.0;
            for (int64_t k = 0; k < hw; ++k) s += p[k];
            out[j] += s;
        }
    return make_op(Shape{c}, std::move(out), {a}, [n, h, w](const Tensor&, const Tensor& cot) {
        return std::vector<Tensor>{broadcast_channel(cot, n, h, w)};
    });
}

Tensor broadcast_channel(const Tensor& v, int64_t n, int64_t h, int64_t w) {
    if (v.shape().size() != 1) throw NumericError("broadcast_channel expects a 1-d tensor");
    int64_t c = v.shape()[0];
    std::vector<double> out(n * c * h * w);
    const auto& vv = v.values();
    int64_t hw = h * w;
    for (int64_t i = 0; i < n; ++i)
        for (int64_t j = 0; j < c; ++j) {
            double* p = out.data() + (i * c + j) * hw;
            for (int64_t k = 0; k < hw; ++k) p[k] = vv[j];
        }
    return make_op(Shape{n, c, h, w}, std::move(out), {v}, [](const Tensor&, const Tensor& cot) {
        return std::vector<Tensor>{channel_sum(cot)};
    });
}

Tensor logsumexp_rows(const Tensor& a) {
    if (a.shape().size() != 2) throw NumericError("logsumexp_rows expects a 2-d tensor");
    int64_t n = a.shape()[0], c = a.shape()[1];
    const auto& av = a.values();
    std::vector<double> out(n);
    for (int64_t i = 0; i < n; ++i) {
        double m = av[i * c];
        for (int64_t j = 1; j < c; ++j) m = std::max(m, av[i * c + j]);
        double s = 0.0;
        for (int64_t j = 0; j < c; ++j) s += std::exp(av[i * c + j] - m);
        out[i] = m + std::log(s);
    }
    return make_op(Shape{n}, std::move(out), {a}, [a, c](const Tensor& out, const Tensor& cot) {
        Tensor softmax = exp(sub(a, broadcast_cols(out, c)));
        return std::vector<Tensor>{mul(softmax, broadcast_cols(cot, c))};
    });
}

// ---- structure ----

Tensor matmul(const Tensor& a, const Tensor& b) {
    if (a.shape().size() != 2 || b.shape().size() != 2 || a.shape()[1] != b.shape()[0]) {
        throw NumericError("matmul: incompatible shapes " + shape_str(a.shape()) + " x " + shape_str(b.shape()));
    }
    int64_t m = a.shape()[0], k = a.shape()[1], n = b.shape()[1];
    std::vector<double> out(m * n, 0.0);
    const auto& av = a.values();
    const auto& bv = b.values();
    for (int64_t i = 0; i < m; ++i)
        for (int64_t l = 0; l < k; ++l) {
            double x = av[i * k + l];
            const double* brow = bv.data() + l * n;
            double* orow = out.data() + i * n;
            for (int64_t j = 0; j < n; ++j) orow[j] += x * brow[j];
        }
    return make_op(Shape{m, n}, std::move(out), {a, b}, [a, b](const Tensor&, const Tensor& cot) {
        return std::vector<Tensor>{matmul(cot, transpose2d(b)), matmul(transpose2d(a), cot)};
    });
}

Tensor transpose2d(const Tensor& a) {
    if (a.shape().size() != 2) throw NumericError("transpose2d expects a 2-d tensor");
    int64_t m = a.shape()[0], n = a.shape()[1];
    std::vector<double> out(m * n);
    const auto& av = a.values();
    for (int64_t i = 0; i < m; ++i)
        for (int64_t j = 0; j < n; ++j) out[j * m + i] = av[i * n + j];
    return make_op(Shape{n, m}, std::move(out), {a}, [](const Tensor&, const Tensor& cot) {
        return std::vector<Tensor>{transpose2d(cot)};
    });
}

Tensor reshape(const Tensor& a, Shape shape) {
    if (shape_numel(shape) != a.numel()) {
        throw NumericError("reshape: element count mismatch " + shape_str(a.shape()) + " -> " + shape_str(shape));
    }
    Shape orig = a.shape();
    return make_op(std::move(shape), a.values(), {a}, [orig](const Tensor&, const Tensor& cot) {
        return std::vector<Tensor>{reshape(cot, orig)};
    });
}

namespace {

// Channel-axis view: [N, C, inner] for 2-d ([N,C]) and 4-d ([N,C,H,W]).
void channel_view(const Shape& s, int64_t& n, int64_t& c, int64_t& inner, const char* op) {
    if (s.size() == 2) {
        n = s[0];
        c = s[1];
        inner = 1;
    } else if (s.size() == 4) {
        n = s[0];
        c = s[1];
        inner = s[2] * s[3];
    } else {
        throw NumericError(std::string(op) + ": expects a 2-d or 4-d tensor");
    }
}

}  // namespace

Tensor concat_channels(const Tensor& a, const Tensor& b) {
    int64_t n, ca, inner, nb, cb, innerb;
    channel_view(a.shape(), n, ca, inner, "concat_channels");
    channel_view(b.shape(), nb, cb, innerb, "concat_channels");
    if (n != nb || inner != innerb || a.shape().size() != b.shape().size()) {
        throw NumericError("concat_channels: incompatible shapes");
    }
    Shape out_shape = a.shape();
    out_shape[1] = ca + cb;
    std::vector<double> out(shape_numel(out_shape));
    const auto& av = a.values();
    const auto& bv = b.values();
    for (int64_t i = 0; i < n; ++i) {
        std::copy(av.begin() + i * ca * inner, av.begin() + (i + 1) * ca * inner,
                  out.begin() + i * (ca + cb) * inner);
        std::copy(bv.begin() + i * cb * inner, bv.begin() + (i + 1) * cb * inner,
                  out.begin() + i * (ca + cb) * inner + ca * inner);
    }
    return make_op(std::move(out_shape), std::move(out), {a, b}, [ca, cb](const Tensor&, const Tensor& cot) {
        return std::vector<Tensor>{slice_channels(cot, 0, ca), slice_channels(cot, ca, ca + cb)};
    });
}

Tensor slice_channels(const Tensor& a, int64_t c0, int64_t c1) {
    int64_t n, c, inner;
    channel_view(a.shape(), n, c, inner, "slice_channels");
    if (c0 < 0 || c1 > c || c0 >= c1) throw NumericError("slice_channels: bad range");
    Shape out_shape = a.shape();
    out_shape[1] = c1 - c0;
    std::vector<double> out(shape_numel(out_shape));
    const auto& av = a.values();
    for (int64_t i = 0; i < n; ++i) {
        std::copy(av.begin() + (i * c + c0) * inner, av.begin() + (i * c + c1) * inner,
                  out.begin() + i * (c1 - c0) * inner);
    }
    Shape in_shape = a.shape();
    return make_op(std::move(out_shape), std::move(out), {a},
                   [c0, c1, c, in_shape](const Tensor&, const Tensor& cot) {
                       Tensor padded = cot;
                       if (c0 > 0) {
                           Shape z = in_shape;
                           z[1] = c0;
                           padded = concat_channels(Tensor::zeros(z), padded);
                       }
                       if (c1 < c) {
                           Shape z = in_shape;
                           z[1] = c - c1;
                           padded = concat_channels(padded, Tensor::zeros(z));
                       }
                       return std::vector<Tensor>{padded};
                   });
}

// ---- differentiation ----

bool GradResult::any_missing() const {
    return std::any_of(missing.begin(), missing.end(), [](bool b) { return b; });
}

namespace {

// Reverse of a post-order DFS over grad-requiring parents: children first.
std::vector<detail::Node*> reverse_topo_order(detail::Node* root) {
    std::vector<detail::Node*> order;
    std::unordered_set<detail::Node*> visited;
    struct Frame {
        detail::Node* node;
        size_t next_parent;
    };
    std::vector<Frame> stack;
    stack.push_back({root, 0});
    visited.insert(root);
    while (!stack.empty()) {
        Frame& f = stack.back();
        if (f.next_parent < f.node->parents.size()) {
            detail::Node* p = f.node->parents[f.next_parent++].node();
            if (p && p->requires_grad && !visited.count(p)) {
                visited.insert(p);
                stack.push_back({p, 0});
            }
        } else {
            order.push_back(f.node);
            stack.pop_back();
        }
    }
    std::reverse(order.begin(), order.end());
    return order;
}

GradResult backprop(const Tensor& loss, const std::vector<Tensor>& params) {
    std::unordered_map<detail::Node*, Tensor> cot;
    cot[loss.node()] = Tensor::full(loss.shape(), 1.0);
    for (detail::Node* node : reverse_topo_order(loss.node())) {
        auto it = cot.find(node);
        if (it == cot.end()) continue;  // unreachable from the seed
        if (!node->vjp) continue;       // leaf
        Tensor self(node->shared_from_this());
        std::vector<Tensor> parent_cots = node->vjp(self, it->second);
        if (parent_cots.size() != node->parents.size()) {
            throw NumericError("internal: vjp arity mismatch");
        }
        for (size_t i = 0; i < parent_cots.size(); ++i) {
            detail::Node* p = node->parents[i].node();
            if (!p || !p->requires_grad || !parent_cots[i].defined()) continue;
            auto existing = cot.find(p);
            if (existing == cot.end()) {
                cot[p] = parent_cots[i];
            } else {
                existing->second = add(existing->second, parent_cots[i]);
            }
        }
    }
    GradResult result;
    result.grads.reserve(params.size());
    result.missing.reserve(params.size());
    for (const auto& p : params) {
        auto it = cot.find(p.node());
        if (it == cot.end()) {
            result.grads.push_back(Tensor::zeros(p.shape()));
            result.missing.push_back(true);
        } else {
            result.grads.push_back(it->second);
            result.missing.push_back(false);
        }
    }
    return result;
}

}  // namespace

GradResult grad(const Tensor& loss, const std::vector<Tensor>& params, bool create_graph) {
    if (!loss.defined() || loss.numel() != 1) throw NumericError("grad: loss must be a defined scalar");
    if (!loss.requires_grad()) {
        // Constant loss: all gradients are zero, but each param is flagged.
        GradResult result;
        for (const auto& p : params) {
            result.grads.push_back(Tensor::zeros(p.shape()));
            result.missing.push_back(true);
        }
        return result;
    }
    if (create_graph) return backprop(loss, params);
    NoGradGuard ng;
    return backprop(loss, params);
}

std::vector<Tensor> grad_of_grad(const Tensor& loss, const std::vector<Tensor>& inner,
                                 const std::vector<Tensor>& outer,
                                 const std::vector<Tensor>& cotangent) {
    if (inner.size() != cotangent.size()) throw NumericError("grad_of_grad: cotangent count mismatch");
    GradResult inner_grads = grad(loss, inner, /*create_graph=*/true);
    Tensor dotted = Tensor::scalar(0.0);
    for (size_t i = 0; i < inner.size(); ++i) {
        if (!shape_equal(inner_grads.grads[i].shape(), cotangent[i].shape())) {
            throw NumericError("grad_of_grad: cotangent shape mismatch at index " + std::to_string(i));
        }
        dotted = add(dotted, sum_all(mul(inner_grads.grads[i], cotangent[i])));
    }
    return grad(dotted, outer).grads;
}

std::vector<Tensor> finite_diff_grad(const std::function<double()>& f,
                                     const std::vector<Tensor>& params, double h) {
    if (h <= 0.0) throw NumericError("finite_diff_grad: step must be positive");
    double base0 = f();
    double base1 = f();
    if (base0 != base1) throw NumericError("finite_diff_grad: function is not deterministic");
    std::vector<Tensor> grads;
    for (Tensor p : params) {  // copy shares the node; set_values mutates the leaf buffer
        std::vector<double> v = p.values();
        std::vector<double> g(v.size());
        for (size_t i = 0; i < v.size(); ++i) {
            double orig = v[i];
            v[i] = orig + h;
            p.set_values(v);
            double fp = f();
            v[i] = orig - h;
            p.set_values(v);
            double fm = f();
            v[i] = orig;
            g[i] = (fp - fm) / (2.0 * h);
        }
        p.set_values(v);
        grads.push_back(Tensor::from_data(p.shape(), std::move(g)));
    }
    return grads;
}

}  // namespace metaptq
