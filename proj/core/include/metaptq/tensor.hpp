#pragma once

#include <cstdint>
#include <functional>
#include <memory>
#include <random>
#include <vector>

#include "metaptq/errors.hpp"

namespace metaptq {

using Shape = std::vector<int64_t>;

int64_t shape_numel(const Shape& s);
bool shape_equal(const Shape& a, const Shape& b);
std::string shape_str(const Shape& s);

class Tensor;

namespace detail {

// A recorded node of the computation graph. Nodes are immutable once
// recorded except for leaf value buffers, which optimizers overwrite
// between recordings.
struct Node : std::enable_shared_from_this<Node> {
    Shape shape;
    std::vector<double> values;
    bool requires_grad = false;
    bool is_leaf = false;
    std::vector<Tensor> parents;
    // Given the node's own output and an incoming cotangent, produce one
    // cotangent per parent. Rules are written in terms of recorded tensor
    // ops, so differentiating a gradient graph is the same machinery.
    std::function<std::vector<Tensor>(const Tensor& out, const Tensor& cot)> vjp;
};

}  // namespace detail

// Dense row-major 64-bit tensor with reverse-mode autodiff. Value-type
// handle; copies share the underlying node.
class Tensor {
  public:
    Tensor() = default;

    static Tensor zeros(Shape shape);
    static Tensor full(Shape shape, double value);
    static Tensor scalar(double value);
    static Tensor from_data(Shape shape, std::vector<double> values);
    // Leaf with requires_grad set; the unit of optimization.
    static Tensor param(Shape shape, std::vector<double> values);
    static Tensor randn(Shape shape, std::mt19937_64& rng, double stddev = 1.0);
    static Tensor rand_uniform(Shape shape, std::mt19937_64& rng, double lo = 0.0, double hi = 1.0);

    bool defined() const { return node_ != nullptr; }
    const Shape& shape() const;
    int64_t numel() const;
    const std::vector<double>& values() const;
    double item() const;
    bool requires_grad() const;
    bool is_leaf() const;

    // Same values, no history.
    Tensor detach() const;

    // Leaf-only in-place overwrite (optimizer steps, FD probes).
    void set_values(const std::vector<double>& values);

    detail::Node* node() const { return node_.get(); }

    explicit Tensor(std::shared_ptr<detail::Node> n) : node_(std::move(n)) {}

  private:
    std::shared_ptr<detail::Node> node_;
};

// RAII guard: ops executed in scope record no history (pure evaluation).
class NoGradGuard {
  public:
    NoGradGuard();
    ~NoGradGuard();
    NoGradGuard(const NoGradGuard&) = delete;
    NoGradGuard& operator=(const NoGradGuard&) = delete;

  private:
    bool prev_;
};

bool grad_mode_enabled();

// Generic recorded op. Checks finiteness of the produced values and prunes
// history when grad mode is off or no parent carries grad.
Tensor make_op(Shape shape, std::vector<double> values, std::vector<Tensor> parents,
               std::function<std::vector<Tensor>(const Tensor&, const Tensor&)> vjp);

// ---- elementwise ----
Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
Tensor div(const Tensor& a, const Tensor& b);
Tensor neg(const Tensor& a);
Tensor scale(const Tensor& a, double c);
Tensor add_scalar(const Tensor& a, double c);
Tensor exp(const Tensor& a);
Tensor log(const Tensor& a);
Tensor reciprocal(const Tensor& a);
Tensor pow_const(const Tensor& a, double p);
Tensor sqrt(const Tensor& a);
Tensor abs(const Tensor& a);
Tensor sigmoid(const Tensor& a);
Tensor relu(const Tensor& a);
// Piecewise-constant sign as a detached tensor (sign(0) = 0).
Tensor detached_sign(const Tensor& a);
// clip to [lo, hi]; gradient is 1 strictly inside and at the boundary,
// 0 strictly outside.
Tensor clamp(const Tensor& a, double lo, double hi);
// Round half away from zero; straight-through gradient.
Tensor ste_round(const Tensor& a);
// Floor; straight-through gradient.
Tensor ste_floor(const Tensor& a);
// Identity forward, cotangent multiplied by g on the way back.
Tensor grad_scale(const Tensor& a, double g);

// ---- scalar-tensor broadcast ----
// s has a single element; broadcasts over x.
Tensor scalar_mul(const Tensor& s, const Tensor& x);

// ---- reductions / broadcasts ----
Tensor sum_all(const Tensor& a);
Tensor mean_all(const Tensor& a);
Tensor broadcast_full(const Tensor& s, Shape shape);  // scalar -> shape
Tensor sum_rows(const Tensor& a);                     // [N,C] -> [C]
Tensor broadcast_rows(const Tensor& v, int64_t n);    // [C], n -> [N,C]
Tensor sum_cols(const Tensor& a);                     // [N,C] -> [N]
Tensor broadcast_cols(const Tensor& v, int64_t c);    // [N], c -> [N,C]
Tensor channel_sum(const Tensor& a);                          // [N,C,H,W] -> [C]
Tensor broadcast_channel(const Tensor& v, int64_t n, int64_t h, int64_t w);  // [C] -> [N,C,H,W]
Tensor logsumexp_rows(const Tensor& a);  // [N,C] -> [N], shift-stable

// ---- linear algebra / structure ----
Tensor matmul(const Tensor& a, const Tensor& b);  // [M,K]x[K,N]
Tensor transpose2d(const Tensor& a);
Tensor reshape(const Tensor& a, Shape shape);
Tensor concat_channels(const Tensor& a, const Tensor& b);        // along dim 1
Tensor slice_channels(const Tensor& a, int64_t c0, int64_t c1);  // [c0,c1)

// ---- convolution family (stride 1, zero padding) ----
// Closed under differentiation: each rule is expressed via the other two.
Tensor conv2d(const Tensor& x, const Tensor& w, int64_t pad);
Tensor conv2d_input_grad(const Tensor& gy, const Tensor& w, int64_t pad);
Tensor conv2d_weight_grad(const Tensor& x, const Tensor& gy, int64_t pad, int64_t kh, int64_t kw);

Tensor avg_pool2(const Tensor& x);          // 2x2, stride 2
Tensor upsample_nearest2(const Tensor& x);  // 2x repeat

inline Tensor operator+(const Tensor& a, const Tensor& b) { return add(a, b); }
inline Tensor operator-(const Tensor& a, const Tensor& b) { return sub(a, b); }
inline Tensor operator*(const Tensor& a, const Tensor& b) { return mul(a, b); }
inline Tensor operator-(const Tensor& a) { return neg(a); }

// ---- differentiation ----
struct GradResult {
    std::vector<Tensor> grads;
    // True where the param did not participate in the loss graph; the
    // matching grad is a zero tensor rather than a silent omission.
    std::vector<bool> missing;
    bool any_missing() const;
};

// Reverse-mode gradient of a scalar loss. With create_graph the returned
// gradients are recorded tensors and can be differentiated again.
GradResult grad(const Tensor& loss, const std::vector<Tensor>& params, bool create_graph = false);

// Vector-Jacobian product of the inner gradient w.r.t. the outer params:
// d/d(outer) [ sum_i <grad(loss, inner)_i, cotangent_i> ].
std::vector<Tensor> grad_of_grad(const Tensor& loss, const std::vector<Tensor>& inner,
                                 const std::vector<Tensor>& outer,
                                 const std::vector<Tensor>& cotangent);

// Central-difference oracle. Evaluates f twice per coordinate; f must be
// deterministic (checked by a repeated baseline evaluation).
std::vector<Tensor> finite_diff_grad(const std::function<double()>& f,
                                     const std::vector<Tensor>& params, double h);

}  // namespace metaptq
