#pragma once

#include "metaptq/tensor.hpp"

namespace metaptq {

// Integer clip bounds for a bit-width. Signed: [-2^(b-1), 2^(b-1)-1],
// unsigned: [0, 2^b-1].
int64_t quant_min(int bits, bool is_signed);
int64_t quant_max(int bits, bool is_signed);

// Per-weight quantization state: learnable scale and soft-rounding vars.
struct QuantParams {
    Tensor scale;  // leaf, shape {} (per-tensor) or {O} (per-output-channel)
    Tensor v;      // leaf, shaped like the weight
    int bits = 4;
    bool is_signed = true;
    bool per_channel = false;
    bool hardened = false;

    int64_t qmin() const { return quant_min(bits, is_signed); }
    int64_t qmax() const { return quant_max(bits, is_signed); }
};

// Learnable-scale activation quantization state.
struct ActQuantState {
    Tensor scale;  // leaf, shape {}
    int bits = 4;
    bool is_signed = false;
    bool initialized = false;
};

// Rectified sigmoid h(v) = clip(sigmoid(v) * 1.2 - 0.1, 0, 1).
Tensor h_rectified_sigmoid(const Tensor& v);

// Round-to-nearest uniform quantizer: s * clip(round(w/s), n, p).
Tensor quantize_uniform(const Tensor& w, const Tensor& scale, int bits, bool is_signed);
Tensor quantize_uniform(const Tensor& w, const QuantParams& q);

// Learnable rounding: s * clip(floor(w/s) + h(v), n, p). Differentiable in
// both s and v (straight-through on the floor).
Tensor quantize_learned(const Tensor& w, const QuantParams& q);
// Same quantizer with explicit (possibly derived, non-leaf) scale and v,
// used when an inner optimization step substitutes updated parameters.
Tensor quantize_learned_with(const Tensor& w, const Tensor& scale, const Tensor& v,
                             const QuantParams& q);

// Annealed push of h(v) toward {0,1}: sum(1 - |2 h(v) - 1|^beta).
Tensor rounding_regularizer(const Tensor& v, double beta);

// Forward identical to quantize_uniform; backward follows the learned-
// step-size convention with the scale gradient damped by
// 1/sqrt(numel(a) * p).
Tensor lsq_quantize_act(const Tensor& a, const ActQuantState& st);
Tensor lsq_quantize_act_with(const Tensor& a, const Tensor& scale, const ActQuantState& st);

// Coarse-to-fine MSE grid search for the initial weight scale. 100 coarse
// candidates over [max|w|/p * 0.5, max|w|/p * 1.2] plus 100 refined around
// the coarse argmin. All-zero weights get the documented floor of 1e-8.
double init_scale_search(const Tensor& w, int bits, bool is_signed);

// Builds the full quantization state for a weight: searched scale(s) and
// rounding vars set so that floor + h(v) reproduces round-to-nearest.
QuantParams make_weight_quant(const Tensor& w, int bits, bool is_signed, bool per_channel = false);

// LSQ-style scale init from a representative batch: 2*mean|a| / sqrt(p).
void init_act_scale(ActQuantState& st, const Tensor& sample);

// Snap h(v) to {0,1} by thresholding at 0.5; used at end-of-block.
void harden_rounding(QuantParams& q);

// Positivity clamp applied after optimizer steps on learned scales.
void clamp_scale_floor(Tensor& scale, double floor_value = 1e-8);

}  // namespace metaptq
