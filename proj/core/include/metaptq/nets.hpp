#pragma once

#include <string>
#include <utility>
#include <vector>

#include "metaptq/quant.hpp"
#include "metaptq/tensor.hpp"

namespace metaptq {

struct Conv2d {
    Tensor w;  // [O,C,kh,kw]
    Tensor b;  // [O]
    int64_t pad = 1;
    Tensor forward(const Tensor& x) const;
    Tensor forward_with_weight(const Tensor& x, const Tensor& w_used) const;
};

// Batch normalization with frozen-statistics mode for PTQ.
struct BatchNorm {
    Tensor gamma, beta;              // leaves, [C]
    Tensor running_mean, running_var;  // non-grad leaves, [C]
    double momentum = 0.1;
    double eps = 1e-5;
    Tensor forward(const Tensor& x, bool training) const;
};

struct Linear {
    Tensor w;  // [in, out]
    Tensor b;  // [out]
    Tensor forward(const Tensor& x) const;
    Tensor forward_with_weight(const Tensor& x, const Tensor& w_used) const;
};

// conv-bn-relu-conv-bn + skip, optional 2x downsample at entry.
struct ResBlock {
    Conv2d conv1, conv2;
    BatchNorm bn1, bn2;
    bool has_proj = false;
    Conv2d proj;  // 1x1, present when channel count changes
    bool pool = false;
    Tensor forward(const Tensor& x, bool training) const;
};

struct ArchConfig {
    int64_t input_size = 32;
    int64_t in_channels = 3;
    std::vector<int64_t> channels = {8, 16, 16};  // one entry per block
    int64_t classes = 10;
};

// Full-precision classifier split into tap-able blocks.
struct BlockModel {
    ArchConfig arch;
    std::vector<ResBlock> blocks;
    Linear head;

    int64_t num_blocks() const { return static_cast<int64_t>(blocks.size()); }
    Tensor forward(const Tensor& x, bool training = false) const;
    // A^l for 1-based block index l.
    Tensor forward_block(int64_t l, const Tensor& x_in, bool training = false) const;
    // Global average pool of the last block output.
    Tensor pooled_features(const Tensor& block_out) const;
    Tensor head_forward(const Tensor& features) const;

    std::vector<Tensor> params() const;
    std::vector<std::pair<std::string, Tensor>> named_tensors() const;
};

BlockModel build_tiny_model(const ArchConfig& arch, uint64_t seed);
// Closed-form parameter count for the same construction.
int64_t tiny_model_param_count(const ArchConfig& arch);

struct FpTrainConfig {
    int epochs = 10;
    int64_t batch = 64;
    double lr = 1e-3;
    uint64_t seed = 0;
    double target_acc = 0.90;
};

struct FpTrainResult {
    double train_acc = 0.0;
    bool converged = false;
};

// Trains in place with Adam + cross-entropy and freezes normalization
// statistics afterwards. Non-convergence is reported via the result, not
// hidden.
FpTrainResult train_fp_model(BlockModel& m, const Tensor& images, const std::vector<int>& labels,
                             const FpTrainConfig& cfg);

Tensor cross_entropy(const Tensor& logits, const std::vector<int>& labels);
double top1_accuracy(const Tensor& logits, const std::vector<int>& labels);
Tensor gather_images(const Tensor& images, const std::vector<int64_t>& idx);

// ---- quantized twin ----

struct QuantSpec {
    int w_bits = 4;
    int a_bits = 4;
    bool eight_bit_edges = true;  // first conv and head weights at 8 bits
    bool star = false;            // second layer's input activation at 8 bits
    bool per_channel = false;
};

struct LayerQuant {
    QuantParams wq;
    ActQuantState aq;
    bool quant_weight = false;
    bool quant_act = false;
};

struct BlockQuantState {
    std::vector<LayerQuant> layers;  // conv1, conv2, then proj when present
    bool quantized = false;          // set after the block's quant phase
};

// Substitute parameter set for one block, in block_param_leaves order.
struct BlockParamSet {
    std::vector<Tensor> tensors;
};

struct QuantizedModel {
    const BlockModel* fp = nullptr;
    QuantSpec spec;
    std::vector<BlockQuantState> blocks;
    LayerQuant head;
    bool head_quantized = false;

    // Forward using quantizers for blocks 1..upto (and the head if
    // head_quantized), full precision beyond. upto = -1 means all
    // quantized blocks.
    Tensor forward(const Tensor& x, int64_t upto = -1) const;
    // Input to block l under the quantized prefix 1..l-1.
    Tensor forward_prefix(int64_t l, const Tensor& x) const;
    // A^l_Q given the block input.
    Tensor forward_block(int64_t l, const Tensor& x_in) const;
    Tensor forward_block_with(int64_t l, const Tensor& x_in, const BlockParamSet& ps) const;
    // Full forward with block l's parameters substituted (validation of an
    // inner-step candidate): prefix quantized, block l from ps, suffix FP.
    Tensor forward_with_block_override(const Tensor& x, int64_t l, const BlockParamSet& ps) const;

    std::vector<std::pair<std::string, Tensor>> named_tensors() const;
};

QuantizedModel build_quantized_model(const BlockModel& fp, const QuantSpec& spec);

// Current learnable leaves of block l (weight scales, rounding vars,
// initialized activation scales), in a fixed order.
BlockParamSet block_param_leaves(const QuantizedModel& qm, int64_t l);
// LSQ scale init for the activation sites of block l from its prefix input.
void init_block_act_scales(QuantizedModel& qm, int64_t l, const Tensor& calib_batch);
// Harden block l's rounding vars and mark it quantized.
void finalize_block(QuantizedModel& qm, int64_t l);
// Nearest-rounding 8-bit quantization of the head weight (no learning) and
// activation scale init for the head input from a representative batch.
void finalize_head(QuantizedModel& qm, const Tensor& calib_batch);

// Marks every quantization site as finalized and creates placeholder
// scale leaves, so a saved model's values can be loaded back into a
// freshly built twin.
void prepare_for_load(QuantizedModel& qm);

// ---- transformation network ----

// Two-stage encoder-decoder with skip connections; output in [0,1] with
// the input's shape. Spatial sizes must be divisible by 4.
struct TransformNet {
    Conv2d enc1, enc2, mid, dec2, dec1, out;
    Tensor forward(const Tensor& x) const;
    std::vector<Tensor> params() const;
    std::vector<std::pair<std::string, Tensor>> named_tensors() const;
};

TransformNet build_transform_net(int64_t in_channels, int64_t base_width, uint64_t seed);

}  // namespace metaptq
