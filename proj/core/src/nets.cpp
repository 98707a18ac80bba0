#include "metaptq/nets.hpp"

#include <algorithm>
#include <cmath>

#include "metaptq/optim.hpp"

namespace metaptq {

// ---- layers ----

Tensor Conv2d::forward(const Tensor& x) const { return forward_with_weight(x, w); }

Tensor Conv2d::forward_with_weight(const Tensor& x, const Tensor& w_used) const {
    Tensor y = conv2d(x, w_used, pad);
    return add(y, broadcast_channel(b, y.shape()[0], y.shape()[2], y.shape()[3]));
}

Tensor BatchNorm::forward(const Tensor& x, bool training) const {
    int64_t n = x.shape()[0], c = x.shape()[1], h = x.shape()[2], w = x.shape()[3];
    double count = static_cast<double>(n * h * w);
    Tensor mean_t, var_t;
    if (training) {
        mean_t = scale(channel_sum(x), 1.0 / count);
        Tensor centered = sub(x, broadcast_channel(mean_t, n, h, w));
        var_t = scale(channel_sum(mul(centered, centered)), 1.0 / count);
        // running statistics track detached batch moments
        std::vector<double> rm = running_mean.values();
        std::vector<double> rv = running_var.values();
        const auto& bm = mean_t.values();
        const auto& bv = var_t.values();
        for (int64_t i = 0; i < c; ++i) {
            rm[i] = (1.0 - momentum) * rm[i] + momentum * bm[i];
            rv[i] = (1.0 - momentum) * rv[i] + momentum * bv[i];
        }
        const_cast<Tensor&>(running_mean).set_values(rm);
        const_cast<Tensor&>(running_var).set_values(rv);
    } else {
        mean_t = running_mean;
        var_t = running_var;
    }
    Tensor inv_std = pow_const(add_scalar(var_t, eps), -0.5);
    Tensor xhat = mul(sub(x, broadcast_channel(mean_t, n, h, w)), broadcast_channel(inv_std, n, h, w));
    return add(mul(xhat, broadcast_channel(gamma, n, h, w)), broadcast_channel(beta, n, h, w));
}

Tensor Linear::forward(const Tensor& x) const { return forward_with_weight(x, w); }

Tensor Linear::forward_with_weight(const Tensor& x, const Tensor& w_used) const {
    Tensor y = matmul(x, w_used);
    return add(y, broadcast_rows(b, y.shape()[0]));
}

Tensor ResBlock::forward(const Tensor& x, bool training) const {
    Tensor xp = pool ? avg_pool2(x) : x;
    Tensor h = relu(bn1.forward(conv1.forward(xp), training));
    h = bn2.forward(conv2.forward(h), training);
    Tensor skip = has_proj ? proj.forward(xp) : xp;
    return relu(add(h, skip));
}

// ---- full-precision model ----

namespace {

Tensor global_avg_pool(const Tensor& x) {
    int64_t n = x.shape()[0], c = x.shape()[1], hw = x.shape()[2] * x.shape()[3];
    Tensor flat = reshape(x, {n * c, hw});
    return scale(reshape(sum_cols(flat), {n, c}), 1.0 / static_cast<double>(hw));
}

Conv2d make_conv(int64_t in_c, int64_t out_c, int64_t k, int64_t pad, std::mt19937_64& rng,
                 double init_scale_mul = 1.0) {
    double stddev = std::sqrt(2.0 / static_cast<double>(in_c * k * k)) * init_scale_mul;
    Conv2d c;
    c.w = Tensor::param({out_c, in_c, k, k}, Tensor::randn({out_c, in_c, k, k}, rng, stddev).values());
    c.b = Tensor::param({out_c}, std::vector<double>(out_c, 0.0));
    c.pad = pad;
    return c;
}

BatchNorm make_bn(int64_t c) {
    BatchNorm bn;
    bn.gamma = Tensor::param({c}, std::vector<double>(c, 1.0));
    bn.beta = Tensor::param({c}, std::vector<double>(c, 0.0));
    bn.running_mean = Tensor::from_data({c}, std::vector<double>(c, 0.0));
    bn.running_var = Tensor::from_data({c}, std::vector<double>(c, 1.0));
    return bn;
}

void collect_conv(std::vector<std::pair<std::string, Tensor>>& out, const std::string& prefix,
                  const Conv2d& c) {
    out.emplace_back(prefix + ".w", c.w);
    out.emplace_back(prefix + ".b", c.b);
}

void collect_bn(std::vector<std::pair<std::string, Tensor>>& out, const std::string& prefix,
                const BatchNorm& bn) {
    out.emplace_back(prefix + ".gamma", bn.gamma);
    out.emplace_back(prefix + ".beta", bn.beta);
    out.emplace_back(prefix + ".running_mean", bn.running_mean);
    out.emplace_back(prefix + ".running_var", bn.running_var);
}

}  // namespace

Tensor BlockModel::forward(const Tensor& x, bool training) const {
    Tensor h = x;
    for (const auto& b : blocks) h = b.forward(h, training);
    return head_forward(pooled_features(h));
}

Tensor BlockModel::forward_block(int64_t l, const Tensor& x_in, bool training) const {
    if (l < 1 || l > num_blocks()) {
        throw NumericError("forward_block: block index " + std::to_string(l) + " out of range");
    }
    return blocks[l - 1].forward(x_in, training);
}

Tensor BlockModel::pooled_features(const Tensor& block_out) const { return global_avg_pool(block_out); }

Tensor BlockModel::head_forward(const Tensor& features) const { return head.forward(features); }

std::vector<Tensor> BlockModel::params() const {
    std::vector<Tensor> out;
    for (const auto& b : blocks) {
        out.insert(out.end(), {b.conv1.w, b.conv1.b, b.bn1.gamma, b.bn1.beta, b.conv2.w, b.conv2.b,
                               b.bn2.gamma, b.bn2.beta});
        if (b.has_proj) out.insert(out.end(), {b.proj.w, b.proj.b});
    }
    out.insert(out.end(), {head.w, head.b});
    return out;
}

std::vector<std::pair<std::string, Tensor>> BlockModel::named_tensors() const {
    std::vector<std::pair<std::string, Tensor>> out;
    for (size_t i = 0; i < blocks.size(); ++i) {
        std::string p = "block" + std::to_string(i + 1);
        collect_conv(out, p + ".conv1", blocks[i].conv1);
        collect_bn(out, p + ".bn1", blocks[i].bn1);
        collect_conv(out, p + ".conv2", blocks[i].conv2);
        collect_bn(out, p + ".bn2", blocks[i].bn2);
        if (blocks[i].has_proj) collect_conv(out, p + ".proj", blocks[i].proj);
    }
    out.emplace_back("head.w", head.w);
    out.emplace_back("head.b", head.b);
    return out;
}

BlockModel build_tiny_model(const ArchConfig& arch, uint64_t seed) {
    if (arch.channels.empty() || arch.channels.size() > 4) {
        throw ConfigError("build_tiny_model: block count must be in [1,4]");
    }
    for (int64_t c : arch.channels) {
        if (c < 1 || c > 64) throw ConfigError("build_tiny_model: channels must be in [1,64]");
    }
    std::mt19937_64 rng(seed);
    BlockModel m;
    m.arch = arch;
    int64_t in_c = arch.in_channels;
    for (size_t i = 0; i < arch.channels.size(); ++i) {
        int64_t out_c = arch.channels[i];
        ResBlock b;
        b.pool = i > 0;
        b.conv1 = make_conv(in_c, out_c, 3, 1, rng);
        b.bn1 = make_bn(out_c);
        b.conv2 = make_conv(out_c, out_c, 3, 1, rng);
        b.bn2 = make_bn(out_c);
        b.has_proj = in_c != out_c;
        if (b.has_proj) b.proj = make_conv(in_c, out_c, 1, 0, rng);
        m.blocks.push_back(std::move(b));
        in_c = out_c;
    }
    double stddev = std::sqrt(2.0 / static_cast<double>(in_c));
    m.head.w = Tensor::param({in_c, arch.classes},
                             Tensor::randn({in_c, arch.classes}, rng, stddev).values());
    m.head.b = Tensor::param({arch.classes}, std::vector<double>(arch.classes, 0.0));
    return m;
}

int64_t tiny_model_param_count(const ArchConfig& arch) {
    int64_t total = 0;
    int64_t in_c = arch.in_channels;
    for (int64_t out_c : arch.channels) {
        total += out_c * in_c * 9 + out_c;   // conv1
        total += out_c * out_c * 9 + out_c;  // conv2
        total += 4 * out_c;                  // bn1/bn2 gamma+beta
        if (in_c != out_c) total += out_c * in_c + out_c;  // 1x1 proj
        in_c = out_c;
    }
    total += in_c * arch.classes + arch.classes;  // head
    return total;
}

// ---- training helpers ----

Tensor cross_entropy(const Tensor& logits, const std::vector<int>& labels) {
    int64_t n = logits.shape()[0], c = logits.shape()[1];
    if (static_cast<int64_t>(labels.size()) != n) throw NumericError("cross_entropy: label count mismatch");
    std::vector<double> onehot(n * c, 0.0);
    for (int64_t i = 0; i < n; ++i) {
        if (labels[i] < 0 || labels[i] >= c) throw DataError("cross_entropy: label out of range");
        onehot[i * c + labels[i]] = 1.0;
    }
    Tensor picked = sum_cols(mul(logits, Tensor::from_data({n, c}, std::move(onehot))));
    return mean_all(sub(logsumexp_rows(logits), picked));
}

double top1_accuracy(const Tensor& logits, const std::vector<int>& labels) {
    int64_t n = logits.shape()[0], c = logits.shape()[1];
    const auto& v = logits.values();
    int64_t correct = 0;
    for (int64_t i = 0; i < n; ++i) {
        int64_t best = 0;
        for (int64_t j = 1; j < c; ++j) {
            if (v[i * c + j] > v[i * c + best]) best = j;
        }
        if (best == labels[i]) ++correct;
    }
    return static_cast<double>(correct) / static_cast<double>(n);
}

Tensor gather_images(const Tensor& images, const std::vector<int64_t>& idx) {
    const Shape& s = images.shape();
    int64_t per = images.numel() / s[0];
    std::vector<double> out;
    out.reserve(idx.size() * per);
    const auto& v = images.values();
    for (int64_t i : idx) {
        if (i < 0 || i >= s[0]) throw DataError("gather_images: index out of range");
        out.insert(out.end(), v.begin() + i * per, v.begin() + (i + 1) * per);
    }
    Shape os = s;
    os[0] = static_cast<int64_t>(idx.size());
    return Tensor::from_data(os, std::move(out));
}

FpTrainResult train_fp_model(BlockModel& m, const Tensor& images, const std::vector<int>& labels,
                             const FpTrainConfig& cfg) {
    int64_t n = images.shape()[0];
    auto params = m.params();
    Adam opt(params, cfg.lr);
    std::mt19937_64 rng(cfg.seed ^ 0x9e3779b97f4a7c15ULL);
    std::vector<int64_t> order(n);
    for (int64_t i = 0; i < n; ++i) order[i] = i;
    for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
        std::shuffle(order.begin(), order.end(), rng);
        for (int64_t start = 0; start + cfg.batch <= n; start += cfg.batch) {
            std::vector<int64_t> idx(order.begin() + start, order.begin() + start + cfg.batch);
            std::vector<int> batch_labels(idx.size());
            for (size_t k = 0; k < idx.size(); ++k) batch_labels[k] = labels[idx[k]];
            Tensor x = gather_images(images, idx);
            Tensor loss = cross_entropy(m.forward(x, /*training=*/true), batch_labels);
            opt.step(grad(loss, params).grads);
        }
    }
    // accuracy in eval mode (frozen statistics), batched
    FpTrainResult res;
    if (cfg.epochs > 0) {
        NoGradGuard ng;
        int64_t correct = 0;
        for (int64_t start = 0; start < n; start += 128) {
            int64_t stop = std::min(n, start + 128);
            std::vector<int64_t> idx;
            std::vector<int> batch_labels;
            for (int64_t i = start; i < stop; ++i) {
                idx.push_back(i);
                batch_labels.push_back(labels[i]);
            }
            Tensor logits = m.forward(gather_images(images, idx), false);
            correct += static_cast<int64_t>(std::llround(
                top1_accuracy(logits, batch_labels) * static_cast<double>(stop - start)));
        }
        res.train_acc = static_cast<double>(correct) / static_cast<double>(n);
    }
    res.converged = cfg.epochs == 0 || res.train_acc >= cfg.target_acc;
    return res;
}

// ---- quantized twin ----

namespace {

// Walks the learnable quantization leaves of a block in a fixed order,
// either collecting them or consuming substitutes.
struct ParamCursor {
    std::vector<Tensor>* collect = nullptr;
    const std::vector<Tensor>* subst = nullptr;
    size_t idx = 0;

    Tensor next(const Tensor& leaf) {
        if (collect) {
            collect->push_back(leaf);
            return leaf;
        }
        if (subst) {
            if (idx >= subst->size()) throw NumericError("block parameter substitution: too few tensors");
            return (*subst)[idx++];
        }
        return leaf;
    }
};

Tensor quant_conv_forward(const Conv2d& c, const LayerQuant& lq, const Tensor& x, ParamCursor* cur) {
    Tensor in = x;
    if (lq.quant_act && lq.aq.initialized) {
        Tensor s = cur ? cur->next(lq.aq.scale) : lq.aq.scale;
        in = lsq_quantize_act_with(in, s, lq.aq);
    }
    Tensor w_used = c.w;
    if (lq.quant_weight) {
        Tensor s = cur ? cur->next(lq.wq.scale) : lq.wq.scale;
        Tensor v = cur ? cur->next(lq.wq.v) : lq.wq.v;
        w_used = quantize_learned_with(c.w, s, v, lq.wq);
    }
    return c.forward_with_weight(in, w_used);
}

Tensor quant_block_forward(const QuantizedModel& qm, int64_t l, const Tensor& x, ParamCursor* cur) {
    const ResBlock& b = qm.fp->blocks[l - 1];
    const BlockQuantState& bq = qm.blocks[l - 1];
    Tensor xp = b.pool ? avg_pool2(x) : x;
    Tensor h = relu(b.bn1.forward(quant_conv_forward(b.conv1, bq.layers[0], xp, cur), false));
    h = b.bn2.forward(quant_conv_forward(b.conv2, bq.layers[1], h, cur), false);
    Tensor skip = b.has_proj ? quant_conv_forward(b.proj, bq.layers[2], xp, cur) : xp;
    return relu(add(h, skip));
}

}  // namespace

Tensor QuantizedModel::forward_prefix(int64_t l, const Tensor& x) const {
    Tensor h = x;
    for (int64_t j = 1; j < l; ++j) {
        h = blocks[j - 1].quantized ? quant_block_forward(*this, j, h, nullptr)
                                    : fp->blocks[j - 1].forward(h, false);
    }
    return h;
}

Tensor QuantizedModel::forward_block(int64_t l, const Tensor& x_in) const {
    if (l < 1 || l > fp->num_blocks()) throw NumericError("forward_block: block index out of range");
    return quant_block_forward(*this, l, x_in, nullptr);
}

Tensor QuantizedModel::forward_block_with(int64_t l, const Tensor& x_in,
                                          const BlockParamSet& ps) const {
    ParamCursor cur;
    cur.subst = &ps.tensors;
    Tensor out = quant_block_forward(*this, l, x_in, &cur);
    if (cur.idx != ps.tensors.size()) {
        throw NumericError("block parameter substitution: too many tensors");
    }
    return out;
}

Tensor QuantizedModel::forward(const Tensor& x, int64_t upto) const {
    int64_t limit = upto < 0 ? fp->num_blocks() : upto;
    Tensor h = x;
    for (int64_t l = 1; l <= fp->num_blocks(); ++l) {
        h = (l <= limit && blocks[l - 1].quantized) ? quant_block_forward(*this, l, h, nullptr)
                                                    : fp->blocks[l - 1].forward(h, false);
    }
    Tensor feats = fp->pooled_features(h);
    if (head_quantized) {
        Tensor in = feats;
        if (head.quant_act && head.aq.initialized) in = lsq_quantize_act(in, head.aq);
        Tensor w_used = head.quant_weight ? quantize_uniform(fp->head.w, head.wq) : fp->head.w;
        return fp->head.forward_with_weight(in, w_used);
    }
    return fp->head.forward(feats);
}

Tensor QuantizedModel::forward_with_block_override(const Tensor& x, int64_t l,
                                                   const BlockParamSet& ps) const {
    Tensor h = forward_prefix(l, x);
    h = forward_block_with(l, h, ps);
    for (int64_t j = l + 1; j <= fp->num_blocks(); ++j) h = fp->blocks[j - 1].forward(h, false);
    return fp->head.forward(fp->pooled_features(h));
}

std::vector<std::pair<std::string, Tensor>> QuantizedModel::named_tensors() const {
    std::vector<std::pair<std::string, Tensor>> out;
    for (size_t i = 0; i < blocks.size(); ++i) {
        for (size_t j = 0; j < blocks[i].layers.size(); ++j) {
            std::string p = "block" + std::to_string(i + 1) + ".layer" + std::to_string(j);
            const LayerQuant& lq = blocks[i].layers[j];
            if (lq.quant_weight) {
                out.emplace_back(p + ".w_scale", lq.wq.scale);
                out.emplace_back(p + ".w_v", lq.wq.v);
            }
            if (lq.quant_act && lq.aq.initialized) out.emplace_back(p + ".a_scale", lq.aq.scale);
        }
    }
    if (head_quantized && head.quant_weight) out.emplace_back("head.w_scale", head.wq.scale);
    if (head_quantized && head.quant_act && head.aq.initialized) {
        out.emplace_back("head.a_scale", head.aq.scale);
    }
    return out;
}

QuantizedModel build_quantized_model(const BlockModel& fp, const QuantSpec& spec) {
    QuantizedModel qm;
    qm.fp = &fp;
    qm.spec = spec;
    bool first_layer = true;
    for (size_t i = 0; i < fp.blocks.size(); ++i) {
        const ResBlock& b = fp.blocks[i];
        BlockQuantState bq;
        size_t n_layers = b.has_proj ? 3 : 2;
        for (size_t j = 0; j < n_layers; ++j) {
            const Conv2d& conv = j == 0 ? b.conv1 : (j == 1 ? b.conv2 : b.proj);
            LayerQuant lq;
            int wb = spec.w_bits;
            // the very first conv ("first layer") is pinned to 8 bits
            if (first_layer && (j == 0 || j == 2) && spec.eight_bit_edges) wb = std::max(wb, 8);
            lq.quant_weight = wb < 32;
            if (lq.quant_weight) {
                lq.wq = make_weight_quant(conv.w, wb, /*is_signed=*/true, spec.per_channel);
            }
            int ab = spec.a_bits;
            // the "*" protocol keeps the second layer's input at 8 bits
            if (i == 0 && j == 1 && spec.star) ab = std::max(ab, 8);
            // image input of the first block is not quantized
            bool input_is_image = i == 0 && (j == 0 || j == 2);
            lq.quant_act = ab < 32 && !input_is_image;
            lq.aq.bits = ab;
            lq.aq.is_signed = false;  // all activation sites are post-ReLU
            bq.layers.push_back(std::move(lq));
        }
        first_layer = false;
        qm.blocks.push_back(std::move(bq));
    }
    // head ("last layer"): 8-bit nearest-rounded weight, set in finalize_head
    qm.head.quant_weight = spec.w_bits < 32;
    qm.head.wq.bits = spec.eight_bit_edges ? 8 : spec.w_bits;
    qm.head.wq.is_signed = true;
    qm.head.quant_act = spec.a_bits < 32;
    qm.head.aq.bits = spec.a_bits;
    qm.head.aq.is_signed = false;
    return qm;
}

BlockParamSet block_param_leaves(const QuantizedModel& qm, int64_t l) {
    BlockParamSet ps;
    ParamCursor cur;
    cur.collect = &ps.tensors;
    // a throwaway forward on a minimal input would be wasteful; walk the
    // layers in the same order the forward does
    const ResBlock& b = qm.fp->blocks[l - 1];
    const BlockQuantState& bq = qm.blocks[l - 1];
    auto walk = [&](const LayerQuant& lq) {
        if (lq.quant_act && lq.aq.initialized) cur.next(lq.aq.scale);
        if (lq.quant_weight) {
            cur.next(lq.wq.scale);
            cur.next(lq.wq.v);
        }
    };
    walk(bq.layers[0]);
    walk(bq.layers[1]);
    if (b.has_proj) walk(bq.layers[2]);
    return ps;
}

void init_block_act_scales(QuantizedModel& qm, int64_t l, const Tensor& calib_batch) {
    NoGradGuard ng;
    const ResBlock& b = qm.fp->blocks[l - 1];
    BlockQuantState& bq = qm.blocks[l - 1];
    Tensor x_in = qm.forward_prefix(l, calib_batch);
    Tensor xp = b.pool ? avg_pool2(x_in) : x_in;
    if (bq.layers[0].quant_act) init_act_scale(bq.layers[0].aq, xp);
    if (b.has_proj && bq.layers[2].quant_act) init_act_scale(bq.layers[2].aq, xp);
    if (bq.layers[1].quant_act) {
        Tensor h = relu(b.bn1.forward(quant_conv_forward(b.conv1, bq.layers[0], xp, nullptr), false));
        init_act_scale(bq.layers[1].aq, h);
    }
}

void finalize_block(QuantizedModel& qm, int64_t l) {
    for (auto& lq : qm.blocks[l - 1].layers) {
        if (lq.quant_weight) harden_rounding(lq.wq);
    }
    qm.blocks[l - 1].quantized = true;
}

void finalize_head(QuantizedModel& qm, const Tensor& calib_batch) {
    if (qm.head.quant_weight) {
        double s = init_scale_search(qm.fp->head.w, qm.head.wq.bits, true);
        qm.head.wq.scale = Tensor::param(Shape{}, {s});
    }
    if (qm.head.quant_act) {
        NoGradGuard ng;
        Tensor h = qm.forward_prefix(qm.fp->num_blocks() + 1, calib_batch);
        init_act_scale(qm.head.aq, qm.fp->pooled_features(h));
    }
    qm.head_quantized = true;
}

void prepare_for_load(QuantizedModel& qm) {
    for (auto& bq : qm.blocks) {
        for (auto& lq : bq.layers) {
            if (lq.quant_weight) lq.wq.hardened = true;
            if (lq.quant_act && !lq.aq.initialized) {
                lq.aq.scale = Tensor::param(Shape{}, {1.0});
                lq.aq.initialized = true;
            }
        }
        bq.quantized = true;
    }
    if (qm.head.quant_weight && !qm.head.wq.scale.defined()) {
        qm.head.wq.scale = Tensor::param(Shape{}, {1.0});
    }
    if (qm.head.quant_act && !qm.head.aq.initialized) {
        qm.head.aq.scale = Tensor::param(Shape{}, {1.0});
        qm.head.aq.initialized = true;
    }
    qm.head_quantized = true;
}

// ---- transformation network ----

Tensor TransformNet::forward(const Tensor& x) const {
    if (x.shape().size() != 4 || x.shape()[2] % 4 != 0 || x.shape()[3] % 4 != 0) {
        throw NumericError("transform: spatial size must be divisible by 4, got " +
                           shape_str(x.shape()));
    }
    Tensor e1 = relu(enc1.forward(x));
    Tensor e2 = relu(enc2.forward(avg_pool2(e1)));
    Tensor m = relu(mid.forward(avg_pool2(e2)));
    Tensor d2 = relu(dec2.forward(concat_channels(upsample_nearest2(m), e2)));
    Tensor d1 = relu(dec1.forward(concat_channels(upsample_nearest2(d2), e1)));
    // residual head: the transform starts as a near-identity and learns a
    // bounded perturbation, clamped back to the valid image range
    return clamp(add(x, out.forward(d1)), 0.0, 1.0);
}

std::vector<Tensor> TransformNet::params() const {
    std::vector<Tensor> p;
    for (const Conv2d* c : {&enc1, &enc2, &mid, &dec2, &dec1, &out}) {
        p.push_back(c->w);
        p.push_back(c->b);
    }
    return p;
}

std::vector<std::pair<std::string, Tensor>> TransformNet::named_tensors() const {
    std::vector<std::pair<std::string, Tensor>> out_v;
    const char* names[] = {"enc1", "enc2", "mid", "dec2", "dec1", "out"};
    const Conv2d* layers[] = {&enc1, &enc2, &mid, &dec2, &dec1, &out};
    for (int i = 0; i < 6; ++i) collect_conv(out_v, names[i], *layers[i]);
    return out_v;
}

TransformNet build_transform_net(int64_t in_channels, int64_t base_width, uint64_t seed) {
    std::mt19937_64 rng(seed ^ 0xa0761d6478bd642fULL);
    TransformNet t;
    int64_t w = base_width;
    t.enc1 = make_conv(in_channels, w, 3, 1, rng);
    t.enc2 = make_conv(w, 2 * w, 3, 1, rng);
    t.mid = make_conv(2 * w, 2 * w, 3, 1, rng);
    t.dec2 = make_conv(4 * w, w, 3, 1, rng);
    t.dec1 = make_conv(2 * w, w, 3, 1, rng);
    // near-zero output head: sigmoid starts at 0.5 everywhere and warm-up
    // pulls it to the identity
    t.out = make_conv(w, in_channels, 3, 1, rng, 0.05);
    return t;
}

}  // namespace metaptq
