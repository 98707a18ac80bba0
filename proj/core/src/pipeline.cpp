#include "metaptq/pipeline.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstdlib>
#include <numbers>
#include <optional>
#include <random>
#include <set>
#include <thread>

#include "metaptq/losses.hpp"

namespace metaptq {

namespace {

std::vector<int64_t> sample_batch(std::mt19937_64& rng, int64_t n, int64_t batch) {
    std::uniform_int_distribution<int64_t> pick(0, n - 1);
    std::vector<int64_t> idx(batch);
    for (auto& i : idx) i = pick(rng);
    return idx;
}

LossWeights weights_from_config(const RunConfig& cfg) {
    LossWeights w;
    w.lambda1 = cfg.lambda1;
    w.lambda2 = cfg.lambda2;
    w.lambda3 = cfg.resolved_lambda3();
    w.preserve_kind = preserve_kind_from_name(cfg.preserve);
    w.epsilon = cfg.epsilon;
    return w;
}

}  // namespace

QuantSpec quant_spec_from_config(const RunConfig& cfg) {
    QuantSpec spec;
    spec.w_bits = static_cast<int>(cfg.w_bits);
    spec.a_bits = static_cast<int>(cfg.a_bits);
    spec.eight_bit_edges = cfg.eight_bit_edges;
    spec.star = cfg.star;
    spec.per_channel = cfg.per_channel;
    return spec;
}

RunContext prepare_run(const RunConfig& cfg) {
    RunContext ctx;
    ctx.cfg = cfg;
    Dataset full = make_dataset(cfg.dataset, cfg.per_class, cfg.classes, cfg.image_size,
                                cfg.channels, cfg.seed);
    SplitIdx split = split_indices(full.size(), cfg.test_frac, cfg.seed);
    ctx.train = subset(full, split.train);
    ctx.test = subset(full, split.test);
    ArchConfig arch;
    arch.input_size = cfg.image_size;
    arch.in_channels = cfg.channels;
    arch.channels = cfg.arch_channels;
    arch.classes = cfg.classes;
    ctx.fp = build_tiny_model(arch, stream_seed(cfg.seed, "fp.init", 0));
    FpTrainConfig tc;
    tc.epochs = static_cast<int>(cfg.fp_epochs);
    tc.lr = cfg.fp_lr;
    tc.seed = stream_seed(cfg.seed, "fp.train", 0);
    tc.target_acc = cfg.fp_target_acc;
    tc.batch = std::min<int64_t>(32, ctx.train.size());
    ctx.fp_result = train_fp_model(ctx.fp, ctx.train.images, ctx.train.labels, tc);
    return ctx;
}

// ---- augmentation cores ----

Tensor flip_horizontal(const Tensor& x) {
    const Shape& s = x.shape();
    int64_t n = s[0], c = s[1], h = s[2], w = s[3];
    const auto& v = x.values();
    std::vector<double> out(v.size());
    for (int64_t i = 0; i < n * c * h; ++i) {
        for (int64_t j = 0; j < w; ++j) out[i * w + j] = v[i * w + (w - 1 - j)];
    }
    return Tensor::from_data(s, std::move(out));
}

Tensor rotate90(const Tensor& x) {
    const Shape& s = x.shape();
    if (s[2] != s[3]) throw DataError("rotate90: images must be square");
    int64_t n = s[0], c = s[1], h = s[2];
    const auto& v = x.values();
    std::vector<double> out(v.size());
    for (int64_t i = 0; i < n * c; ++i) {
        const double* src = v.data() + i * h * h;
        double* dst = out.data() + i * h * h;
        for (int64_t y = 0; y < h; ++y) {
            for (int64_t xx = 0; xx < h; ++xx) dst[y * h + xx] = src[xx * h + (h - 1 - y)];
        }
    }
    return Tensor::from_data(s, std::move(out));
}

Tensor adjust_brightness(const Tensor& x, const std::vector<double>& delta) {
    const Shape& s = x.shape();
    if (static_cast<int64_t>(delta.size()) != s[0]) throw DataError("brightness: delta per image");
    int64_t per = x.numel() / s[0];
    const auto& v = x.values();
    std::vector<double> out(v.size());
    for (int64_t i = 0; i < s[0]; ++i) {
        for (int64_t j = 0; j < per; ++j) {
            out[i * per + j] = std::clamp(v[i * per + j] + delta[i], 0.0, 1.0);
        }
    }
    return Tensor::from_data(s, std::move(out));
}

Tensor adjust_contrast(const Tensor& x, const std::vector<double>& factor) {
    const Shape& s = x.shape();
    if (static_cast<int64_t>(factor.size()) != s[0]) throw DataError("contrast: factor per image");
    int64_t per = x.numel() / s[0];
    const auto& v = x.values();
    std::vector<double> out(v.size());
    for (int64_t i = 0; i < s[0]; ++i) {
        double mean = 0.0;
        for (int64_t j = 0; j < per; ++j) mean += v[i * per + j];
        mean /= static_cast<double>(per);
        for (int64_t j = 0; j < per; ++j) {
            // written as x + (f-1)(x - mean) so factor 1 is a bit-exact no-op
            double xv = v[i * per + j];
            out[i * per + j] = std::clamp(xv + (factor[i] - 1.0) * (xv - mean), 0.0, 1.0);
        }
    }
    return Tensor::from_data(s, std::move(out));
}

Tensor mixup_pairs(const Tensor& x, const std::vector<int64_t>& perm, double lam) {
    const Shape& s = x.shape();
    if (static_cast<int64_t>(perm.size()) != s[0]) throw DataError("mixup: permutation size");
    if (lam < 0.0 || lam > 1.0) throw DataError("mixup: lambda must be in [0,1]");
    int64_t per = x.numel() / s[0];
    const auto& v = x.values();
    std::vector<double> out(v.size());
    for (int64_t i = 0; i < s[0]; ++i) {
        int64_t p = perm[i];
        if (p < 0 || p >= s[0]) throw DataError("mixup: permutation index out of range");
        for (int64_t j = 0; j < per; ++j) {
            out[i * per + j] = lam * v[i * per + j] + (1.0 - lam) * v[p * per + j];
        }
    }
    return Tensor::from_data(s, std::move(out));
}

Tensor cutmix_pairs(const Tensor& x, const std::vector<int64_t>& perm, double lam, int64_t cx,
                    int64_t cy) {
    const Shape& s = x.shape();
    if (static_cast<int64_t>(perm.size()) != s[0]) throw DataError("cutmix: permutation size");
    if (lam < 0.0 || lam > 1.0) throw DataError("cutmix: lambda must be in [0,1]");
    int64_t n = s[0], c = s[1], h = s[2], w = s[3];
    int64_t side_h = static_cast<int64_t>(std::llround(h * std::sqrt(1.0 - lam)));
    int64_t side_w = static_cast<int64_t>(std::llround(w * std::sqrt(1.0 - lam)));
    int64_t y0 = std::clamp<int64_t>(cy - side_h / 2, 0, h);
    int64_t y1 = std::clamp<int64_t>(cy + (side_h + 1) / 2, 0, h);
    int64_t x0 = std::clamp<int64_t>(cx - side_w / 2, 0, w);
    int64_t x1 = std::clamp<int64_t>(cx + (side_w + 1) / 2, 0, w);
    std::vector<double> out = x.values();
    const auto& v = x.values();
    for (int64_t i = 0; i < n; ++i) {
        int64_t p = perm[i];
        if (p < 0 || p >= n) throw DataError("cutmix: permutation index out of range");
        for (int64_t ch = 0; ch < c; ++ch) {
            for (int64_t y = y0; y < y1; ++y) {
                for (int64_t xx = x0; xx < x1; ++xx) {
                    int64_t off = (ch * h + y) * w + xx;
                    out[i * c * h * w + off] = v[p * c * h * w + off];
                }
            }
        }
    }
    return Tensor::from_data(s, std::move(out));
}

Tensor apply_classic_augment(const std::string& mode, const Tensor& x, uint64_t seed) {
    int64_t n = x.shape()[0];
    std::mt19937_64 rng(seed);
    if (mode == "flip") return flip_horizontal(x);
    if (mode == "rotate") return rotate90(x);
    if (mode == "brightness") {
        std::uniform_real_distribution<double> d(-0.2, 0.2);
        std::vector<double> delta(n);
        for (auto& e : delta) e = d(rng);
        return adjust_brightness(x, delta);
    }
    if (mode == "contrast") {
        std::uniform_real_distribution<double> d(0.7, 1.3);
        std::vector<double> factor(n);
        for (auto& e : factor) e = d(rng);
        return adjust_contrast(x, factor);
    }
    std::vector<int64_t> perm(n);
    for (int64_t i = 0; i < n; ++i) perm[i] = i;
    std::shuffle(perm.begin(), perm.end(), rng);
    if (mode == "mixup") {
        std::gamma_distribution<double> g(0.4, 1.0);
        double a = g(rng), b = g(rng);
        double lam = (a + b) > 0.0 ? a / (a + b) : 0.5;  // Beta(0.4, 0.4)
        return mixup_pairs(x, perm, lam);
    }
    if (mode == "cutmix") {
        std::uniform_real_distribution<double> u(0.0, 1.0);
        double lam = u(rng);
        std::uniform_int_distribution<int64_t> py(0, x.shape()[2] - 1);
        std::uniform_int_distribution<int64_t> px(0, x.shape()[3] - 1);
        int64_t cy = py(rng), cx = px(rng);
        return cutmix_pairs(x, perm, lam, cx, cy);
    }
    throw ConfigError("unknown classic augmentation '" + mode + "'");
}

Tensor concat_batch(const std::vector<Tensor>& parts) {
    if (parts.empty()) throw DataError("concat_batch: no parts");
    Shape s = parts[0].shape();
    int64_t total = 0;
    std::vector<double> vals;
    for (const auto& p : parts) {
        Shape ps = p.shape();
        for (size_t d = 1; d < s.size(); ++d) {
            if (ps[d] != s[d]) throw DataError("concat_batch: shape mismatch");
        }
        total += ps[0];
        vals.insert(vals.end(), p.values().begin(), p.values().end());
    }
    s[0] = total;
    return Tensor::from_data(std::move(s), std::move(vals));
}

// ---- phases ----

Tensor fp_block_activation(const BlockModel& fp, int64_t l, const Tensor& x) {
    Tensor h = x;
    for (int64_t j = 1; j <= l; ++j) h = fp.blocks[j - 1].forward(h, false);
    return h;
}

double warm_up_transform(TransformNet& t, const Tensor& calib, const RunConfig& cfg,
                         uint64_t run_seed) {
    Adam opt(t.params(), 5e-3);
    std::mt19937_64 rng(stream_seed(run_seed, "warmup", 0));
    int64_t n = calib.shape()[0];
    int64_t batch = std::min<int64_t>(cfg.batch, n);
    for (int64_t it = 0; it < cfg.warmup_iters; ++it) {
        Tensor x = gather_images(calib, sample_batch(rng, n, batch));
        Tensor d = sub(t.forward(x), x);
        Tensor loss = mean_all(mul(d, d));
        opt.step(grad(loss, t.params()).grads);
    }
    NoGradGuard ng;
    return mean_all(abs(sub(t.forward(calib), calib))).item();
}

void run_meta_phase(const RunContext& ctx, QuantizedModel& qm, int64_t l, TransformNet& t,
                    Adam& t_opt, const Tensor& calib, uint64_t run_seed) {
    const RunConfig& cfg = ctx.cfg;
    BlockParamSet leaves = block_param_leaves(qm, l);
    if (leaves.tensors.empty()) return;  // nothing to simulate a step on
    LossWeights w = weights_from_config(cfg);
    InnerOptState inner;
    inner.kind = cfg.inner_opt == "adam" ? InnerOptKind::Adam : InnerOptKind::Sgd;
    inner.eta = cfg.inner_eta;
    std::mt19937_64 rng_train(stream_seed(run_seed, "meta.train", l));
    std::mt19937_64 rng_val(stream_seed(run_seed, "meta.val", l));
    int64_t n = calib.shape()[0];
    int64_t batch = std::min<int64_t>(cfg.batch, n);
    std::vector<Tensor> t_params = t.params();
    for (int64_t it = 0; it < cfg.n_meta; ++it) {
        // simulated quantization step on transformed data
        Tensor x = gather_images(calib, sample_batch(rng_train, n, batch));
        Tensor tx = t.forward(x);
        Tensor a_fp = fp_block_activation(ctx.fp, l, tx);
        Tensor a_q = qm.forward_block(l, qm.forward_prefix(l, tx));
        Tensor train_loss = loss_block_recon(a_fp, a_q);
        std::vector<Tensor> theta_hat = inner_step(train_loss, leaves.tensors, inner);

        // validate the stepped parameters on untransformed data
        Tensor xv = gather_images(calib, sample_batch(rng_val, n, batch));
        Tensor txv = t.forward(xv);
        Tensor logits_ref;
        {
            NoGradGuard ng;
            logits_ref = ctx.fp.forward(xv, false);
        }
        Tensor logits_hat = qm.forward_with_block_override(xv, l, BlockParamSet{theta_hat});
        Tensor val = loss_val_kl(logits_ref, logits_hat);
        Tensor margin = loss_margin(xv, txv, w.epsilon);
        Tensor logits_gen = ctx.fp.forward(txv, false);
        Tensor preserve;
        switch (w.preserve_kind) {
            case PreserveKind::MSE: preserve = loss_mse_preserve(logits_ref, logits_gen); break;
            case PreserveKind::KL: preserve = loss_kl_preserve(logits_ref, logits_gen); break;
            case PreserveKind::DP:
                preserve = loss_dp(matrix_rows(logits_ref), matrix_rows(logits_gen));
                break;
        }
        Tensor total = loss_transform_total(val, margin, preserve, w);
        t_opt.step(grad(total, t_params).grads);
    }
}

void run_quant_phase(const RunContext& ctx, QuantizedModel& qm, int64_t l, const Tensor& pool,
                     uint64_t run_seed) {
    const RunConfig& cfg = ctx.cfg;
    BlockParamSet leaves = block_param_leaves(qm, l);
    if (leaves.tensors.empty()) return;
    Tensor x_in, a_target;
    {
        NoGradGuard ng;  // the prefix is frozen for the whole phase
        x_in = qm.forward_prefix(l, pool);
        a_target = fp_block_activation(ctx.fp, l, pool);
    }
    Adam opt(leaves.tensors, cfg.quant_lr);
    {
        // scale leaves take steps proportional to their own magnitude;
        // Adam's unit-step behavior would otherwise move a ~1e-2 scale by
        // ~lr per iteration and destroy the initialization
        std::set<const detail::Node*> scale_nodes;
        for (const auto& lq : qm.blocks[l - 1].layers) {
            if (lq.quant_weight) scale_nodes.insert(lq.wq.scale.node());
            if (lq.quant_act && lq.aq.initialized) scale_nodes.insert(lq.aq.scale.node());
        }
        std::vector<double> lrs;
        for (const auto& p : leaves.tensors) {
            if (scale_nodes.count(p.node())) {
                double mean_abs = 0.0;
                for (double v : p.values()) mean_abs += std::abs(v);
                mean_abs /= static_cast<double>(p.numel());
                lrs.push_back(cfg.quant_lr * std::max(mean_abs, 1e-8));
            } else {
                lrs.push_back(cfg.quant_lr);
            }
        }
        opt.set_param_lrs(std::move(lrs));
    }
    std::mt19937_64 rng(stream_seed(run_seed, "quant", l));
    int64_t n = pool.shape()[0];
    int64_t batch = std::min<int64_t>(cfg.batch, n);
    BlockQuantState& bq = qm.blocks[l - 1];
    for (int64_t it = 0; it < cfg.n_quant; ++it) {
        double beta =
            2.0 + 16.0 * 0.5 *
                      (1.0 + std::cos(std::numbers::pi * static_cast<double>(it) /
                                      static_cast<double>(cfg.n_quant)));
        std::vector<int64_t> idx = sample_batch(rng, n, batch);
        Tensor a_q = qm.forward_block(l, gather_images(x_in, idx));
        Tensor loss = loss_block_recon(gather_images(a_target, idx), a_q);
        for (const auto& lq : bq.layers) {
            if (lq.quant_weight && !lq.wq.hardened) {
                loss = add(loss, scale(rounding_regularizer(lq.wq.v, beta), cfg.round_reg_weight));
            }
        }
        opt.step(grad(loss, leaves.tensors).grads);
        for (auto& lq : bq.layers) {
            if (lq.quant_weight) clamp_scale_floor(lq.wq.scale);
            if (lq.quant_act && lq.aq.initialized) clamp_scale_floor(lq.aq.scale);
        }
    }
}

PtqRunResult run_ptq(const RunContext& ctx, QuantizedModel& qm, const std::string& mode,
                     uint64_t run_seed) {
    const RunConfig& cfg = ctx.cfg;
    const auto& modes = known_augment_modes();
    if (std::find(modes.begin(), modes.end(), mode) == modes.end()) {
        throw ConfigError("unknown augment mode '" + mode + "'");
    }
    bool wants_meta = mode.rfind("metaaug", 0) == 0;
    std::string classic;
    if (wants_meta) {
        auto plus = mode.find('+');
        if (plus != std::string::npos) classic = mode.substr(plus + 1);
    } else if (mode != "none") {
        classic = mode;
    }
    bool meta_active = wants_meta && cfg.n_meta > 0;

    Tensor calib = sample_calibration(ctx.train.images, std::min(cfg.calib_size, ctx.train.size()),
                                      run_seed);
    PtqRunResult res;
    std::optional<TransformNet> t;
    std::optional<Adam> t_opt;
    if (meta_active) {
        t = build_transform_net(cfg.channels, cfg.t_base_width,
                                stream_seed(run_seed, "transform", 0));
        res.warm_up_err = warm_up_transform(*t, calib, cfg, run_seed);
        t_opt.emplace(t->params(), cfg.gamma);
    }
    for (int64_t l = 1; l <= ctx.fp.num_blocks(); ++l) {
        init_block_act_scales(qm, l, calib);
        if (meta_active) run_meta_phase(ctx, qm, l, *t, *t_opt, calib, run_seed);
        std::vector<Tensor> parts;
        if (meta_active) {
            NoGradGuard ng;
            parts.push_back(t->forward(calib));
        }
        if (!classic.empty()) {
            parts.push_back(
                apply_classic_augment(classic, calib, stream_seed(run_seed, "aug." + classic, l)));
        }
        parts.push_back(calib);
        Tensor pool = parts.size() == 1 ? calib : concat_batch(parts);
        run_quant_phase(ctx, qm, l, pool, run_seed);
        finalize_block(qm, l);
    }
    finalize_head(qm, calib);
    res.eval = evaluate_model(ctx, &qm);
    return res;
}

// ---- evaluation ----

namespace {

int64_t count_correct(const Tensor& logits, const std::vector<int>& labels) {
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
    return correct;
}

double eval_accuracy(const RunContext& ctx, const QuantizedModel* qm, const Dataset& d) {
    int64_t n = d.size();
    constexpr int64_t kChunk = 64;
    int64_t n_chunks = (n + kChunk - 1) / kChunk;
    int threads = 1;
    if (const char* env = std::getenv("METAPTQ_THREADS")) {
        threads = std::max(1, std::atoi(env));
    }
    threads = std::min<int>(threads, static_cast<int>(n_chunks));
    std::atomic<int64_t> next{0};
    std::atomic<int64_t> correct{0};
    auto worker = [&]() {
        NoGradGuard ng;
        for (;;) {
            int64_t c = next.fetch_add(1);
            if (c >= n_chunks) return;
            int64_t start = c * kChunk, stop = std::min(n, start + kChunk);
            std::vector<int64_t> idx;
            std::vector<int> labels;
            for (int64_t i = start; i < stop; ++i) {
                idx.push_back(i);
                labels.push_back(d.labels[i]);
            }
            Tensor x = gather_images(d.images, idx);
            Tensor logits = qm ? qm->forward(x) : ctx.fp.forward(x, false);
            correct += count_correct(logits, labels);
        }
    };
    if (threads <= 1) {
        worker();
    } else {
        std::vector<std::thread> pool;
        for (int i = 0; i < threads; ++i) pool.emplace_back(worker);
        for (auto& th : pool) th.join();
    }
    return static_cast<double>(correct.load()) / static_cast<double>(n);
}

}  // namespace

EvalResult evaluate_model(const RunContext& ctx, const QuantizedModel* qm) {
    EvalResult r;
    r.train_acc = eval_accuracy(ctx, qm, ctx.train);
    r.test_acc = eval_accuracy(ctx, qm, ctx.test);
    return r;
}

SweepResult sweep_augmentations(const RunContext& ctx, const std::vector<std::string>& modes,
                                const std::vector<uint64_t>& seeds) {
    if (modes.empty() || seeds.empty()) throw ConfigError("sweep: need modes and seeds");
    SweepResult out;
    out.runs.columns = {"seed", "train_acc", "test_acc", "gap"};
    out.summary.columns = {"mean_train_acc", "mean_test_acc", "mean_gap"};
    for (const auto& mode : modes) {
        double sum_train = 0.0, sum_test = 0.0;
        for (uint64_t seed : seeds) {
            QuantizedModel qm = build_quantized_model(ctx.fp, quant_spec_from_config(ctx.cfg));
            PtqRunResult r = run_ptq(ctx, qm, mode, seed);
            out.runs.add_row(mode, {static_cast<double>(seed), r.eval.train_acc, r.eval.test_acc,
                                    r.eval.gap()});
            sum_train += r.eval.train_acc;
            sum_test += r.eval.test_acc;
        }
        double k = static_cast<double>(seeds.size());
        out.summary.add_row(mode,
                            {sum_train / k, sum_test / k, (sum_train - sum_test) / k});
    }
    return out;
}

}  // namespace metaptq
