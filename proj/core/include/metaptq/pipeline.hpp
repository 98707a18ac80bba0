#pragma once

#include "metaptq/config.hpp"
#include "metaptq/data.hpp"
#include "metaptq/meta.hpp"
#include "metaptq/metrics.hpp"
#include "metaptq/nets.hpp"
#include "metaptq/optim.hpp"

namespace metaptq {

struct EvalResult {
    double train_acc = 0.0;
    double test_acc = 0.0;
    double gap() const { return train_acc - test_acc; }
};

// Shared per-config state: the dataset split and the trained full-precision
// model. One context serves many quantization runs (different seeds and
// augmentation modes reuse the same teacher).
struct RunContext {
    RunConfig cfg;
    Dataset train, test;
    BlockModel fp;
    FpTrainResult fp_result;
};

RunContext prepare_run(const RunConfig& cfg);

QuantSpec quant_spec_from_config(const RunConfig& cfg);

// ---- deterministic augmentation cores ----

Tensor flip_horizontal(const Tensor& x);
Tensor rotate90(const Tensor& x);
Tensor adjust_brightness(const Tensor& x, const std::vector<double>& delta);   // per image
Tensor adjust_contrast(const Tensor& x, const std::vector<double>& factor);    // per image
// Convex blend of each image with its permuted partner; lam = 1 is identity.
Tensor mixup_pairs(const Tensor& x, const std::vector<int64_t>& perm, double lam);
// Box paste from the permuted partner; box side = round(size * sqrt(1-lam)),
// so lam = 1 is identity.
Tensor cutmix_pairs(const Tensor& x, const std::vector<int64_t>& perm, double lam, int64_t cx,
                    int64_t cy);

// Seeded wrapper over the cores; mode must be a non-meta augmentation.
Tensor apply_classic_augment(const std::string& mode, const Tensor& x, uint64_t seed);

// Concatenate image stacks along the batch dimension.
Tensor concat_batch(const std::vector<Tensor>& parts);

// ---- phases ----

// Fits the transformation toward the identity on calibration batches.
// Returns the final mean absolute deviation of T(x) from x.
double warm_up_transform(TransformNet& t, const Tensor& calib, const RunConfig& cfg,
                         uint64_t run_seed);

// Meta phase for block l: alternating simulated quantization steps and
// transformation updates through the unrolled step.
void run_meta_phase(const RunContext& ctx, QuantizedModel& qm, int64_t l, TransformNet& t,
                    Adam& t_opt, const Tensor& calib, uint64_t run_seed);

// Quantization phase for block l on a fixed pool of (possibly augmented)
// calibration images.
void run_quant_phase(const RunContext& ctx, QuantizedModel& qm, int64_t l, const Tensor& pool,
                     uint64_t run_seed);

// Teacher activations after blocks 1..l of the full-precision model.
Tensor fp_block_activation(const BlockModel& fp, int64_t l, const Tensor& x);

struct PtqRunResult {
    EvalResult eval;
    double warm_up_err = -1.0;  // < 0 when no transformation was trained
};

// Full post-training quantization for one augmentation mode. Modes:
// none | flip | rotate | brightness | contrast | mixup | cutmix |
// metaaug | metaaug+mixup | metaaug+cutmix.
PtqRunResult run_ptq(const RunContext& ctx, QuantizedModel& qm, const std::string& mode,
                     uint64_t run_seed);

// Batched top-1 evaluation; qm = nullptr evaluates the full-precision
// model. Fans out over the METAPTQ_THREADS environment variable.
EvalResult evaluate_model(const RunContext& ctx, const QuantizedModel* qm);

struct SweepResult {
    MetricsTable runs;     // one row per (mode, seed)
    MetricsTable summary;  // one row per mode: means over seeds
};

SweepResult sweep_augmentations(const RunContext& ctx, const std::vector<std::string>& modes,
                                const std::vector<uint64_t>& seeds);

}  // namespace metaptq
