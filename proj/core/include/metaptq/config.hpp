#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "metaptq/errors.hpp"

namespace metaptq {

// Full run configuration. Loaded from strict JSON: every key must be known
// and well-typed, unknown keys are hard errors naming the key.
struct RunConfig {
    // data
    std::string dataset = "textures";  // textures | blobs
    int64_t per_class = 60;
    int64_t classes = 10;
    int64_t image_size = 32;
    int64_t channels = 3;
    double test_frac = 0.25;
    int64_t calib_size = 64;  // unlabeled calibration images drawn from train
    int64_t batch = 16;

    // full-precision model
    std::vector<int64_t> arch_channels = {8, 16, 16};
    int64_t fp_epochs = 15;
    double fp_lr = 2e-3;
    double fp_target_acc = 0.85;

    // quantization
    int64_t w_bits = 2;
    int64_t a_bits = 2;
    bool eight_bit_edges = true;
    bool star = false;
    bool per_channel = false;
    double quant_lr = 1e-3;
    double round_reg_weight = 0.01;

    // transformation network / meta phase
    int64_t t_base_width = 8;
    int64_t warmup_iters = 200;
    int64_t n_meta = 100;   // meta iterations per block
    int64_t n_quant = 800;  // quant iterations per block
    double gamma = 5e-4;    // transform learning rate
    double inner_eta = 1e-3;
    std::string inner_opt = "sgd";  // sgd | adam

    // transform losses
    std::string preserve = "kl";  // mse | kl | dp
    double lambda1 = 5.0;
    double lambda2 = 0.5;
    double lambda3 = -1.0;  // < 0 resolves to the per-kind default
    double epsilon = 0.1;

    // run
    uint64_t seed = 0;
    std::string augment = "metaaug";

    double resolved_lambda3() const;
    void validate() const;
};

// Named baseline presets. "desk" is the default small-footprint setup,
// "paper" uses the reference hyperparameters (much slower).
RunConfig preset_config(const std::string& preset);

RunConfig parse_config_json(const std::string& text, const std::string& preset);
RunConfig load_config_file(const std::string& path, const std::string& preset);

// Canonical serialized form (sorted keys, all fields explicit).
std::string config_to_json(const RunConfig& cfg);
uint64_t config_hash(const RunConfig& cfg);

const std::vector<std::string>& known_augment_modes();

}  // namespace metaptq
