#include "metaptq/config.hpp"

#include <algorithm>
#include <fstream>
#include <sstream>

#include "json.hpp"
#include "metaptq/losses.hpp"

namespace metaptq {

using nlohmann::json;

double RunConfig::resolved_lambda3() const {
    if (lambda3 >= 0.0) return lambda3;
    return LossWeights::default_lambda3(preserve_kind_from_name(preserve));
}

void RunConfig::validate() const {
    auto require = [](bool ok, const std::string& msg) {
        if (!ok) throw ConfigError("config: " + msg);
    };
    require(dataset == "textures" || dataset == "blobs", "dataset must be textures|blobs");
    require(per_class >= 2, "per_class must be >= 2");
    require(classes >= 2 && classes <= 64, "classes must be in [2,64]");
    require(image_size >= 4 && image_size % 4 == 0, "image_size must be a positive multiple of 4");
    require(channels >= 1 && channels <= 8, "channels must be in [1,8]");
    require(test_frac > 0.0 && test_frac < 1.0, "test_frac must be in (0,1)");
    require(calib_size >= 2, "calib_size must be >= 2");
    require(batch >= 2 && batch <= calib_size, "batch must be in [2, calib_size]");
    require(!arch_channels.empty() && arch_channels.size() <= 4,
            "arch_channels must list 1..4 blocks");
    for (int64_t c : arch_channels) require(c >= 1 && c <= 64, "arch_channels entries must be in [1,64]");
    require(fp_epochs >= 0, "fp_epochs must be >= 0");
    require(fp_lr > 0.0, "fp_lr must be > 0");
    auto bits_ok = [](int64_t b) { return b == 2 || b == 3 || b == 4 || b == 8 || b == 32; };
    require(bits_ok(w_bits), "w_bits must be one of 2,3,4,8,32");
    require(bits_ok(a_bits), "a_bits must be one of 2,3,4,8,32");
    require(quant_lr > 0.0, "quant_lr must be > 0");
    require(round_reg_weight >= 0.0, "round_reg_weight must be >= 0");
    require(t_base_width >= 2 && t_base_width <= 32, "t_base_width must be in [2,32]");
    require(warmup_iters >= 0, "warmup_iters must be >= 0");
    require(n_meta >= 0, "n_meta must be >= 0");
    require(n_quant >= 1, "n_quant must be >= 1");
    require(gamma > 0.0, "gamma must be > 0");
    require(inner_eta > 0.0, "inner_eta must be > 0");
    require(inner_opt == "sgd" || inner_opt == "adam", "inner_opt must be sgd|adam");
    preserve_kind_from_name(preserve);  // throws on unknown
    require(lambda1 >= 0.0 && lambda2 >= 0.0, "lambda1/lambda2 must be >= 0");
    require(epsilon >= 0.0, "epsilon must be >= 0");
    const auto& modes = known_augment_modes();
    require(std::find(modes.begin(), modes.end(), augment) != modes.end(),
            "unknown augment mode '" + augment + "'");
}

const std::vector<std::string>& known_augment_modes() {
    static const std::vector<std::string> modes = {
        "none",   "flip",    "rotate",  "brightness",      "contrast",
        "mixup",  "cutmix",  "metaaug", "metaaug+mixup",   "metaaug+cutmix"};
    return modes;
}

RunConfig preset_config(const std::string& preset) {
    RunConfig cfg;
    if (preset == "desk" || preset.empty()) return cfg;
    if (preset == "paper") {
        cfg.batch = 32;
        cfg.n_meta = 500;
        cfg.n_quant = 20000;
        cfg.gamma = 5e-6;
        cfg.lambda1 = 5.0;
        cfg.lambda2 = 0.5;
        cfg.lambda3 = -1.0;
        cfg.epsilon = 0.1;
        cfg.calib_size = 256;
        cfg.per_class = 200;
        return cfg;
    }
    throw ConfigError("unknown preset '" + preset + "' (expected desk|paper)");
}

namespace {

int64_t as_int(const json& v, const std::string& key) {
    if (!v.is_number_integer() && !v.is_number_unsigned()) {
        throw ConfigError("config key '" + key + "' must be an integer");
    }
    return v.get<int64_t>();
}

double as_double(const json& v, const std::string& key) {
    if (!v.is_number()) throw ConfigError("config key '" + key + "' must be a number");
    return v.get<double>();
}

std::string as_string(const json& v, const std::string& key) {
    if (!v.is_string()) throw ConfigError("config key '" + key + "' must be a string");
    return v.get<std::string>();
}

bool as_bool(const json& v, const std::string& key) {
    if (!v.is_boolean()) throw ConfigError("config key '" + key + "' must be a boolean");
    return v.get<bool>();
}

}  // namespace

RunConfig parse_config_json(const std::string& text, const std::string& preset) {
    json j;
    try {
        j = json::parse(text);
    } catch (const json::parse_error& e) {
        throw ConfigError(std::string("config is not valid JSON: ") + e.what());
    }
    if (!j.is_object()) throw ConfigError("config root must be a JSON object");
    std::string chosen = preset;
    if (j.contains("preset")) chosen = as_string(j["preset"], "preset");
    RunConfig cfg = preset_config(chosen);
    for (const auto& [key, value] : j.items()) {
        if (key == "preset") continue;
        if (key == "dataset") cfg.dataset = as_string(value, key);
        else if (key == "per_class") cfg.per_class = as_int(value, key);
        else if (key == "classes") cfg.classes = as_int(value, key);
        else if (key == "image_size") cfg.image_size = as_int(value, key);
        else if (key == "channels") cfg.channels = as_int(value, key);
        else if (key == "test_frac") cfg.test_frac = as_double(value, key);
        else if (key == "calib_size") cfg.calib_size = as_int(value, key);
        else if (key == "batch") cfg.batch = as_int(value, key);
        else if (key == "arch_channels") {
            if (!value.is_array()) throw ConfigError("config key 'arch_channels' must be an array");
            cfg.arch_channels.clear();
            for (const auto& e : value) cfg.arch_channels.push_back(as_int(e, key));
        } else if (key == "fp_epochs") cfg.fp_epochs = as_int(value, key);
        else if (key == "fp_lr") cfg.fp_lr = as_double(value, key);
        else if (key == "fp_target_acc") cfg.fp_target_acc = as_double(value, key);
        else if (key == "w_bits") cfg.w_bits = as_int(value, key);
        else if (key == "a_bits") cfg.a_bits = as_int(value, key);
        else if (key == "eight_bit_edges") cfg.eight_bit_edges = as_bool(value, key);
        else if (key == "star") cfg.star = as_bool(value, key);
        else if (key == "per_channel") cfg.per_channel = as_bool(value, key);
        else if (key == "quant_lr") cfg.quant_lr = as_double(value, key);
        else if (key == "round_reg_weight") cfg.round_reg_weight = as_double(value, key);
        else if (key == "t_base_width") cfg.t_base_width = as_int(value, key);
        else if (key == "warmup_iters") cfg.warmup_iters = as_int(value, key);
        else if (key == "n_meta") cfg.n_meta = as_int(value, key);
        else if (key == "n_quant") cfg.n_quant = as_int(value, key);
        else if (key == "gamma") cfg.gamma = as_double(value, key);
        else if (key == "inner_eta") cfg.inner_eta = as_double(value, key);
        else if (key == "inner_opt") cfg.inner_opt = as_string(value, key);
        else if (key == "preserve") cfg.preserve = as_string(value, key);
        else if (key == "lambda1") cfg.lambda1 = as_double(value, key);
        else if (key == "lambda2") cfg.lambda2 = as_double(value, key);
        else if (key == "lambda3") cfg.lambda3 = as_double(value, key);
        else if (key == "epsilon") cfg.epsilon = as_double(value, key);
        else if (key == "seed") cfg.seed = static_cast<uint64_t>(as_int(value, key));
        else if (key == "augment") cfg.augment = as_string(value, key);
        else throw ConfigError("unknown config key '" + key + "'");
    }
    cfg.validate();
    return cfg;
}

RunConfig load_config_file(const std::string& path, const std::string& preset) {
    std::ifstream in(path);
    if (!in) throw IoError("cannot open config file '" + path + "'");
    std::ostringstream ss;
    ss << in.rdbuf();
    return parse_config_json(ss.str(), preset);
}

std::string config_to_json(const RunConfig& cfg) {
    json j;
    j["dataset"] = cfg.dataset;
    j["per_class"] = cfg.per_class;
    j["classes"] = cfg.classes;
    j["image_size"] = cfg.image_size;
    j["channels"] = cfg.channels;
    j["test_frac"] = cfg.test_frac;
    j["calib_size"] = cfg.calib_size;
    j["batch"] = cfg.batch;
    j["arch_channels"] = cfg.arch_channels;
    j["fp_epochs"] = cfg.fp_epochs;
    j["fp_lr"] = cfg.fp_lr;
    j["fp_target_acc"] = cfg.fp_target_acc;
    j["w_bits"] = cfg.w_bits;
    j["a_bits"] = cfg.a_bits;
    j["eight_bit_edges"] = cfg.eight_bit_edges;
    j["star"] = cfg.star;
    j["per_channel"] = cfg.per_channel;
    j["quant_lr"] = cfg.quant_lr;
    j["round_reg_weight"] = cfg.round_reg_weight;
    j["t_base_width"] = cfg.t_base_width;
    j["warmup_iters"] = cfg.warmup_iters;
    j["n_meta"] = cfg.n_meta;
    j["n_quant"] = cfg.n_quant;
    j["gamma"] = cfg.gamma;
    j["inner_eta"] = cfg.inner_eta;
    j["inner_opt"] = cfg.inner_opt;
    j["preserve"] = cfg.preserve;
    j["lambda1"] = cfg.lambda1;
    j["lambda2"] = cfg.lambda2;
    j["lambda3"] = cfg.lambda3;
    j["epsilon"] = cfg.epsilon;
    j["seed"] = cfg.seed;
    j["augment"] = cfg.augment;
    return j.dump();  // nlohmann objects iterate in sorted key order
}

uint64_t config_hash(const RunConfig& cfg) {
    std::string s = config_to_json(cfg);
    uint64_t h = 0xcbf29ce484222325ULL;
    for (char c : s) {
        h ^= static_cast<unsigned char>(c);
        h *= 0x100000001b3ULL;
    }
    return h;
}

}  // namespace metaptq
