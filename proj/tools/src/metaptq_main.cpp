#include <cstdint>
#include <iomanip>
#include <iostream>
#include <sstream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "metaptq/checkpoint.hpp"
#include "metaptq/pipeline.hpp"

namespace {

using namespace metaptq;

constexpr int kExitConfig = 2;
constexpr int kExitData = 3;
constexpr int kExitNumeric = 4;
constexpr int kExitIo = 5;

struct CommonOpts {
    std::string config_path;
    std::string preset = "desk";
    int64_t seed = -1;  // < 0 keeps the config value
};

void add_common(CLI::App* cmd, CommonOpts& o) {
    cmd->add_option("--config", o.config_path, "JSON config file");
    cmd->add_option("--preset", o.preset, "Config preset: desk|paper")->capture_default_str();
    cmd->add_option("--seed", o.seed, "Override the run seed");
}

RunConfig resolve_config(const CommonOpts& o) {
    RunConfig cfg = o.config_path.empty() ? preset_config(o.preset)
                                          : load_config_file(o.config_path, o.preset);
    if (o.seed >= 0) cfg.seed = static_cast<uint64_t>(o.seed);
    cfg.validate();
    return cfg;
}

void parse_bits(const std::string& spec, RunConfig& cfg) {
    auto comma = spec.find(',');
    if (comma == std::string::npos) throw ConfigError("--bits expects W,A (e.g. 2,2)");
    try {
        cfg.w_bits = std::stoll(spec.substr(0, comma));
        cfg.a_bits = std::stoll(spec.substr(comma + 1));
    } catch (const std::exception&) {
        throw ConfigError("--bits expects two integers W,A");
    }
}

std::vector<std::string> split_csv(const std::string& s) {
    std::vector<std::string> out;
    std::istringstream ss(s);
    std::string item;
    while (std::getline(ss, item, ',')) {
        if (!item.empty()) out.push_back(item);
    }
    return out;
}

std::vector<std::pair<std::string, Tensor>> combined_tensors(const RunContext& ctx,
                                                             const QuantizedModel& qm) {
    std::vector<std::pair<std::string, Tensor>> named;
    for (auto& [name, t] : ctx.fp.named_tensors()) named.emplace_back("fp." + name, t);
    for (auto& [name, t] : qm.named_tensors()) named.emplace_back("q." + name, t);
    return named;
}

void print_eval(const std::string& tag, const EvalResult& e) {
    std::cout << std::fixed << std::setprecision(4) << tag << " train_acc=" << e.train_acc
              << " test_acc=" << e.test_acc << " gap=" << e.gap() << "\n";
}

int cmd_train_fp(const CommonOpts& common, const std::string& out_path) {
    RunConfig cfg = resolve_config(common);
    RunContext ctx = prepare_run(cfg);
    std::cout << std::fixed << std::setprecision(4)
              << "fp train_acc=" << ctx.fp_result.train_acc
              << " converged=" << (ctx.fp_result.converged ? "yes" : "no") << "\n";
    print_eval("fp", evaluate_model(ctx, nullptr));
    if (!out_path.empty()) {
        save_checkpoint(out_path, config_hash(cfg), ctx.fp.named_tensors());
        std::cout << "saved " << out_path << "\n";
    }
    return 0;
}

int cmd_quantize(const CommonOpts& common, const std::string& augment, const std::string& bits,
                 bool star, const std::string& out_path, const std::string& metrics_path) {
    RunConfig cfg = resolve_config(common);
    if (!augment.empty()) cfg.augment = augment;
    if (!bits.empty()) parse_bits(bits, cfg);
    if (star) cfg.star = true;
    cfg.validate();
    RunContext ctx = prepare_run(cfg);
    QuantizedModel qm = build_quantized_model(ctx.fp, quant_spec_from_config(cfg));
    PtqRunResult r = run_ptq(ctx, qm, cfg.augment, cfg.seed);
    EvalResult fp_eval = evaluate_model(ctx, nullptr);
    print_eval("fp", fp_eval);
    if (r.warm_up_err >= 0.0) {
        std::cout << std::setprecision(4) << "warm_up_err=" << r.warm_up_err << "\n";
    }
    print_eval("quant[" + cfg.augment + "]", r.eval);
    if (!out_path.empty()) {
        save_checkpoint(out_path, config_hash(cfg), combined_tensors(ctx, qm));
        std::cout << "saved " << out_path << "\n";
    }
    if (!metrics_path.empty()) {
        MetricsTable t;
        t.columns = {"w_bits", "a_bits", "train_acc", "test_acc", "gap"};
        t.add_row("fp", {32, 32, fp_eval.train_acc, fp_eval.test_acc, fp_eval.gap()});
        t.add_row(cfg.augment, {static_cast<double>(cfg.w_bits), static_cast<double>(cfg.a_bits),
                                r.eval.train_acc, r.eval.test_acc, r.eval.gap()});
        save_metrics(metrics_path, t);
        std::cout << "saved " << metrics_path << "\n";
    }
    return 0;
}

int cmd_sweep(const CommonOpts& common, const std::string& modes_csv, const std::string& seeds_csv,
              const std::string& out_path, const std::string& runs_path) {
    RunConfig cfg = resolve_config(common);
    RunContext ctx = prepare_run(cfg);
    std::vector<std::string> modes =
        modes_csv.empty() ? known_augment_modes() : split_csv(modes_csv);
    std::vector<uint64_t> seeds;
    if (seeds_csv.empty()) {
        seeds = {cfg.seed};
    } else {
        for (const auto& s : split_csv(seeds_csv)) {
            try {
                seeds.push_back(std::stoull(s));
            } catch (const std::exception&) {
                throw ConfigError("--seeds expects comma-separated integers");
            }
        }
    }
    SweepResult result = sweep_augmentations(ctx, modes, seeds);
    std::cout << metrics_to_tsv(result.summary);
    if (!out_path.empty()) {
        save_metrics(out_path, result.summary);
        std::cout << "saved " << out_path << "\n";
    }
    if (!runs_path.empty()) {
        save_metrics(runs_path, result.runs);
        std::cout << "saved " << runs_path << "\n";
    }
    return 0;
}

int cmd_eval(const CommonOpts& common, const std::string& ckpt_path) {
    RunConfig cfg = resolve_config(common);
    RunContext ctx = prepare_run(cfg);
    if (ckpt_path.empty()) {
        print_eval("fp", evaluate_model(ctx, nullptr));
        return 0;
    }
    QuantizedModel qm = build_quantized_model(ctx.fp, quant_spec_from_config(cfg));
    prepare_for_load(qm);
    load_checkpoint(ckpt_path, config_hash(cfg), combined_tensors(ctx, qm));
    print_eval("fp", evaluate_model(ctx, nullptr));
    print_eval("quant", evaluate_model(ctx, &qm));
    return 0;
}

int cmd_check_hypergrad(int64_t trials, uint64_t seed, double tol) {
    double worst = 0.0;
    for (int64_t i = 0; i < trials; ++i) {
        HypergradCheckResult r = check_hypergrad_random(seed + static_cast<uint64_t>(i));
        worst = std::max(worst, r.max_abs_err);
        std::cout << "trial " << i << ": max_abs_err=" << std::scientific << std::setprecision(3)
                  << r.max_abs_err << "\n";
    }
    std::cout << "worst=" << std::scientific << std::setprecision(3) << worst
              << " tol=" << tol << (worst < tol ? " ok" : " FAIL") << "\n";
    return worst < tol ? 0 : 1;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Block-wise post-training quantization with learned calibration augmentation"};
    app.require_subcommand(1);

    CommonOpts common;
    std::string out_path, metrics_path, runs_path, ckpt_path, augment, bits, modes_csv, seeds_csv;
    bool star = false;
    int64_t trials = 5;
    uint64_t hg_seed = 1;
    double hg_tol = 1e-3;

    auto* train_fp = app.add_subcommand("train-fp", "Train the full-precision model");
    add_common(train_fp, common);
    train_fp->add_option("--out", out_path, "Checkpoint output path");

    auto* quantize = app.add_subcommand("quantize", "Run post-training quantization");
    add_common(quantize, common);
    quantize->add_option("--augment", augment, "Augmentation mode (overrides config)");
    quantize->add_option("--bits", bits, "Bit-widths as W,A (e.g. 2,2)");
    quantize->add_flag("--star", star, "Keep the second layer's input at 8 bits");
    quantize->add_option("--out", out_path, "Checkpoint output path");
    quantize->add_option("--metrics", metrics_path, "Metrics TSV output path");

    auto* baseline = app.add_subcommand("quantize-baseline", "Run PTQ without learned augmentation");
    add_common(baseline, common);
    baseline->add_option("--augment", augment, "Baseline augmentation (default none)");
    baseline->add_option("--bits", bits, "Bit-widths as W,A");
    baseline->add_flag("--star", star, "Keep the second layer's input at 8 bits");
    baseline->add_option("--out", out_path, "Checkpoint output path");
    baseline->add_option("--metrics", metrics_path, "Metrics TSV output path");

    auto* sweep = app.add_subcommand("sweep", "Compare augmentation modes over seeds");
    add_common(sweep, common);
    sweep->add_option("--modes", modes_csv, "Comma-separated modes (default: all)");
    sweep->add_option("--seeds", seeds_csv, "Comma-separated seeds (default: config seed)");
    sweep->add_option("--out", out_path, "Summary TSV output path");
    sweep->add_option("--runs", runs_path, "Per-run TSV output path");

    auto* eval = app.add_subcommand("eval", "Evaluate the FP model or a saved quantized model");
    add_common(eval, common);
    eval->add_option("--ckpt", ckpt_path, "Checkpoint produced by quantize");

    auto* check = app.add_subcommand("check-hypergrad", "Hypergradient vs finite-difference check");
    check->add_option("--trials", trials, "Number of random problems")->capture_default_str();
    check->add_option("--seed", hg_seed, "Base seed")->capture_default_str();
    check->add_option("--tol", hg_tol, "Max allowed deviation")->capture_default_str();

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        int code = app.exit(e);
        return code == 0 ? 0 : kExitConfig;
    }

    try {
        if (train_fp->parsed()) return cmd_train_fp(common, out_path);
        if (quantize->parsed()) return cmd_quantize(common, augment, bits, star, out_path, metrics_path);
        if (baseline->parsed()) {
            return cmd_quantize(common, augment.empty() ? "none" : augment, bits, star, out_path,
                                metrics_path);
        }
        if (sweep->parsed()) return cmd_sweep(common, modes_csv, seeds_csv, out_path, runs_path);
        if (eval->parsed()) return cmd_eval(common, ckpt_path);
        if (check->parsed()) return cmd_check_hypergrad(trials, hg_seed, hg_tol);
    } catch (const ConfigError& e) {
        std::cerr << "config error: " << e.what() << "\n";
        return kExitConfig;
    } catch (const DataError& e) {
        std::cerr << "data error: " << e.what() << "\n";
        return kExitData;
    } catch (const NumericError& e) {
        std::cerr << "numeric error: " << e.what() << "\n";
        return kExitNumeric;
    } catch (const IoError& e) {
        std::cerr << "io error: " << e.what() << "\n";
        return kExitIo;
    }
    return 0;
}
