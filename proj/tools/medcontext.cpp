// medcontext: generate synthetic volumes, train the joint masked-recon +
// segmentation model, evaluate DSC/HD95, run ablation sweeps, and verify
// gradients by finite differences.

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include "CLI11.hpp"

#include "medctx/run.hpp"
#include "medctx/verify.hpp"

namespace {

medctx::RunConfig load_config(const std::string& config_path,
                              const std::vector<std::string>& overrides) {
    medctx::RunConfig cfg;
    if (!config_path.empty()) cfg = medctx::RunConfig::from_file(config_path);
    cfg.apply_overrides(overrides);
    return cfg;
}

/// A command that fails after creating artifacts leaves a FAILED marker next
/// to them so partial output is never mistaken for a finished run.
int guarded(const std::string& out_dir, const std::function<void()>& body) {
    try {
        body();
        return 0;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        if (!out_dir.empty() && std::filesystem::exists(out_dir)) {
            std::ofstream marker(out_dir + "/FAILED");
            marker << e.what() << "\n";
        }
        return 1;
    }
}

} // namespace

int main(int argc, char** argv) {
    CLI::App app{"joint masked-reconstruction + supervised 3D segmentation"};
    app.require_subcommand(1);
    app.fallthrough(); // --config/--set may follow the subcommand name

    std::string config_path;
    std::vector<std::string> overrides;
    app.add_option("--config", config_path, "config file (section.key = value lines)");
    app.add_option("--set", overrides, "override config entries, e.g. --set train.steps=50");

    // generate-data
    auto* gen = app.add_subcommand("generate-data", "write a phantom dataset + manifest");
    std::string gen_out = "data";
    gen->add_option("--out", gen_out, "output directory")->required();

    // train
    auto* train = app.add_subcommand("train", "run the training loop");
    std::string train_data, train_out = "run";
    std::string resume_path;
    bool baseline = false, no_teacher = false;
    double opt_mask_ratio = -1.0, opt_beta = -1.0;
    int64_t opt_steps = -1, opt_seed = -1;
    bool verbose = false;
    train->add_option("--data", train_data, "dataset directory (with manifest.csv)")->required();
    train->add_option("--out", train_out, "run directory")->required();
    train->add_option("--resume", resume_path, "checkpoint to continue from");
    train->add_flag("--baseline", baseline, "supervised only: disable MSL and CL");
    train->add_flag("--no-teacher", no_teacher, "drop distillation (no consistency term)");
    train->add_option("--mask-ratio", opt_mask_ratio, "masking ratio (default 0.4)");
    train->add_option("--beta", opt_beta, "consistency loss weight");
    train->add_option("--steps", opt_steps, "training steps");
    train->add_option("--seed", opt_seed, "root seed");
    train->add_flag("-v,--verbose", verbose, "progress on stderr");

    // eval
    auto* eval = app.add_subcommand("eval", "evaluate a checkpoint on the test split");
    std::string eval_ckpt, eval_data, eval_out = "eval";
    bool use_teacher = false;
    eval->add_option("--checkpoint", eval_ckpt, "checkpoint .mctx")->required();
    eval->add_option("--data", eval_data, "dataset directory")->required();
    eval->add_option("--out", eval_out, "output directory")->required();
    eval->add_flag("--use-teacher", use_teacher, "evaluate with teacher weights");

    // ablate
    auto* ablate = app.add_subcommand("ablate", "train+eval one cell per swept value");
    std::string ab_data, ab_out = "ablation", ab_sweep;
    ablate->add_option("--data", ab_data, "dataset directory")->required();
    ablate->add_option("--out", ab_out, "output directory")->required();
    ablate->add_option("--sweep", ab_sweep,
                       "ratio=0.3,0.4,... | losses=msl,cl,both | beta=0.5,1,2")
        ->required();
    ablate->add_flag("-v,--verbose", verbose, "progress on stderr");

    // grad-check
    auto* gc = app.add_subcommand("grad-check", "finite-difference gradient suite");
    int gc_seeds = 20;
    bool inject_bug = false;
    gc->add_option("--seeds", gc_seeds, "seeds per operation (default 20)");
    gc->add_flag("--inject-bug", inject_bug,
                 "test fixture: corrupt analytic gradients to prove detection");

    CLI11_PARSE(app, argc, argv);

    if (gen->parsed()) {
        return guarded(gen_out, [&] {
            auto cfg = load_config(config_path, overrides);
            std::filesystem::create_directories(gen_out);
            auto result = medctx::run_generate_data(cfg, gen_out);
            std::cout << "wrote " << result.split.train_ids.size() << " train + "
                      << result.split.test_ids.size() << " test volumes to " << gen_out << "\n";
        });
    }

    if (train->parsed()) {
        return guarded(train_out, [&] {
            auto cfg = load_config(config_path, overrides);
            if (baseline) {
                cfg.set("loss.include_msl", "false");
                cfg.set("loss.include_cl", "false");
            }
            if (no_teacher) cfg.set("train.use_teacher", "false");
            if (opt_mask_ratio >= 0.0) cfg.set("train.mask_ratio", std::to_string(opt_mask_ratio));
            if (opt_beta >= 0.0) cfg.set("loss.beta", std::to_string(opt_beta));
            if (opt_steps > 0) cfg.set("train.steps", std::to_string(opt_steps));
            if (opt_seed >= 0) cfg.set("train.seed", std::to_string(opt_seed));
            std::filesystem::create_directories(train_out);
            std::optional<std::string> resume;
            if (!resume_path.empty()) resume = resume_path;
            auto result = medctx::run_train(cfg, train_data, train_out, resume, !verbose);
            std::cout << "trained to step " << result.last.step << ", final loss "
                      << result.last.loss_total << "\n"
                      << "checkpoint: " << result.checkpoint_path << "\n"
                      << "metrics:    " << result.metrics_path << "\n";
        });
    }

    if (eval->parsed()) {
        return guarded(eval_out, [&] {
            auto cfg = load_config(config_path, overrides);
            std::filesystem::create_directories(eval_out);
            auto result = medctx::run_eval(eval_ckpt, eval_data, eval_out, use_teacher,
                                           cfg.get_f64("data.hu_lo", -1000.0),
                                           cfg.get_f64("data.hu_hi", 1000.0));
            std::printf("volumes %lld  mean DSC %.4f", static_cast<long long>(result.volumes),
                        result.mean_dsc);
            if (result.mean_hd95) std::printf("  mean HD95 %.3f mm", *result.mean_hd95);
            std::printf("\n");
        });
    }

    if (ablate->parsed()) {
        return guarded(ab_out, [&] {
            auto cfg = load_config(config_path, overrides);
            std::filesystem::create_directories(ab_out);
            auto result = medctx::run_ablate(cfg, ab_data, ab_out, ab_sweep, !verbose);
            std::printf("%-16s %-8s %10s %12s\n", "cell", "value", "mean DSC", "final loss");
            for (const auto& c : result.cells)
                std::printf("%-16s %-8s %10.4f %12.5g\n", c.tag.c_str(), c.value.c_str(),
                            c.mean_dsc, c.final_loss);
            std::cout << "table: " << result.table_path << "\n";
        });
    }

    if (gc->parsed()) {
        return guarded("", [&] {
            auto report = medctx::run_grad_suite(gc_seeds, 1e-4, inject_bug ? 1.01 : 1.0);
            std::printf("%-28s %14s %10s  %s\n", "operation", "max rel err", "tolerance", "status");
            for (const auto& e : report.entries)
                std::printf("%-28s %14.3e %10.0e  %s\n", e.name.c_str(), e.max_error, e.tolerance,
                            e.pass ? "ok" : "FAIL");
            std::printf("suite: %s in %.1fs\n", report.all_pass ? "all passed" : "FAILURES",
                        report.seconds);
            if (!report.all_pass) throw medctx::NumericError("gradient suite failed");
        });
    }

    return 0;
}
