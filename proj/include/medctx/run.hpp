#pragma once

#include <chrono>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "json.hpp"

#include "medctx/config.hpp"
#include "medctx/data.hpp"
#include "medctx/grad_check.hpp"
#include "medctx/metrics.hpp"
#include "medctx/trainer.hpp"

namespace medctx {

// Command-level operations shared by the CLI and the acceptance suite:
// dataset generation, the full training loop, evaluation, ablation sweeps,
// and the finite-difference verification suite.

inline constexpr const char* kVersion = "medcontext 1.0.0";

namespace fs = std::filesystem;

// ---------------------------------------------------------------------------
// Config resolution
// ---------------------------------------------------------------------------

inline PhantomConfig make_phantom_config(const RunConfig& cfg) {
    PhantomConfig p;
    auto e = cfg.get_i64_list("data.extents", {32, 32, 32});
    if (e.size() != 3) throw ConfigError("data.extents: expected three extents");
    p.extents = {e[0], e[1], e[2]};
    p.num_organs = cfg.get_i64("data.num_organs", 3);
    if (cfg.has("data.organ_intensity")) {
        // flat list of lo/hi pairs, one pair per organ (cycled when shorter)
        const auto vals = cfg.get_f64_list("data.organ_intensity", {});
        if (vals.size() < 2 || vals.size() % 2 != 0)
            throw ConfigError("data.organ_intensity: expected lo/hi pairs");
        p.organ_intensity.clear();
        for (size_t i = 0; i < vals.size(); i += 2)
            p.organ_intensity.push_back({vals[i], vals[i + 1]});
    }
    p.background_hu = cfg.get_f64("data.background_hu", -700.0);
    p.noise_sigma = cfg.get_f64("data.noise_sigma", 40.0);
    p.min_semiaxis = cfg.get_f64("data.min_semiaxis", 3.0);
    p.max_semiaxis = cfg.get_f64("data.max_semiaxis", 6.0);
    p.min_separation = cfg.get_f64("data.min_separation", 2.0);
    return p;
}

inline NetConfig make_net_config(const RunConfig& cfg) {
    NetConfig n;
    n.in_channels = 1;
    n.num_classes = cfg.get_i64("net.num_classes", cfg.get_i64("data.num_organs", 3) + 1);
    auto patch = cfg.get_i64_list("net.patch", {4, 4, 4});
    if (patch.size() == 1) patch = {patch[0], patch[0], patch[0]};
    if (patch.size() != 3) throw ConfigError("net.patch: expected one or three extents");
    n.patch = {patch[0], patch[1], patch[2]};
    n.base_width = cfg.get_i64("net.base_width", 8);
    n.depth = cfg.get_i64("net.depth", 2);
    n.seed = static_cast<uint64_t>(cfg.get_i64("train.seed", 42));
    n.validate();
    return n;
}

inline LossConfig make_loss_config(const RunConfig& cfg) {
    LossConfig l;
    l.beta = cfg.get_f64("loss.beta", 1.0);
    l.eps_dice = cfg.get_f64("loss.eps_dice", 1e-5);
    l.eps_cl = cfg.get_f64("loss.eps_cl", 1e-8);
    l.include_msl = cfg.get_bool("loss.include_msl", true);
    l.include_cl = cfg.get_bool("loss.include_cl", true);
    l.include_background = cfg.get_bool("loss.include_background", true);
    l.cl_on_probs = cfg.get_bool("loss.cl_on_probs", false);
    if (cfg.has("loss.class_weights")) l.class_weights = cfg.get_f64_list("loss.class_weights", {});
    return l;
}

inline TrainConfig make_train_config(const RunConfig& cfg) {
    TrainConfig t;
    t.steps = cfg.get_i64("train.steps", 200);
    t.batch = cfg.get_i64("train.batch", 1);
    t.lr = cfg.get_f64("train.lr", 1e-2);
    t.weight_decay = cfg.get_f64("train.weight_decay", 3e-5);
    t.mask_ratio = cfg.get_f64("train.mask_ratio", 0.4);
    t.lambda0 = cfg.get_f64("train.lambda0", 0.996);
    t.adam_beta1 = cfg.get_f64("train.adam_beta1", 0.9);
    t.adam_beta2 = cfg.get_f64("train.adam_beta2", 0.999);
    t.adam_eps = cfg.get_f64("train.adam_eps", 1e-8);
    t.seed = static_cast<uint64_t>(cfg.get_i64("train.seed", 42));
    t.eval_every = cfg.get_i64("train.eval_every", 0);
    t.halt_at = cfg.get_i64("train.halt_at", 0);
    t.augment = cfg.get_bool("data.augment", true);
    t.augment_intensity_sigma = cfg.get_f64("data.augment_intensity_sigma", 30.0);
    t.hu_lo = cfg.get_f64("data.hu_lo", -1000.0);
    t.hu_hi = cfg.get_f64("data.hu_hi", 1000.0);
    t.exact_count_mask = cfg.get_bool("train.exact_count_mask", false);
    t.voxel_space_mask = cfg.get_bool("train.voxel_space_mask", false);
    t.decay_mask_embeddings = cfg.get_bool("train.decay_mask_embeddings", false);
    t.use_teacher = cfg.get_bool("train.use_teacher", true);
    t.validate();
    return t;
}

namespace detail {

inline std::string fmt_f64(double v) {
    char buf[64];
    std::snprintf(buf, sizeof buf, "%.17g", v);
    return buf;
}

} // namespace detail

/// The echoed configuration carries every effective value (including
/// defaults) plus the version string, so a run directory alone suffices to
/// reproduce the run.
inline RunConfig effective_config(const RunConfig& cfg) {
    RunConfig out = cfg;
    out.set("run.version", kVersion);
    const NetConfig net = make_net_config(cfg);
    out.set("net.num_classes", std::to_string(net.num_classes));
    out.set("net.patch", std::to_string(net.patch[0]) + " " + std::to_string(net.patch[1]) + " " +
                             std::to_string(net.patch[2]));
    out.set("net.base_width", std::to_string(net.base_width));
    out.set("net.depth", std::to_string(net.depth));
    const TrainConfig tc = make_train_config(cfg);
    out.set("train.steps", std::to_string(tc.steps));
    out.set("train.batch", std::to_string(tc.batch));
    out.set("train.lr", detail::fmt_f64(tc.lr));
    out.set("train.weight_decay", detail::fmt_f64(tc.weight_decay));
    out.set("train.mask_ratio", detail::fmt_f64(tc.mask_ratio));
    out.set("train.lambda0", detail::fmt_f64(tc.lambda0));
    out.set("train.seed", std::to_string(tc.seed));
    out.set("train.halt_at", std::to_string(tc.halt_at));
    out.set("train.use_teacher", tc.use_teacher ? "true" : "false");
    out.set("train.voxel_space_mask", tc.voxel_space_mask ? "true" : "false");
    const LossConfig lc = make_loss_config(cfg);
    out.set("loss.beta", detail::fmt_f64(lc.beta));
    out.set("loss.include_msl", lc.include_msl ? "true" : "false");
    out.set("loss.include_cl", lc.include_cl ? "true" : "false");
    out.set("data.augment", tc.augment ? "true" : "false");
    out.set("data.seed", std::to_string(cfg.get_i64("data.seed", 7)));
    return out;
}

// ---------------------------------------------------------------------------
// generate-data
// ---------------------------------------------------------------------------

struct GenerateResult {
    DatasetSplit split;
    std::string dir;
};

inline GenerateResult run_generate_data(const RunConfig& cfg, const std::string& out_dir) {
    const PhantomConfig base = make_phantom_config(cfg);
    const int64_t n_train = cfg.get_i64("data.n_train", 25);
    const int64_t n_test = cfg.get_i64("data.n_test", 5);
    const uint64_t seed = static_cast<uint64_t>(cfg.get_i64("data.seed", 7));
    if (n_train < 1 || n_test < 0) throw ConfigError("data: n_train must be >= 1, n_test >= 0");

    fs::create_directories(out_dir);
    std::vector<std::string> ids;
    for (int64_t i = 0; i < n_train + n_test; ++i) {
        char id[32];
        std::snprintf(id, sizeof id, "s%03lld", static_cast<long long>(i));
        PhantomConfig pc = base;
        pc.seed = derive_seed(seed, "phantom", static_cast<uint64_t>(i));
        VolumeSample s = generate_phantom(pc);
        s.id = id;
        save_sample(out_dir, s);
        ids.push_back(id);
    }
    GenerateResult result;
    result.split = make_split(ids, n_train, n_test, derive_seed(seed, "split"));
    result.dir = out_dir;
    write_manifest(out_dir, result.split);
    effective_config(cfg).write_resolved(out_dir + "/config.resolved");
    return result;
}

// ---------------------------------------------------------------------------
// train
// ---------------------------------------------------------------------------

struct TrainResult {
    std::string checkpoint_path;
    std::string metrics_path;
    StepMetrics first;
    StepMetrics last;
};

inline TrainResult run_train(const RunConfig& cfg, const std::string& data_dir,
                             const std::string& out_dir,
                             const std::optional<std::string>& resume = std::nullopt,
                             bool quiet = true) {
    const NetConfig net = make_net_config(cfg);
    const TrainConfig tc = make_train_config(cfg);
    const LossConfig lc = make_loss_config(cfg);

    const DatasetSplit split = read_manifest(data_dir);
    if (split.train_ids.empty()) throw ContractError("train: dataset has no training samples");
    std::vector<VolumeSample> train_set = load_split_samples(data_dir, split.train_ids);
    const auto& e0 = train_set[0].extents;
    net.validate_extents(e0[0], e0[1], e0[2]);

    CheckpointBundle bundle;
    if (resume) {
        bundle = load_checkpoint(*resume);
        if (bundle.step >= tc.steps)
            throw ContractError("train: checkpoint already at step " + std::to_string(bundle.step));
    } else {
        bundle = init_bundle(net, tc.seed);
    }

    fs::create_directories(out_dir);
    effective_config(cfg).write_resolved(out_dir + "/config.resolved");
    std::ofstream csv(out_dir + "/metrics.csv", std::ios::trunc);
    if (!csv) throw IoError("train: cannot write metrics.csv in " + out_dir);
    csv << metrics_csv_header();

    const AugmentConfig aug{{true, true, true}, tc.augment_intensity_sigma};
    TrainResult result;
    result.first.step = 0;
    std::ofstream eval_csv;
    if (tc.eval_every > 0) {
        eval_csv.open(out_dir + "/eval.csv", std::ios::trunc);
        eval_csv << "step,mean_dsc\n";
    }

    const int64_t last_step = tc.halt_at > 0 ? std::min(tc.halt_at, tc.steps) : tc.steps;
    for (int64_t step = bundle.step; step < last_step; ++step) {
        Rng pick(derive_seed(bundle.root_seed, "batch", static_cast<uint64_t>(step)));
        std::vector<VolumeSample> batch;
        batch.reserve(static_cast<size_t>(tc.batch));
        for (int64_t slot = 0; slot < tc.batch; ++slot) {
            const int64_t idx = pick.uniform_int(0, static_cast<int64_t>(train_set.size()) - 1);
            VolumeSample s = train_set[static_cast<size_t>(idx)];
            if (tc.augment) {
                const uint64_t aseed = derive_seed(bundle.root_seed, "augment",
                                                   (static_cast<uint64_t>(step) << 16) |
                                                       static_cast<uint64_t>(slot));
                s = augment(s, aug, aseed);
            }
            normalize_hu(s.intensity, tc.hu_lo, tc.hu_hi);
            batch.push_back(std::move(s));
        }
        const StepMetrics m = train_step(bundle, batch, tc, lc, tc.steps);
        csv << metrics_csv_row(m);
        if (result.first.step == 0) result.first = m;
        result.last = m;
        if (!quiet && (m.step % 25 == 0 || m.step == 1))
            std::cerr << "step " << m.step << "/" << tc.steps << " loss " << m.loss_total << "\n";
        if (tc.eval_every > 0 && (m.step % tc.eval_every == 0 || m.step == tc.steps)) {
            double dsum = 0.0;
            int64_t n = 0;
            for (const auto& id : split.test_ids) {
                VolumeSample s = load_sample(data_dir, id);
                normalize_hu(s.intensity, tc.hu_lo, tc.hu_hi);
                const auto pred = infer(bundle, s, false);
                const auto rep = evaluate_volume(s.labels, pred, s.extents,
                                                 {s.spacing[0], s.spacing[1], s.spacing[2]},
                                                 static_cast<int>(net.num_classes));
                dsum += rep.mean_dice;
                ++n;
            }
            char row[64];
            std::snprintf(row, sizeof row, "%lld,%.9g\n", static_cast<long long>(m.step),
                          n ? dsum / static_cast<double>(n) : 1.0);
            eval_csv << row;
        }
    }

    result.checkpoint_path = out_dir + "/checkpoint.mctx";
    result.metrics_path = out_dir + "/metrics.csv";
    save_checkpoint(bundle, result.checkpoint_path);
    return result;
}

// ---------------------------------------------------------------------------
// eval
// ---------------------------------------------------------------------------

struct EvalResult {
    double mean_dsc = 1.0;
    std::optional<double> mean_hd95;
    int64_t volumes = 0;
    std::map<int, std::pair<double, int>> per_class_dsc; // class -> (sum, count)
};

inline EvalResult run_eval(const std::string& checkpoint_path, const std::string& data_dir,
                           const std::string& out_dir, bool use_teacher, double hu_lo = -1000.0,
                           double hu_hi = 1000.0) {
    CheckpointBundle bundle = load_checkpoint(checkpoint_path);
    const DatasetSplit split = read_manifest(data_dir);
    if (split.test_ids.empty()) throw ContractError("eval: dataset has no test samples");

    fs::create_directories(out_dir);
    std::ofstream csv(out_dir + "/metrics.csv", std::ios::trunc);
    if (!csv) throw IoError("eval: cannot write metrics.csv in " + out_dir);
    csv << "volume,class,dsc,hd95,hd95_defined\n";

    EvalResult result;
    double dsc_sum = 0.0;
    int64_t dsc_count = 0;
    double hd_sum = 0.0;
    int64_t hd_count = 0;
    for (const auto& id : split.test_ids) {
        VolumeSample s = load_sample(data_dir, id);
        normalize_hu(s.intensity, hu_lo, hu_hi);
        const auto pred = infer(bundle, s, use_teacher);
        const auto rep = evaluate_volume(s.labels, pred, s.extents,
                                         {s.spacing[0], s.spacing[1], s.spacing[2]},
                                         static_cast<int>(bundle.net.num_classes));
        write_report_csv(csv, id, rep);
        for (const auto& m : rep.classes) {
            if (m.absent()) continue;
            dsc_sum += m.dice;
            ++dsc_count;
            auto& agg = result.per_class_dsc[m.cls];
            agg.first += m.dice;
            agg.second += 1;
            if (m.hausdorff95) {
                hd_sum += *m.hausdorff95;
                ++hd_count;
            }
        }
        ++result.volumes;
    }
    if (dsc_count > 0) result.mean_dsc = dsc_sum / static_cast<double>(dsc_count);
    if (hd_count > 0) result.mean_hd95 = hd_sum / static_cast<double>(hd_count);

    nlohmann::json j;
    j["mean_dsc"] = result.mean_dsc;
    if (result.mean_hd95) j["mean_hd95"] = *result.mean_hd95;
    else j["mean_hd95"] = nullptr;
    j["volumes"] = result.volumes;
    j["use_teacher"] = use_teacher;
    nlohmann::json per_class = nlohmann::json::object();
    for (const auto& [cls, agg] : result.per_class_dsc)
        per_class[std::to_string(cls)] = agg.second ? agg.first / agg.second : 0.0;
    j["per_class_dsc"] = per_class;
    std::ofstream js(out_dir + "/summary.json", std::ios::trunc);
    if (!js) throw IoError("eval: cannot write summary.json in " + out_dir);
    js << j.dump(2) << "\n";
    return result;
}

// ---------------------------------------------------------------------------
// ablate
// ---------------------------------------------------------------------------

struct AblationCell {
    std::string tag;
    std::string knob;
    std::string value;
    double mean_dsc = 0.0;
    std::optional<double> mean_hd95;
    double final_loss = 0.0;
};

struct AblationResult {
    std::vector<AblationCell> cells;
    std::string table_path;
};

/// Sweep spec: "ratio=0.3,0.4,0.5,0.6,0.8", "losses=msl,cl,both", or
/// "beta=0.5,1,2". Every cell shares the same seeds; only the swept knob
/// changes.
inline AblationResult run_ablate(const RunConfig& base_cfg, const std::string& data_dir,
                                 const std::string& out_dir, const std::string& sweep,
                                 bool quiet = true) {
    const auto eq = sweep.find('=');
    if (eq == std::string::npos || eq + 1 >= sweep.size())
        throw ContractError("ablate: sweep must be knob=v1,v2,..., got '" + sweep + "'");
    const std::string knob = sweep.substr(0, eq);
    std::vector<std::string> values;
    {
        std::stringstream ss(sweep.substr(eq + 1));
        std::string tok;
        while (std::getline(ss, tok, ',')) {
            if (!tok.empty()) values.push_back(tok);
        }
    }
    if (values.empty()) throw ContractError("ablate: sweep has no values");

    fs::create_directories(out_dir);
    AblationResult result;
    for (const auto& v : values) {
        RunConfig cfg = base_cfg;
        AblationCell cell;
        cell.knob = knob;
        cell.value = v;
        if (knob == "ratio") {
            cfg.set("train.mask_ratio", v);
            cell.tag = "ratio_" + v;
        } else if (knob == "beta") {
            cfg.set("loss.beta", v);
            cell.tag = "beta_" + v;
        } else if (knob == "losses") {
            if (v == "msl") {
                cfg.set("loss.include_msl", "true");
                cfg.set("loss.include_cl", "false");
            } else if (v == "cl") {
                cfg.set("loss.include_msl", "false");
                cfg.set("loss.include_cl", "true");
            } else if (v == "both") {
                cfg.set("loss.include_msl", "true");
                cfg.set("loss.include_cl", "true");
            } else if (v == "none") {
                cfg.set("loss.include_msl", "false");
                cfg.set("loss.include_cl", "false");
            } else {
                throw ContractError("ablate: losses values are msl|cl|both|none, got '" + v + "'");
            }
            cell.tag = "losses_" + v;
        } else {
            throw ContractError("ablate: unknown knob '" + knob + "'");
        }
        const std::string cell_dir = out_dir + "/" + cell.tag;
        const TrainResult tr = run_train(cfg, data_dir, cell_dir, std::nullopt, quiet);
        const EvalResult ev = run_eval(tr.checkpoint_path, data_dir, cell_dir + "/eval", false);
        cell.mean_dsc = ev.mean_dsc;
        cell.mean_hd95 = ev.mean_hd95;
        cell.final_loss = tr.last.loss_total;
        result.cells.push_back(cell);
        if (!quiet)
            std::cerr << "cell " << cell.tag << ": dsc " << cell.mean_dsc << "\n";
    }

    result.table_path = out_dir + "/ablation.csv";
    std::ofstream os(result.table_path, std::ios::trunc);
    if (!os) throw IoError("ablate: cannot write " + result.table_path);
    os << "cell,knob,value,mean_dsc,mean_hd95,hd95_defined,final_loss\n";
    for (const auto& c : result.cells) {
        char buf[256];
        std::snprintf(buf, sizeof buf, "%s,%s,%s,%.9g,%.9g,%d,%.9g\n", c.tag.c_str(),
                      c.knob.c_str(), c.value.c_str(), c.mean_dsc,
                      c.mean_hd95 ? *c.mean_hd95 : 0.0, c.mean_hd95 ? 1 : 0, c.final_loss);
        os << buf;
    }
    return result;
}

} // namespace medctx
