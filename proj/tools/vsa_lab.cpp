// vsa-lab: train / evaluate / analyze the varied-size window attention models.

#include <CLI11.hpp>

#include <chrono>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <sstream>

#include "vsa/analysis.hpp"
#include "vsa/train.hpp"

namespace {

using namespace vsa;

struct ModelFlags {
    std::string preset = "swin_tiny";
    std::string vsa_stages;
    std::string toggles;
    std::string config_path;
    long img_size = 0;
    long num_classes = 0;
};

void add_model_flags(CLI::App* cmd, ModelFlags& flags) {
    cmd->add_option("--preset", flags.preset, "model preset: swin_nano, swin_pico, swin_tiny");
    cmd->add_option("--vsa-stages", flags.vsa_stages,
                    "comma list of 1-based stages that use varied-size attention, e.g. 3,4");
    cmd->add_option("--toggles", flags.toggles,
                    "comma list of block components for every stage: cpe,vsr,shift");
    cmd->add_option("--img-size", flags.img_size, "override input resolution");
    cmd->add_option("--classes", flags.num_classes, "override class count");
}

std::vector<long> parse_stages(const std::string& text) {
    std::vector<long> out;
    std::stringstream ss(text);
    std::string item;
    while (std::getline(ss, item, ',')) {
        if (!item.empty()) out.push_back(std::stol(item));
    }
    return out;
}

BlockToggles parse_toggles(const std::string& text) {
    BlockToggles t{false, false, false};
    std::stringstream ss(text);
    std::string item;
    while (std::getline(ss, item, ',')) {
        if (item == "cpe") t.use_cpe = true;
        else if (item == "vsr") t.use_vsr = true;
        else if (item == "shift") t.use_shift = true;
        else if (!item.empty()) throw ConfigError("unknown toggle '" + item + "'");
    }
    return t;
}

ModelConfig config_from_flags(const ModelFlags& flags) {
    ModelConfig cfg = ModelConfig::preset(flags.preset);
    if (flags.img_size > 0) cfg.img_size = flags.img_size;
    if (flags.num_classes > 0) cfg.num_classes = flags.num_classes;
    if (!flags.vsa_stages.empty()) cfg.set_vsa_stages(parse_stages(flags.vsa_stages));
    if (!flags.toggles.empty()) cfg.set_toggles_all(parse_toggles(flags.toggles));
    cfg.validate();
    return cfg;
}

std::vector<Tensor> synthetic_batch(const ModelConfig& cfg, uint64_t seed, long count) {
    SyntheticSpec spec;
    spec.img_size = cfg.img_size;
    spec.num_classes = std::max(2L, std::min(cfg.num_classes, 10L));
    spec.seed = seed;
    spec.count = std::max(2 * count, 2L);
    SyntheticDataset data(spec, Split::kAll);
    std::vector<Tensor> batch;
    for (long i = 0; i < count; ++i) batch.push_back(data.stream_sample(i).image);
    return batch;
}

int cmd_params(const ModelFlags& flags, uint64_t seed) {
    ModelConfig cfg = config_from_flags(flags);
    Model model(cfg, seed);
    std::vector<std::pair<std::string, long>> per_layer;
    const long total = count_params(model, &per_layer);
    for (const auto& [layer, count] : per_layer) {
        std::cout << layer << " " << count << "\n";
    }
    std::cout << "total_params=" << total << "\n";
    return 0;
}

int cmd_flops(const ModelFlags& flags) {
    ModelConfig cfg = config_from_flags(flags);
    const CostReport report = count_flops(cfg);
    for (const CostRow& row : report.rows) {
        std::cout << row.name << " params=" << row.params << " flops=" << row.flop_units
                  << " misc=" << row.misc_units << (row.vsa_extra ? " [vsa-extra]" : "") << "\n";
    }
    std::cout << "total_params=" << report.total_params << "\n";
    std::cout << "total_flop_units=" << std::setprecision(12) << report.total_flop_units << "\n";
    std::cout << "misc_units=" << report.total_misc_units << "\n";
    std::cout << "vsa_extra_measured=" << report.vsa_extra_flop_units << "\n";
    std::cout << "vsa_extra_analytic=" << report.vsa_extra_analytic << "\n";
    std::cout << "overhead_ratio=" << report.overhead_ratio << "\n";
    return 0;
}

int cmd_train(const std::string& config_path, const ModelFlags& flags, uint64_t seed,
              bool seed_set, const std::string& out_dir) {
    KVConfig kv = config_path.empty() ? KVConfig() : KVConfig::load(config_path);
    if (!flags.preset.empty()) kv.set("model.preset", kv.get("model.preset", flags.preset));
    if (flags.img_size > 0) kv.set("model.img_size", std::to_string(flags.img_size));
    if (flags.num_classes > 0) {
        kv.set("model.num_classes", std::to_string(flags.num_classes));
        kv.set("data.classes", std::to_string(flags.num_classes));
    }
    if (!flags.vsa_stages.empty()) kv.set("model.vsa_stages", flags.vsa_stages);
    if (!flags.toggles.empty()) kv.set("model.toggles", flags.toggles);
    if (seed_set) kv.set("train.seed", std::to_string(seed));
    if (!out_dir.empty()) kv.set("out.dir", out_dir);
    TrainConfig cfg = TrainConfig::from_kv(kv);
    const TrainResult result = train(cfg);
    std::cout << "metrics=" << result.metrics_path << "\n";
    std::cout << "checkpoint=" << result.checkpoint_path << "\n";
    std::cout << "final_train_top1=" << result.final_train_top1 << "\n";
    return 0;
}

int cmd_eval(const std::string& checkpoint, const std::string& config_path, long samples) {
    Model model = load_checkpoint(checkpoint);
    DataSpec spec;
    if (!config_path.empty()) {
        TrainConfig cfg = TrainConfig::from_kv(KVConfig::load(config_path));
        spec = cfg.data;
    } else {
        spec.synthetic.img_size = model.config().img_size;
        spec.synthetic.num_classes = model.config().num_classes;
    }
    auto data = open_dataset(spec, Split::kVal);
    const EvalResult result = evaluate(model, *data, samples);
    std::cout << "samples=" << result.samples << "\n";
    std::cout << "top1=" << result.top1 << "\n";
    if (data->num_classes() >= 5) std::cout << "top5=" << result.top5 << "\n";
    for (size_t c = 0; c < result.per_class.size(); ++c) {
        std::cout << "class" << c << "_top1=" << result.per_class[c] << "\n";
    }
    return 0;
}

int cmd_gradcheck(const ModelFlags& flags, uint64_t seed, double tolerance) {
    ModelFlags local = flags;
    if (local.preset == "swin_tiny") local.preset = "swin_nano";
    if (local.vsa_stages.empty() && local.toggles.empty()) local.vsa_stages = "3,4";
    ModelConfig cfg = config_from_flags(local);
    const GradCheckReport report = gradcheck(cfg, seed, tolerance);
    for (const GradCheckEntry& e : report.entries) {
        std::cout << "gradcheck class=" << e.param_class << " max_rel_err=" << e.max_rel_err
                  << " coords=" << e.coords_checked << " status=" << (e.pass ? "PASS" : "FAIL")
                  << "\n";
    }
    std::cout << "vsr_grads_nonzero=" << (report.vsr_grads_nonzero ? "yes" : "no") << "\n";
    std::cout << "detached_vsr_grads_zero=" << (report.detached_vsr_grads_zero ? "yes" : "no")
              << "\n";
    std::cout << "gradcheck_overall=" << (report.pass ? "PASS" : "FAIL") << "\n";
    return 0;
}

Model model_from_checkpoint_or_flags(const std::string& checkpoint, const ModelFlags& flags,
                                     uint64_t seed) {
    if (!checkpoint.empty()) return load_checkpoint(checkpoint);
    ModelFlags local = flags;
    if (local.preset == "swin_tiny") local.preset = "swin_pico";
    if (local.vsa_stages.empty() && local.toggles.empty()) local.vsa_stages = "1,2,3,4";
    return Model(config_from_flags(local), seed);
}

int cmd_stats_scales(const std::string& checkpoint, const ModelFlags& flags, uint64_t seed,
                     const std::string& out_dir, long batch, long bins) {
    Model model = model_from_checkpoint_or_flags(checkpoint, flags, seed);
    const auto images = synthetic_batch(model.config(), seed, batch);
    const auto histograms = collect_scale_stats(model, images, bins);
    std::filesystem::create_directories(out_dir);
    const std::string path = out_dir + "/stats_scales.csv";
    std::ofstream out(path);
    write_scale_csv(out, histograms);
    std::cout << "histograms=" << histograms.size() << "\n";
    std::cout << "csv=" << path << "\n";
    return 0;
}

int cmd_viz_windows(const std::string& checkpoint, const ModelFlags& flags, uint64_t seed,
                    const std::string& out_dir) {
    Model model = model_from_checkpoint_or_flags(checkpoint, flags, seed);
    const auto images = synthetic_batch(model.config(), seed, 1);
    const auto rects = export_window_rects(model, images[0], 0);
    std::filesystem::create_directories(out_dir);
    const std::string path = out_dir + "/window_rects.jsonl";
    std::ofstream out(path);
    write_rects_jsonl(out, rects);
    std::cout << "records=" << rects.size() << "\n";
    std::cout << "jsonl=" << path << "\n";
    return 0;
}

int cmd_bench(const ModelFlags& flags, uint64_t seed, long reps) {
    ModelFlags base = flags;
    base.toggles = "shift";
    ModelFlags vsa_flags = flags;
    vsa_flags.toggles = "cpe,vsr";
    Model baseline(config_from_flags(base), seed);
    Model varied(config_from_flags(vsa_flags), seed);
    const auto images = synthetic_batch(baseline.config(), seed, 1);
    auto time_forward = [&](Model& m) {
        NoGradGuard no_grad;
        m.forward(images[0]);  // warmup
        const auto start = std::chrono::steady_clock::now();
        for (long i = 0; i < reps; ++i) m.forward(images[0]);
        const auto end = std::chrono::steady_clock::now();
        return std::chrono::duration<double, std::milli>(end - start).count() /
               static_cast<double>(reps);
    };
    const double base_ms = time_forward(baseline);
    const double vsa_ms = time_forward(varied);
    std::cout << "baseline_ms=" << base_ms << "\n";
    std::cout << "vsa_ms=" << vsa_ms << "\n";
    std::cout << "relative_overhead=" << (vsa_ms - base_ms) / base_ms << "\n";
    return 0;
}

int cmd_gen_data(const std::string& out_path, long size, long classes, long count, uint64_t seed,
                 double noise) {
    SyntheticSpec spec;
    spec.img_size = size;
    spec.num_classes = classes;
    spec.count = count;
    spec.seed = seed;
    spec.noise = noise;
    write_synthetic_file(out_path, spec, count);
    std::cout << "file=" << out_path << "\n";
    std::cout << "samples=" << count << "\n";
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"varied-size window attention lab"};
    app.require_subcommand(1);

    ModelFlags flags;
    std::string config_path, out_dir, checkpoint;
    uint64_t seed = 42;
    bool seed_set = false;
    long samples = -1, batch = 4, bins = 64, reps = 3, gen_size = 64, gen_classes = 4,
         gen_count = 1024;
    double tolerance = 1e-4, noise = 0.3;
    std::string gen_out = "synthetic.bin";

    auto add_common = [&](CLI::App* cmd) {
        cmd->add_option("--config", config_path, "key=value config file");
        cmd->add_option("--seed", seed, "run seed")->each([&](const std::string&) { seed_set = true; });
        cmd->add_option("--out", out_dir, "output directory");
        cmd->add_option("--checkpoint", checkpoint, "checkpoint path");
        add_model_flags(cmd, flags);
    };

    CLI::App* train_cmd = app.add_subcommand("train", "train a model");
    add_common(train_cmd);
    CLI::App* eval_cmd = app.add_subcommand("eval", "evaluate a checkpoint");
    add_common(eval_cmd);
    eval_cmd->add_option("--samples", samples, "max samples");
    CLI::App* gradcheck_cmd = app.add_subcommand("gradcheck", "finite-difference gradient audit");
    add_common(gradcheck_cmd);
    gradcheck_cmd->add_option("--tolerance", tolerance, "max relative error");
    CLI::App* flops_cmd = app.add_subcommand("flops", "per-layer MAC accounting");
    add_common(flops_cmd);
    CLI::App* params_cmd = app.add_subcommand("params", "per-layer parameter counts");
    add_common(params_cmd);
    CLI::App* stats_cmd = app.add_subcommand("stats-scales", "target-window scale histograms");
    add_common(stats_cmd);
    stats_cmd->add_option("--batch", batch, "images to analyze");
    stats_cmd->add_option("--bins", bins, "histogram bins");
    CLI::App* viz_cmd = app.add_subcommand("viz-windows", "export window rectangles as JSON lines");
    add_common(viz_cmd);
    CLI::App* bench_cmd = app.add_subcommand("bench", "relative forward-pass overhead");
    add_common(bench_cmd);
    bench_cmd->add_option("--reps", reps, "timed repetitions");
    CLI::App* gen_cmd = app.add_subcommand("gen-data", "write a synthetic dataset file");
    gen_cmd->add_option("--out", gen_out, "output file");
    gen_cmd->add_option("--size", gen_size, "image size");
    gen_cmd->add_option("--classes", gen_classes, "bucket count");
    gen_cmd->add_option("--count", gen_count, "sample count");
    gen_cmd->add_option("--noise", noise, "background noise level");
    gen_cmd->add_option("--seed", seed, "generator seed");

    CLI11_PARSE(app, argc, argv);

    try {
        if (train_cmd->parsed()) {
            return cmd_train(config_path, flags, seed, seed_set, out_dir);
        }
        if (eval_cmd->parsed()) {
            if (checkpoint.empty()) throw ConfigError("eval requires --checkpoint");
            return cmd_eval(checkpoint, config_path, samples);
        }
        if (gradcheck_cmd->parsed()) return cmd_gradcheck(flags, seed, tolerance);
        if (flops_cmd->parsed()) return cmd_flops(flags);
        if (params_cmd->parsed()) return cmd_params(flags, seed);
        if (stats_cmd->parsed()) {
            return cmd_stats_scales(checkpoint, flags, seed, out_dir.empty() ? "." : out_dir,
                                    batch, bins);
        }
        if (viz_cmd->parsed()) {
            return cmd_viz_windows(checkpoint, flags, seed, out_dir.empty() ? "." : out_dir);
        }
        if (bench_cmd->parsed()) return cmd_bench(flags, seed, reps);
        if (gen_cmd->parsed()) {
            return cmd_gen_data(gen_out, gen_size, gen_classes, gen_count, seed, noise);
        }
    } catch (const std::exception& err) {
        std::cerr << "error: " << err.what() << std::endl;
        return 1;
    }
    return 0;
}
