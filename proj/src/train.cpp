#include "vsa/train.hpp"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <numeric>
#include <sstream>

namespace vsa {

namespace {

std::vector<long> parse_stage_list(const std::string& text) {
    std::vector<long> out;
    std::stringstream ss(text);
    std::string item;
    while (std::getline(ss, item, ',')) {
        if (!item.empty()) out.push_back(std::stol(item));
    }
    return out;
}

BlockToggles parse_toggle_list(const std::string& text) {
    BlockToggles t{false, false, false};
    std::stringstream ss(text);
    std::string item;
    while (std::getline(ss, item, ',')) {
        if (item == "cpe") {
            t.use_cpe = true;
        } else if (item == "vsr") {
            t.use_vsr = true;
        } else if (item == "shift") {
            t.use_shift = true;
        } else if (!item.empty()) {
            throw ConfigError("unknown toggle '" + item + "' (expected cpe, vsr, shift)");
        }
    }
    return t;
}

}  // namespace

TrainConfig TrainConfig::from_kv(const KVConfig& kv) {
    TrainConfig cfg;
    cfg.model = ModelConfig::preset(kv.get("model.preset", "swin_pico"));
    cfg.model.img_size = kv.get_long("model.img_size", cfg.model.img_size);
    cfg.model.window = kv.get_long("model.window", cfg.model.window);
    cfg.model.num_classes = kv.get_long("model.num_classes", cfg.model.num_classes);
    if (kv.has("model.norm_mode")) {
        const std::string mode = kv.get("model.norm_mode");
        if (mode != "token_units" && mode != "window_ratio") {
            throw ConfigError("model.norm_mode must be token_units or window_ratio");
        }
        cfg.model.norm_mode = mode == "window_ratio" ? NormMode::kWindowRatio : NormMode::kTokenUnits;
    }
    if (kv.has("model.vsa_stages")) {
        cfg.model.set_vsa_stages(parse_stage_list(kv.get("model.vsa_stages")));
    }
    if (kv.has("model.toggles")) {
        cfg.model.set_toggles_all(parse_toggle_list(kv.get("model.toggles")));
    }

    cfg.optim.lr = kv.get_double("optim.lr", cfg.optim.lr);
    cfg.optim.weight_decay = kv.get_double("optim.weight_decay", cfg.optim.weight_decay);
    cfg.optim.beta1 = kv.get_double("optim.beta1", cfg.optim.beta1);
    cfg.optim.beta2 = kv.get_double("optim.beta2", cfg.optim.beta2);
    cfg.optim.warmup_steps = kv.get_long("train.warmup_steps", cfg.optim.warmup_steps);
    cfg.optim.total_steps = kv.get_long("train.steps", cfg.optim.total_steps);

    cfg.batch_size = kv.get_long("train.batch_size", cfg.batch_size);
    cfg.seed = static_cast<uint64_t>(kv.get_long("train.seed", static_cast<long>(cfg.seed)));
    cfg.label_smoothing = kv.get_double("train.label_smoothing", cfg.label_smoothing);
    cfg.eval_every = kv.get_long("train.eval_every", cfg.eval_every);
    cfg.eval_samples = kv.get_long("train.eval_samples", cfg.eval_samples);

    const std::string kind = kv.get("data.kind", "synthetic");
    if (kind == "synthetic") {
        cfg.data.kind = DataSpec::kSynthetic;
        cfg.data.synthetic.img_size = cfg.model.img_size;
        cfg.data.synthetic.num_classes = kv.get_long("data.classes", cfg.model.num_classes);
        cfg.data.synthetic.noise = kv.get_double("data.noise", cfg.data.synthetic.noise);
        cfg.data.synthetic.count = kv.get_long("data.count", cfg.data.synthetic.count);
        const long dseed = kv.get_long("data.seed", 0);
        cfg.data.synthetic.seed = dseed ? static_cast<uint64_t>(dseed) : cfg.seed;
    } else if (kind == "cifar10") {
        cfg.data.kind = DataSpec::kCifar10;
        cfg.data.dir = kv.get("data.dir");
        if (cfg.data.dir.empty()) throw ConfigError("data.dir required for cifar10");
    } else {
        throw ConfigError("unknown data.kind '" + kind + "'");
    }
    cfg.out_dir = kv.get("out.dir", cfg.out_dir);
    cfg.validate();
    return cfg;
}

KVConfig TrainConfig::to_kv() const {
    KVConfig kv;
    kv.set("model.img_size", std::to_string(model.img_size));
    kv.set("model.window", std::to_string(model.window));
    kv.set("model.num_classes", std::to_string(model.num_classes));
    kv.set("model.norm_mode",
           model.norm_mode == NormMode::kWindowRatio ? "window_ratio" : "token_units");
    kv.set("optim.lr", std::to_string(optim.lr));
    kv.set("optim.weight_decay", std::to_string(optim.weight_decay));
    kv.set("optim.beta1", std::to_string(optim.beta1));
    kv.set("optim.beta2", std::to_string(optim.beta2));
    kv.set("train.warmup_steps", std::to_string(optim.warmup_steps));
    kv.set("train.steps", std::to_string(optim.total_steps));
    kv.set("train.batch_size", std::to_string(batch_size));
    kv.set("train.seed", std::to_string(seed));
    kv.set("train.label_smoothing", std::to_string(label_smoothing));
    kv.set("train.eval_every", std::to_string(eval_every));
    kv.set("train.eval_samples", std::to_string(eval_samples));
    kv.set("data.kind", data.kind == DataSpec::kSynthetic ? "synthetic" : "cifar10");
    if (data.kind == DataSpec::kSynthetic) {
        kv.set("data.classes", std::to_string(data.synthetic.num_classes));
        kv.set("data.noise", std::to_string(data.synthetic.noise));
        kv.set("data.count", std::to_string(data.synthetic.count));
        kv.set("data.seed", std::to_string(data.synthetic.seed));
    } else {
        kv.set("data.dir", data.dir);
    }
    kv.set("out.dir", out_dir);
    return kv;
}

void TrainConfig::validate() const {
    model.validate();
    if (optim.lr <= 0) throw ConfigError("optim.lr must be positive");
    if (optim.warmup_steps > optim.total_steps) {
        throw ConfigError("train.warmup_steps exceed train.steps");
    }
    if (batch_size <= 0) throw ConfigError("train.batch_size must be positive");
    if (data.kind == DataSpec::kSynthetic) {
        if (data.synthetic.num_classes != model.num_classes) {
            throw ConfigError("data.classes " + std::to_string(data.synthetic.num_classes) +
                              " != model.num_classes " + std::to_string(model.num_classes));
        }
        if (data.synthetic.img_size != model.img_size) {
            throw ConfigError("synthetic image size does not match model input size");
        }
    }
}

std::unique_ptr<Dataset> open_dataset(const DataSpec& spec, Split split) {
    if (spec.kind == DataSpec::kSynthetic) {
        return std::make_unique<SyntheticDataset>(spec.synthetic, split);
    }
    return std::make_unique<Cifar10Dataset>(spec.dir, split);
}

Tensor smoothed_cross_entropy(const Tensor& logits, long label, Scalar smoothing) {
    const long k = logits.dim(0);
    if (label < 0 || label >= k) throw ContractError("label out of range");
    Tensor logp = log_softmax(logits, 0);
    std::vector<Scalar> target(static_cast<size_t>(k), smoothing / static_cast<Scalar>(k));
    target[static_cast<size_t>(label)] += Scalar(1) - smoothing;
    Tensor t = Tensor::from({k}, std::move(target));
    return scale(sum_all(mul(logp, t)), Scalar(-1));
}

namespace {

std::vector<long> shuffled_indices(long n, uint64_t seed, long epoch) {
    std::vector<long> idx(static_cast<size_t>(n));
    std::iota(idx.begin(), idx.end(), 0L);
    Rng rng(Rng::mix(seed, 0x50f17e + static_cast<uint64_t>(epoch)));
    for (long i = n - 1; i > 0; --i) {
        const long j = static_cast<long>(rng.next_below(static_cast<uint64_t>(i + 1)));
        std::swap(idx[static_cast<size_t>(i)], idx[static_cast<size_t>(j)]);
    }
    return idx;
}

std::string format_double(double v) {
    std::ostringstream out;
    out.precision(10);
    out << v;
    return out.str();
}

}  // namespace

TrainResult train(const TrainConfig& config) {
    config.validate();
    std::filesystem::create_directories(config.out_dir);
    auto train_data = open_dataset(config.data, Split::kTrain);
    auto val_data = open_dataset(config.data, Split::kVal);
    if (train_data->image_size() != config.model.img_size) {
        throw ConfigError("dataset image size " + std::to_string(train_data->image_size()) +
                          " != model input " + std::to_string(config.model.img_size));
    }
    if (train_data->num_classes() != config.model.num_classes) {
        throw ConfigError("dataset classes " + std::to_string(train_data->num_classes()) +
                          " != model classes " + std::to_string(config.model.num_classes));
    }

    Model model(config.model, config.seed);
    AdamW optimizer(model.parameters(), config.optim);
    Rng run_rng(Rng::mix(config.seed, 0xbeef));

    const std::string metrics_path = config.out_dir + "/metrics.csv";
    std::ofstream metrics(metrics_path);
    if (!metrics) throw ConfigError("cannot write metrics to '" + metrics_path + "'");
    metrics << "step,lr,loss,val_top1\n";

    TrainResult result;
    result.metrics_path = metrics_path;
    const long n_train = train_data->size();
    std::vector<long> order;
    long cursor = 0, epoch = 0;

    for (long step = 0; step < config.optim.total_steps; ++step) {
        optimizer.zero_grad();
        Scalar batch_loss = 0;
        for (long b = 0; b < config.batch_size; ++b) {
            if (cursor == 0) order = shuffled_indices(n_train, config.seed, epoch);
            const Sample sample = train_data->get(order[static_cast<size_t>(cursor)]);
            cursor = (cursor + 1) % n_train;
            if (cursor == 0) ++epoch;
            Tensor logits = model.forward(sample.image);
            Tensor ce = smoothed_cross_entropy(logits, sample.label, config.label_smoothing);
            batch_loss += ce.item();
            backward(scale(ce, Scalar(1) / static_cast<Scalar>(config.batch_size)));
        }
        batch_loss /= static_cast<Scalar>(config.batch_size);
        if (!std::isfinite(batch_loss)) {
            throw NumericError("non-finite loss at step " + std::to_string(step) + " (config: " +
                               config.to_kv().serialize() + ")");
        }
        const Scalar lr = lr_at(step, config.optim);
        optimizer.step(lr);
        result.step_losses.push_back(batch_loss);

        metrics << step << ',' << format_double(lr) << ',' << format_double(batch_loss) << ',';
        if (config.eval_every > 0 &&
            (step % config.eval_every == config.eval_every - 1 ||
             step + 1 == config.optim.total_steps)) {
            const EvalResult ev = evaluate(model, *val_data, config.eval_samples);
            metrics << format_double(ev.top1);
        }
        metrics << '\n';
    }
    metrics.flush();

    const EvalResult train_acc = evaluate(model, *train_data, config.eval_samples);
    result.final_train_top1 = train_acc.top1;

    TrainState state;
    optimizer.export_state(state);
    state.step = config.optim.total_steps;
    state.rng_state = run_rng.state();
    result.checkpoint_path = config.out_dir + "/checkpoint.bin";
    save_checkpoint(result.checkpoint_path, model, &state);
    return result;
}

EvalResult evaluate(Model& model, const Dataset& dataset, long max_samples) {
    const long k = dataset.num_classes();
    const long n = max_samples < 0 ? dataset.size() : std::min(max_samples, dataset.size());
    if (n == 0) throw ContractError("evaluate: empty dataset");
    if (dataset.image_size() != model.config().img_size) {
        throw ConfigError("evaluate: dataset image size " + std::to_string(dataset.image_size()) +
                          " != model input " + std::to_string(model.config().img_size));
    }
    if (k != model.config().num_classes) {
        throw ConfigError("evaluate: dataset classes " + std::to_string(k) + " != model classes " +
                          std::to_string(model.config().num_classes));
    }
    EvalResult result;
    result.samples = n;
    std::vector<long> correct(static_cast<size_t>(k), 0), totals(static_cast<size_t>(k), 0);
    long top1 = 0, top5 = 0;
    for (long i = 0; i < n; ++i) {
        const Sample sample = dataset.get(i);
        NoGradGuard no_grad;
        Tensor logits = model.forward(sample.image);
        const auto values = logits.data();
        std::vector<long> rank(static_cast<size_t>(k));
        std::iota(rank.begin(), rank.end(), 0L);
        std::stable_sort(rank.begin(), rank.end(),
                         [&](long a, long b) { return values[a] > values[b]; });
        totals[static_cast<size_t>(sample.label)]++;
        if (rank[0] == sample.label) {
            ++top1;
            correct[static_cast<size_t>(sample.label)]++;
        }
        for (long j = 0; j < std::min(5L, k); ++j) {
            if (rank[static_cast<size_t>(j)] == sample.label) {
                ++top5;
                break;
            }
        }
    }
    result.top1 = static_cast<Scalar>(top1) / static_cast<Scalar>(n);
    result.top5 = static_cast<Scalar>(top5) / static_cast<Scalar>(n);
    for (long c = 0; c < k; ++c) {
        result.per_class.push_back(totals[static_cast<size_t>(c)] == 0
                                       ? Scalar(0)
                                       : static_cast<Scalar>(correct[static_cast<size_t>(c)]) /
                                             static_cast<Scalar>(totals[static_cast<size_t>(c)]));
    }
    return result;
}

// -------------------------------------------------------------- gradcheck

namespace {

std::string class_of_param(const std::string& name) {
    if (name.find(".vsr.") != std::string::npos) return "vsr_conv";
    if (name.find(".cpe.") != std::string::npos) return "cpe_kernel";
    if (name.find("rel_pos") != std::string::npos) return "rel_pos";
    if (name.find(".attn.wo") != std::string::npos || name.find(".attn.bo") != std::string::npos) {
        return "attn_out";
    }
    if (name.find(".attn.") != std::string::npos) return "qkv";
    if (name.find(".ffn.") != std::string::npos) return "ffn";
    if (name.find("norm") != std::string::npos) return "norms";
    if (name.rfind("patch_embed", 0) == 0) return "patch_embed";
    if (name.rfind("merge", 0) == 0) return "merge";
    if (name.rfind("head", 0) == 0) return "head";
    return "other";
}

// Small random regression weights move every target window off identity so
// the sampler's piecewise-linear kinks stay away from the probe points.
void randomize_vsr(Model& model, uint64_t seed) {
    Rng rng(Rng::mix(seed, 0x7777));
    for (auto& stage : model.stage_blocks()) {
        for (Block& block : stage) {
            if (!block.vsr) continue;
            for (Parameter* p : {&block.vsr->weight, &block.vsr->bias}) {
                for (auto& v : p->tensor.data_mut()) v = static_cast<Scalar>(rng.normal(0, 0.05));
            }
        }
    }
}

Scalar loss_of(Model& model, const Tensor& image, long label) {
    Tensor logits = model.forward(image);
    return smoothed_cross_entropy(logits, label, 0.1).item();
}

}  // namespace

GradCheckReport gradcheck(const ModelConfig& config, uint64_t seed, Scalar tolerance,
                          Scalar epsilon, long coords_per_param) {
    GradCheckReport report;
    report.tolerance = tolerance;

    Model model(config, seed);
    randomize_vsr(model, seed);
    Rng data_rng(Rng::mix(seed, 0xda7a));
    Tensor image = Tensor::rand_uniform({config.img_size, config.img_size, 3}, data_rng);
    const long label = 1 % config.num_classes;

    // analytic gradients
    {
        Tensor logits = model.forward(image);
        Tensor loss = smoothed_cross_entropy(logits, label, 0.1);
        backward(loss);
    }
    ParamRefs params = model.parameters();
    std::map<std::string, GradCheckEntry> classes;
    bool vsr_nonzero = false;
    Rng pick_rng(Rng::mix(seed, 0x9151));
    for (Parameter* p : params) {
        const std::string cls = class_of_param(p->name);
        auto& entry = classes[cls];
        entry.param_class = cls;
        std::vector<Scalar> analytic(static_cast<size_t>(p->size()), 0);
        if (p->tensor.has_grad()) {
            analytic.assign(p->tensor.grad().begin(), p->tensor.grad().end());
        }
        if (cls == "vsr_conv") {
            for (Scalar g : analytic) vsr_nonzero = vsr_nonzero || g != Scalar(0);
        }
        const long n = p->size();
        const long probes = std::min<long>(coords_per_param, n);
        auto values = p->tensor.data_mut();
        for (long t = 0; t < probes; ++t) {
            const long j = probes == n ? t : static_cast<long>(pick_rng.next_below(
                                                 static_cast<uint64_t>(n)));
            const Scalar keep = values[j];
            NoGradGuard no_grad;
            values[j] = keep + epsilon;
            const Scalar up = loss_of(model, image, label);
            values[j] = keep - epsilon;
            const Scalar down = loss_of(model, image, label);
            values[j] = keep;
            const Scalar fd = (up - down) / (2 * epsilon);
            const Scalar a = analytic[static_cast<size_t>(j)];
            // Denominator floor puts sub-1e-5 gradients on an absolute scale:
            // central differences bottom out near |loss|*eps/epsilon ~ 1e-11,
            // so pure relative error would be meaningless down there.
            const Scalar rel = std::fabs(a - fd) /
                               std::max({std::fabs(a), std::fabs(fd), Scalar(1e-5)});
            entry.max_rel_err = std::max(entry.max_rel_err, rel);
            entry.coords_checked++;
        }
    }
    report.vsr_grads_nonzero = vsr_nonzero;
    report.pass = true;
    for (auto& [cls, entry] : classes) {
        entry.pass = entry.max_rel_err < tolerance;
        report.pass = report.pass && entry.pass;
        report.entries.push_back(entry);
    }

    // ablation hook: detached coordinates must silence the regression head
    {
        Model ablated(config, seed);
        randomize_vsr(ablated, seed);
        ablated.options().coordinate_gradients = false;
        Tensor logits = ablated.forward(image);
        backward(smoothed_cross_entropy(logits, label, 0.1));
        bool all_zero = true;
        for (Parameter* p : ablated.parameters()) {
            if (class_of_param(p->name) != "vsr_conv") continue;
            if (!p->tensor.has_grad()) continue;
            for (Scalar g : p->tensor.grad()) all_zero = all_zero && g == Scalar(0);
        }
        report.detached_vsr_grads_zero = all_zero;
    }
    report.pass = report.pass && report.vsr_grads_nonzero && report.detached_vsr_grads_zero;
    return report;
}

}  // namespace vsa
