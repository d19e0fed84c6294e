#pragma once

#include <memory>

#include "vsa/config.hpp"
#include "vsa/data.hpp"
#include "vsa/optim.hpp"

namespace vsa {

struct DataSpec {
    enum Kind { kSynthetic, kCifar10 } kind = kSynthetic;
    SyntheticSpec synthetic;
    std::string dir;  // CIFAR-10 batch directory
};

struct TrainConfig {
    ModelConfig model = ModelConfig::preset("swin_pico");
    OptimConfig optim;
    DataSpec data;
    long batch_size = 8;
    uint64_t seed = 42;
    Scalar label_smoothing = 0.1;
    long eval_every = 100;
    long eval_samples = 256;
    std::string out_dir = "runs/out";

    static TrainConfig from_kv(const KVConfig& kv);
    KVConfig to_kv() const;
    void validate() const;
};

std::unique_ptr<Dataset> open_dataset(const DataSpec& spec, Split split);

// Cross-entropy with label smoothing over logits [K]; returns a scalar graph node.
Tensor smoothed_cross_entropy(const Tensor& logits, long label, Scalar smoothing);

struct TrainResult {
    std::string checkpoint_path;
    std::string metrics_path;
    Scalar final_train_top1 = 0;
    std::vector<Scalar> step_losses;
};

// Seeded end-to-end loop: batches in pre-shuffled order, AdamW with warmup +
// cosine, metrics CSV (step,lr,loss,val_top1), final checkpoint.
TrainResult train(const TrainConfig& config);

struct EvalResult {
    Scalar top1 = 0;
    Scalar top5 = 0;  // only meaningful when the dataset has >= 5 classes
    std::vector<Scalar> per_class;
    long samples = 0;
};

EvalResult evaluate(Model& model, const Dataset& dataset, long max_samples = -1);

struct GradCheckEntry {
    std::string param_class;
    Scalar max_rel_err = 0;
    long coords_checked = 0;
    bool pass = false;
};

struct GradCheckReport {
    std::vector<GradCheckEntry> entries;
    Scalar tolerance = 1e-4;
    bool pass = false;
    bool vsr_grads_nonzero = false;        // with the sampler's coordinate grads on
    bool detached_vsr_grads_zero = false;  // with the test hook off
};

// Central finite differences against the analytic gradients of a smoothed
// cross-entropy loss, grouped per parameter class. The regression head is
// nudged off identity so the sampler sits at generic coordinates.
GradCheckReport gradcheck(const ModelConfig& config, uint64_t seed, Scalar tolerance = 1e-4,
                          Scalar epsilon = 1e-5, long coords_per_param = 6);

}  // namespace vsa
