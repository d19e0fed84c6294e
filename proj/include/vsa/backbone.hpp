#pragma once

#include <map>
#include <string>

#include "vsa/vsa.hpp"

namespace vsa {

// Four-stage hierarchical transformer description. Stage i runs at channel
// width embed_dim * 2^i; block behavior per stage comes from its toggles.
struct ModelConfig {
    long img_size = 224;
    long patch_size = 4;
    long embed_dim = 96;
    std::vector<long> depths{2, 2, 6, 2};
    std::vector<long> heads{3, 6, 12, 24};
    long window = 7;
    long mlp_ratio = 4;
    long num_classes = 1000;
    std::vector<BlockToggles> stage_toggles;  // defaults to baseline everywhere
    NormMode norm_mode = NormMode::kTokenUnits;

    static ModelConfig preset(const std::string& name);
    // `stages` holds 1-based stage numbers that switch to varied-size blocks.
    void set_vsa_stages(const std::vector<long>& stages);
    void set_toggles_all(const BlockToggles& t);
    bool any_vsa() const;
    long stages() const { return static_cast<long>(depths.size()); }
    long stage_channels(long stage) const { return embed_dim << stage; }
    void validate() const;

    std::string canonical_text() const;
    static ModelConfig from_text(const std::string& text);
};

struct PatchMergeParams {
    Parameter norm_gain, norm_bias;  // over 4C
    Parameter weight;                // [4C, 2C], no bias

    PatchMergeParams() = default;
    PatchMergeParams(const std::string& name, long channels, Rng& rng);
    void collect(ParamRefs& out);
};

struct Block {
    BlockParams params;
    std::optional<VsrParams> vsr;
    std::optional<CpeParams> cpe;
    BlockToggles toggles;
    bool shifted = false;  // odd blocks of shift-enabled baseline stages
};

class Model {
public:
    Model(ModelConfig config, uint64_t seed);

    // image [S, S, 3] -> logits [num_classes]
    Tensor forward(const Tensor& image, VsaRecorder* recorder = nullptr) const;
    // token map entering stage `stage` (0-based); used by analysis exporters.
    ParamRefs parameters();
    const ModelConfig& config() const { return config_; }
    uint64_t seed() const { return seed_; }

    std::vector<std::vector<Block>>& stage_blocks() { return stages_; }
    const std::vector<std::vector<Block>>& stage_blocks() const { return stages_; }
    // Global index of block b of stage s (for recorder layer ids).
    long layer_index(long stage, long block) const;

    VsaOptions& options() { return options_; }
    const VsaOptions& options() const { return options_; }

private:
    ModelConfig config_;
    uint64_t seed_ = 0;
    VsaOptions options_;

    Parameter patch_weight_, patch_bias_;      // [48, C0], [C0]
    Parameter patch_norm_gain_, patch_norm_bias_;
    std::vector<std::vector<Block>> stages_;
    std::vector<PatchMergeParams> merges_;
    Parameter final_norm_gain_, final_norm_bias_;
    Parameter head_weight_, head_bias_;
};

// [Himg, Wimg, 3] -> [Himg/4, Wimg/4, C0]: non-overlapping patch projection
// followed by layer norm.
Tensor patch_embed(const Tensor& image, const Parameter& weight, const Parameter& bias,
                   const Parameter& norm_gain, const Parameter& norm_bias, long patch_size);

// [H, W, C] -> [ceil(H/2), ceil(W/2), 2C]: concatenate 2x2 neighborhoods,
// normalize, project.
Tensor patch_merging(const Tensor& x, const PatchMergeParams& params);

// Optimizer/trainer state carried through checkpoints.
struct TrainState {
    long step = 0;
    uint64_t rng_state = 0;
    std::map<std::string, std::vector<Scalar>> blobs;  // optimizer moments etc.
};

void save_checkpoint(const std::string& path, Model& model, const TrainState* state = nullptr);
// Rebuilds the model from the embedded config and restores every parameter.
Model load_checkpoint(const std::string& path, TrainState* state = nullptr);

}  // namespace vsa
