#pragma once

#include <optional>

#include "vsa/attention.hpp"

namespace vsa {

// Window regression head: pooled window features -> per-head raw
// (ds_x, ds_y, do_x, do_y). Zero init keeps every target window at identity.
struct VsrParams {
    Parameter weight;  // [C, 4N], channel layout per head h: 4h + {ds_x, ds_y, do_x, do_y}
    Parameter bias;    // [4N]
    long heads = 0;

    VsrParams() = default;
    VsrParams(const std::string& name, long channels, long heads_, Rng& rng)
        : weight(name + ".weight", {channels, 4 * heads_}, InitSpec::zeros(), rng),
          bias(name + ".bias", {4 * heads_}, InitSpec::zeros(), rng),
          heads(heads_) {}

    void collect(ParamRefs& out) {
        out.push_back(&weight);
        out.push_back(&bias);
    }
};

// Conditional position embedding: residual depthwise conv, kernel = window size.
struct CpeParams {
    Parameter kernel;  // [w, w, C]

    CpeParams() = default;
    CpeParams(const std::string& name, long win, long channels, Rng& rng)
        : kernel(name + ".kernel", {win, win, channels}, InitSpec::trunc_normal(0.02), rng) {}

    void collect(ParamRefs& out) { out.push_back(&kernel); }
};

// How raw regression outputs become effective scales and offsets.
enum class NormMode {
    kTokenUnits,   // s = 1 + ds, o = do (token units)
    kWindowRatio,  // s = 1 + ds*(w/extent), o = do*(w/extent) per axis
};

struct VsaOptions {
    NormMode norm_mode = NormMode::kTokenUnits;
    // Test hook: when false the sampler treats coordinates as constants, so
    // nothing flows back into the regression head.
    bool coordinate_gradients = true;
};

// Effective per-(window, head) transform, each tensor [n_win, N, 1].
struct EffectiveTransform {
    Tensor sx, sy, ox, oy;
};

// One record per (layer, head, window) captured during a forward pass.
struct WindowTransformRecord {
    long layer = 0, head = 0, window = 0;
    Scalar sx = 1, sy = 1, ox = 0, oy = 0;
    long origin_x = 0, origin_y = 0;
    long win = 0;
    long map_h = 0, map_w = 0;
};

struct VsaRecorder {
    long current_layer = 0;
    std::vector<WindowTransformRecord> records;
};

// AveragePool(w) -> LeakyReLU -> 1x1 conv to 4N channels; [n_win, 4N].
Tensor vsr_predict(const Tensor& x, const WindowGrid& grid, const VsrParams& params);

EffectiveTransform effective_transform(const Tensor& raw, const WindowGrid& grid, long heads,
                                       NormMode mode);

// Target coordinates [n_win, N, w^2, 2] ((x, y) in token units, unclamped).
Tensor target_window_coords(const Tensor& raw, const WindowGrid& grid, long heads, NormMode mode);
Tensor coords_from_transform(const EffectiveTransform& tf, const WindowGrid& grid);

// Varied-size window attention over a normalized token map [H,W,C]: queries
// from default windows, keys/values projected over the full (padded) map and
// bilinearly sampled at each head's target window. No relative position bias,
// no shift mask.
Tensor vsa_attention(const Tensor& x, const BlockParams& params, const VsrParams& vsr,
                     const VsaOptions& opts = {}, VsaRecorder* recorder = nullptr);

// z + DepthwiseConv(z).
Tensor cpe(const Tensor& z, const CpeParams& params);

struct BlockToggles {
    bool use_cpe = true;
    bool use_vsr = true;
    bool use_shift = false;
};

// Full transformer block: optional CPE, pre-norm attention sublayer (varied
// size or baseline with relative position bias), FFN sublayer. `shifted`
// applies only on the baseline path; the varied-size path ignores it.
Tensor vsa_block(const Tensor& z, const BlockParams& params, const std::optional<VsrParams>& vsr,
                 const std::optional<CpeParams>& cpe_params, const BlockToggles& toggles,
                 bool shifted, const VsaOptions& opts = {}, VsaRecorder* recorder = nullptr);

}  // namespace vsa
