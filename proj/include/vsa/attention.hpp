#pragma once

#include <optional>

#include "vsa/parameter.hpp"
#include "vsa/windowing.hpp"

namespace vsa {

// Learned additive logit bias indexed by the 2-D displacement between two
// tokens of a w x w window. Table is [(2w-1)^2, N]; the index is fixed.
struct RelPosBiasTable {
    Parameter table;
    std::vector<long> index;  // [w^2 * w^2] bins
    long win = 0;
    long heads = 0;

    RelPosBiasTable() = default;
    RelPosBiasTable(const std::string& name, long win, long heads, Rng& rng);

    // Bias logits [n_win, N, w^2, w^2] ready to add, tiled over windows.
    Tensor logits(long n_windows) const;
};

// Weights of one transformer block. The query and key/value projections are
// kept separate so the varied-size path can project them at different points;
// together they match a fused qkv layer parameter-for-parameter.
struct BlockParams {
    long channels = 0;
    long heads = 0;
    long win = 0;
    long mlp_ratio = 0;

    Parameter norm1_gain, norm1_bias;
    Parameter wq, bq;          // [C, C], [C]
    Parameter wkv, bkv;        // [C, 2C], [2C]
    Parameter wo, bo;          // [C, C], [C]
    Parameter norm2_gain, norm2_bias;
    Parameter ffn_w1, ffn_b1;  // [C, aC], [aC]
    Parameter ffn_w2, ffn_b2;  // [aC, C], [C]
    std::optional<RelPosBiasTable> rel_pos;  // baseline attention only

    BlockParams() = default;
    BlockParams(const std::string& name, long channels, long heads, long win, long mlp_ratio,
                bool with_rel_pos, Rng& rng);

    long head_dim() const { return channels / heads; }
    void collect(ParamRefs& out);
};

// Per-window, per-head scaled dot-product attention over q,k,v shaped
// [n_win, w^2, N, C']. Bias logits are added before the mask, the mask before
// softmax.
Tensor window_mhsa(const Tensor& q, const Tensor& k, const Tensor& v, const Tensor& bias_logits,
                   const Tensor& mask);

// Attention sublayer of the baseline path: partition (optionally cyclically
// shifted with its mask), project q/k/v per window, attend, merge back.
// `x` is the normalized token map [H,W,C].
Tensor baseline_attention(const Tensor& x, const BlockParams& params, bool shifted,
                          bool use_rel_pos = true);

// z + Attn(LN(z)) then + FFN(LN(.)), pre-norm residual block.
Tensor baseline_block(const Tensor& z, const BlockParams& params, bool shifted);

// FFN sublayer with residual: y + W2 gelu(W1 LN(y)).
Tensor ffn_sublayer(const Tensor& y, const BlockParams& params);

}  // namespace vsa
