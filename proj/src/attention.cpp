#include "vsa/attention.hpp"

#include <algorithm>
#include <cmath>

namespace vsa {

RelPosBiasTable::RelPosBiasTable(const std::string& name, long win_, long heads_, Rng& rng)
    : win(win_), heads(heads_) {
    const long span = 2 * win - 1;
    table = Parameter(name, {span * span, heads}, InitSpec::trunc_normal(0.02), rng);
    const long tokens = win * win;
    index.resize(static_cast<size_t>(tokens * tokens));
    for (long p = 0; p < tokens; ++p) {
        const long py = p / win, px = p % win;
        for (long q = 0; q < tokens; ++q) {
            const long qy = q / win, qx = q % win;
            const long dy = py - qy + win - 1;
            const long dx = px - qx + win - 1;
            index[static_cast<size_t>(p * tokens + q)] = dy * span + dx;
        }
    }
}

Tensor RelPosBiasTable::logits(long n_windows) const {
    const long tokens = win * win;
    // [w^2*w^2, N] -> [N, w^2, w^2] -> tile over windows
    Tensor rows = gather_rows(table.tensor, index);
    Tensor cube = reshape(rows, {tokens, tokens, heads});
    Tensor per_head = transpose(cube, {2, 0, 1});
    return repeat_leading(per_head, n_windows);
}

BlockParams::BlockParams(const std::string& name, long channels_, long heads_, long win_,
                         long mlp_ratio_, bool with_rel_pos, Rng& rng)
    : channels(channels_), heads(heads_), win(win_), mlp_ratio(mlp_ratio_) {
    if (channels % heads != 0) {
        throw ConfigError("block " + name + ": heads " + std::to_string(heads) +
                          " do not divide channels " + std::to_string(channels));
    }
    const long c = channels, hidden = mlp_ratio * c;
    const auto tn = InitSpec::trunc_normal(0.02);
    norm1_gain = Parameter(name + ".norm1.gain", {c}, InitSpec::ones(), rng);
    norm1_bias = Parameter(name + ".norm1.bias", {c}, InitSpec::zeros(), rng);
    wq = Parameter(name + ".attn.wq", {c, c}, tn, rng);
    bq = Parameter(name + ".attn.bq", {c}, InitSpec::zeros(), rng);
    wkv = Parameter(name + ".attn.wkv", {c, 2 * c}, tn, rng);
    bkv = Parameter(name + ".attn.bkv", {2 * c}, InitSpec::zeros(), rng);
    wo = Parameter(name + ".attn.wo", {c, c}, tn, rng);
    bo = Parameter(name + ".attn.bo", {c}, InitSpec::zeros(), rng);
    norm2_gain = Parameter(name + ".norm2.gain", {c}, InitSpec::ones(), rng);
    norm2_bias = Parameter(name + ".norm2.bias", {c}, InitSpec::zeros(), rng);
    ffn_w1 = Parameter(name + ".ffn.w1", {c, hidden}, tn, rng);
    ffn_b1 = Parameter(name + ".ffn.b1", {hidden}, InitSpec::zeros(), rng);
    ffn_w2 = Parameter(name + ".ffn.w2", {hidden, c}, tn, rng);
    ffn_b2 = Parameter(name + ".ffn.b2", {c}, InitSpec::zeros(), rng);
    if (with_rel_pos) {
        rel_pos = RelPosBiasTable(name + ".attn.rel_pos", win, heads, rng);
    }
}

void BlockParams::collect(ParamRefs& out) {
    for (Parameter* p : {&norm1_gain, &norm1_bias, &wq, &bq, &wkv, &bkv, &wo, &bo, &norm2_gain,
                         &norm2_bias, &ffn_w1, &ffn_b1, &ffn_w2, &ffn_b2}) {
        out.push_back(p);
    }
    if (rel_pos) out.push_back(&rel_pos->table);
}

Tensor window_mhsa(const Tensor& q, const Tensor& k, const Tensor& v, const Tensor& bias_logits,
                   const Tensor& mask) {
    if (q.rank() != 4 || q.shape() != k.shape() || q.shape() != v.shape()) {
        throw DimensionError("window_mhsa: q/k/v must share shape [n_win, w^2, N, C'], got " +
                             shape_str(q.shape()) + ", " + shape_str(k.shape()) + ", " +
                             shape_str(v.shape()));
    }
    const long n_win = q.dim(0), tokens = q.dim(1), heads = q.dim(2), hd = q.dim(3);
    const Scalar att_scale = Scalar(1) / std::sqrt(static_cast<Scalar>(hd));

    Tensor qh = transpose(q, {0, 2, 1, 3});  // [n_win, N, w^2, C']
    Tensor kh = transpose(k, {0, 2, 3, 1});  // [n_win, N, C', w^2]
    Tensor vh = transpose(v, {0, 2, 1, 3});
    Tensor logits = scale(matmul(qh, kh), att_scale);  // [n_win, N, w^2, w^2]
    if (bias_logits.defined()) {
        if (bias_logits.shape() != logits.shape()) {
            throw DimensionError("window_mhsa: bias logits " + shape_str(bias_logits.shape()) +
                                 " vs attention logits " + shape_str(logits.shape()));
        }
        logits = add(logits, bias_logits);
    }
    if (mask.defined()) {
        if (mask.shape() != Shape{n_win, tokens, tokens}) {
            throw DimensionError("window_mhsa: mask " + shape_str(mask.shape()) +
                                 " does not match [n_win, w^2, w^2]");
        }
        // constant per-window mask tiled across heads
        Tensor tiled = Tensor::zeros({n_win, heads, tokens, tokens});
        const Scalar* pm = mask.data().data();
        Scalar* pt = tiled.data_mut().data();
        const long wsz = tokens * tokens;
        for (long i = 0; i < n_win; ++i) {
            for (long hh = 0; hh < heads; ++hh) {
                std::copy(pm + i * wsz, pm + (i + 1) * wsz, pt + (i * heads + hh) * wsz);
            }
        }
        logits = add(logits, tiled);
    }
    Tensor attn = softmax(logits, 3);
    Tensor ctx = matmul(attn, vh);              // [n_win, N, w^2, C']
    return transpose(ctx, {0, 2, 1, 3});        // [n_win, w^2, N, C']
}

namespace {

// Split per-token projections into per-head layout [n_win, w^2, N, C'].
Tensor to_heads(const Tensor& x, long heads, long head_dim) {
    return reshape(x, {x.dim(0), x.dim(1), heads, head_dim});
}

}  // namespace

Tensor baseline_attention(const Tensor& x, const BlockParams& params, bool shifted,
                          bool use_rel_pos) {
    const long h = x.dim(0), w = x.dim(1);
    const long disp = shifted ? params.win / 2 : 0;
    const WindowGrid grid(h, w, params.win);

    Tensor map = x;
    if (disp > 0) {
        map = pad2d(map, grid.padded_h(), grid.padded_w());
        map = cyclic_shift(map, -disp, -disp);
    }
    auto [windows, wgrid] = partition_windows(map, params.win);
    Tensor q = to_heads(linear(windows, params.wq.tensor, params.bq.tensor), params.heads,
                        params.head_dim());
    Tensor kv = linear(windows, params.wkv.tensor, params.bkv.tensor);
    Tensor k = to_heads(slice(kv, 2, 0, params.channels), params.heads, params.head_dim());
    Tensor v = to_heads(slice(kv, 2, params.channels, params.channels), params.heads,
                        params.head_dim());

    Tensor bias_logits;
    if (use_rel_pos && params.rel_pos) {
        bias_logits = params.rel_pos->logits(wgrid.n_windows());
    }
    Tensor mask;
    if (disp > 0) {
        mask = shift_attention_mask(wgrid, disp).mask;
    }
    Tensor ctx = window_mhsa(q, k, v, bias_logits, mask);
    Tensor merged_in = reshape(ctx, {wgrid.n_windows(), wgrid.tokens_per_window(), params.channels});
    Tensor out = linear(merged_in, params.wo.tensor, params.bo.tensor);
    Tensor merged = merge_windows(out, wgrid);
    if (disp > 0) {
        merged = cyclic_shift(merged, disp, disp);
        merged = slice(slice(merged, 0, 0, h), 1, 0, w);
    }
    return merged;
}

Tensor ffn_sublayer(const Tensor& y, const BlockParams& params) {
    Tensor normed = layer_norm(y, params.norm2_gain.tensor, params.norm2_bias.tensor);
    Tensor hidden = gelu(linear(normed, params.ffn_w1.tensor, params.ffn_b1.tensor));
    Tensor out = linear(hidden, params.ffn_w2.tensor, params.ffn_b2.tensor);
    return add(y, out);
}

Tensor baseline_block(const Tensor& z, const BlockParams& params, bool shifted) {
    Tensor normed = layer_norm(z, params.norm1_gain.tensor, params.norm1_bias.tensor);
    Tensor attended = baseline_attention(normed, params, shifted);
    Tensor y = add(z, attended);
    return ffn_sublayer(y, params);
}

}  // namespace vsa
