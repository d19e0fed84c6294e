#include "vsa/vsa.hpp"

#include <algorithm>

namespace vsa {

Tensor vsr_predict(const Tensor& x, const WindowGrid& grid, const VsrParams& params) {
    if (x.rank() != 3 || x.dim(0) != grid.h || x.dim(1) != grid.w) {
        throw DimensionError("vsr_predict: map " + shape_str(x.shape()) +
                             " does not match grid " + std::to_string(grid.h) + "x" +
                             std::to_string(grid.w));
    }
    const long c = x.dim(2);
    if (params.weight.tensor.shape() != Shape{c, 4 * params.heads}) {
        throw ConfigError("vsr_predict: weight " + shape_str(params.weight.tensor.shape()) +
                          " does not match channels " + std::to_string(c) + " and heads " +
                          std::to_string(params.heads));
    }
    Tensor pooled = avg_pool2d(x, grid.win);  // [wins_y, wins_x, C], count-aware
    Tensor act = leaky_relu(pooled, 0.01);
    Tensor flat = reshape(act, {grid.n_windows(), c});
    return linear(flat, params.weight.tensor, params.bias.tensor);  // [n_win, 4N]
}

namespace {

struct RawSplit {
    Tensor ds_x, ds_y, do_x, do_y;  // each [n_win, N, 1]
};

RawSplit split_raw(const Tensor& raw, long heads) {
    if (raw.rank() != 2 || raw.dim(1) != 4 * heads) {
        throw DimensionError("split_raw: raw " + shape_str(raw.shape()) + " must be [n_win, 4N]");
    }
    const long n_win = raw.dim(0);
    Tensor cube = reshape(raw, {n_win, heads, 4});
    return {slice(cube, 2, 0, 1), slice(cube, 2, 1, 1), slice(cube, 2, 2, 1),
            slice(cube, 2, 3, 1)};
}

}  // namespace

EffectiveTransform effective_transform(const Tensor& raw, const WindowGrid& grid, long heads,
                                       NormMode mode) {
    RawSplit r = split_raw(raw, heads);
    if (mode == NormMode::kWindowRatio) {
        const Scalar rx = static_cast<Scalar>(grid.win) / static_cast<Scalar>(grid.w);
        const Scalar ry = static_cast<Scalar>(grid.win) / static_cast<Scalar>(grid.h);
        return {add_scalar(scale(r.ds_x, rx), 1), add_scalar(scale(r.ds_y, ry), 1),
                scale(r.do_x, rx), scale(r.do_y, ry)};
    }
    return {add_scalar(r.ds_x, 1), add_scalar(r.ds_y, 1), r.do_x, r.do_y};
}

Tensor coords_from_transform(const EffectiveTransform& tf, const WindowGrid& grid) {
    const long n_win = tf.sx.dim(0), heads = tf.sx.dim(1);
    const long w = grid.win, tokens = grid.tokens_per_window();
    const Scalar half = static_cast<Scalar>(w - 1) / 2;

    // relative token coordinates w.r.t. the window center, [1, w^2]
    std::vector<Scalar> rel_x(tokens), rel_y(tokens), ones(tokens, 1);
    for (long p = 0; p < tokens; ++p) {
        rel_x[p] = static_cast<Scalar>(p % w) - half;
        rel_y[p] = static_cast<Scalar>(p / w) - half;
    }
    Tensor rel_x_row = Tensor::from({1, tokens}, rel_x);
    Tensor rel_y_row = Tensor::from({1, tokens}, rel_y);
    Tensor ones_row = Tensor::from({1, tokens}, ones);

    // window centers, constant [n_win, N, w^2]
    Tensor cx = Tensor::zeros({n_win, heads, tokens});
    Tensor cy = Tensor::zeros({n_win, heads, tokens});
    for (long i = 0; i < n_win; ++i) {
        const Scalar vx = static_cast<Scalar>(grid.origin_x(i)) + half;
        const Scalar vy = static_cast<Scalar>(grid.origin_y(i)) + half;
        for (long h = 0; h < heads; ++h) {
            Scalar* px = cx.data_mut().data() + (i * heads + h) * tokens;
            Scalar* py = cy.data_mut().data() + (i * heads + h) * tokens;
            std::fill(px, px + tokens, vx);
            std::fill(py, py + tokens, vy);
        }
    }

    // (x*, y*) = rel * s + o + center
    Tensor xs = add(add(matmul(tf.sx, rel_x_row), matmul(tf.ox, ones_row)), cx);
    Tensor ys = add(add(matmul(tf.sy, rel_y_row), matmul(tf.oy, ones_row)), cy);
    Tensor xs4 = reshape(xs, {n_win, heads, tokens, 1});
    Tensor ys4 = reshape(ys, {n_win, heads, tokens, 1});
    return concat({xs4, ys4}, 3);
}

Tensor target_window_coords(const Tensor& raw, const WindowGrid& grid, long heads, NormMode mode) {
    return coords_from_transform(effective_transform(raw, grid, heads, mode), grid);
}

Tensor cpe(const Tensor& z, const CpeParams& params) {
    return add(z, depthwise_conv2d(z, params.kernel.tensor));
}

Tensor vsa_attention(const Tensor& x, const BlockParams& params, const VsrParams& vsr,
                     const VsaOptions& opts, VsaRecorder* recorder) {
    if (x.rank() != 3 || x.dim(2) != params.channels) {
        throw ConfigError("vsa_attention: map " + shape_str(x.shape()) +
                          " does not match block channels " + std::to_string(params.channels));
    }
    if (vsr.heads != params.heads) {
        throw ConfigError("vsa_attention: regression heads " + std::to_string(vsr.heads) +
                          " != attention heads " + std::to_string(params.heads));
    }
    const long heads = params.heads, hd = params.head_dim(), c = params.channels;

    auto [windows, grid] = partition_windows(x, params.win);
    const long n_win = grid.n_windows(), tokens = grid.tokens_per_window();
    Tensor q = reshape(linear(windows, params.wq.tensor, params.bq.tensor),
                       {n_win, tokens, heads, hd});

    // keys/values come from the full (padded) map, projected before sampling
    Tensor padded = pad2d(x, grid.padded_h(), grid.padded_w());
    Tensor kv = linear(padded, params.wkv.tensor, params.bkv.tensor);
    Tensor k_map = slice(kv, 2, 0, c);
    Tensor v_map = slice(kv, 2, c, c);

    Tensor raw = vsr_predict(x, grid, vsr);
    EffectiveTransform tf = effective_transform(raw, grid, heads, opts.norm_mode);
    Tensor coords = coords_from_transform(tf, grid);  // [n_win, N, w^2, 2]

    if (recorder) {
        const Scalar* psx = tf.sx.data().data();
        const Scalar* psy = tf.sy.data().data();
        const Scalar* pox = tf.ox.data().data();
        const Scalar* poy = tf.oy.data().data();
        for (long i = 0; i < n_win; ++i) {
            for (long h = 0; h < heads; ++h) {
                WindowTransformRecord rec;
                rec.layer = recorder->current_layer;
                rec.head = h;
                rec.window = i;
                rec.sx = psx[i * heads + h];
                rec.sy = psy[i * heads + h];
                rec.ox = pox[i * heads + h];
                rec.oy = poy[i * heads + h];
                rec.origin_x = grid.origin_x(i);
                rec.origin_y = grid.origin_y(i);
                rec.win = grid.win;
                rec.map_h = grid.h;
                rec.map_w = grid.w;
                recorder->records.push_back(rec);
            }
        }
    }

    // per-head sampling of the projected maps at that head's coordinates
    std::vector<Tensor> k_parts, v_parts;
    k_parts.reserve(heads);
    v_parts.reserve(heads);
    for (long h = 0; h < heads; ++h) {
        Tensor coords_h = reshape(slice(coords, 1, h, 1), {n_win * tokens, 2});
        Tensor k_h = slice(k_map, 2, h * hd, hd);
        Tensor v_h = slice(v_map, 2, h * hd, hd);
        Tensor ks = grid_sample_bilinear(k_h, coords_h, opts.coordinate_gradients);
        Tensor vs = grid_sample_bilinear(v_h, coords_h, opts.coordinate_gradients);
        k_parts.push_back(reshape(ks, {n_win, tokens, 1, hd}));
        v_parts.push_back(reshape(vs, {n_win, tokens, 1, hd}));
    }
    Tensor k_samp = heads == 1 ? k_parts[0] : concat(k_parts, 2);
    Tensor v_samp = heads == 1 ? v_parts[0] : concat(v_parts, 2);

    Tensor ctx = window_mhsa(q, k_samp, v_samp, Tensor(), Tensor());
    Tensor out = linear(reshape(ctx, {n_win, tokens, c}), params.wo.tensor, params.bo.tensor);
    return merge_windows(out, grid);
}

Tensor vsa_block(const Tensor& z, const BlockParams& params, const std::optional<VsrParams>& vsr,
                 const std::optional<CpeParams>& cpe_params, const BlockToggles& toggles,
                 bool shifted, const VsaOptions& opts, VsaRecorder* recorder) {
    Tensor x = z;
    if (toggles.use_cpe) {
        if (!cpe_params) throw ConfigError("vsa_block: CPE enabled but no kernel present");
        x = cpe(x, *cpe_params);
    }
    Tensor normed = layer_norm(x, params.norm1_gain.tensor, params.norm1_bias.tensor);
    Tensor attended;
    if (toggles.use_vsr) {
        if (!vsr) throw ConfigError("vsa_block: VSR enabled but no regression head present");
        attended = vsa_attention(normed, params, *vsr, opts, recorder);
    } else {
        attended = baseline_attention(normed, params, shifted && toggles.use_shift);
    }
    Tensor y = add(x, attended);
    return ffn_sublayer(y, params);
}

}  // namespace vsa
