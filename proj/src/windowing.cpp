#include "vsa/windowing.hpp"

#include <cstring>

namespace vsa {

WindowGrid::WindowGrid(long h_, long w_, long win_) : h(h_), w(w_), win(win_) {
    if (win <= 0) throw ConfigError("window size must be positive, got " + std::to_string(win));
    if (h <= 0 || w <= 0) throw ConfigError("token map extents must be positive");
    wins_y = (h + win - 1) / win;
    wins_x = (w + win - 1) / win;
    pad_h = wins_y * win - h;
    pad_w = wins_x * win - w;
}

std::pair<Tensor, WindowGrid> partition_windows(const Tensor& x, long win) {
    if (x.rank() != 3) {
        throw DimensionError("partition_windows: expected [H,W,C], got " + shape_str(x.shape()));
    }
    const WindowGrid grid(x.dim(0), x.dim(1), win);
    const long c = x.dim(2);
    const long n_win = grid.n_windows(), tokens = grid.tokens_per_window();
    Tensor out = op_result({n_win, tokens, c}, {x});
    const Scalar* px = x.data().data();
    Scalar* po = out.data_mut().data();
    for (long i = 0; i < n_win; ++i) {
        const long oy = grid.origin_y(i), ox = grid.origin_x(i);
        for (long py = 0; py < win; ++py) {
            const long y = oy + py;
            for (long pxx = 0; pxx < win; ++pxx) {
                const long xx = ox + pxx;
                Scalar* dst = po + (i * tokens + py * win + pxx) * c;
                if (y < grid.h && xx < grid.w) {
                    std::memcpy(dst, px + (y * grid.w + xx) * c,
                                sizeof(Scalar) * static_cast<size_t>(c));
                }  // else: stays zero (pad)
            }
        }
    }
    if (out.requires_grad()) {
        out.impl().backprop = [grid, c, tokens](TensorImpl& self) {
            TensorImpl& x = *self.parents[0].ptr();
            x.ensure_grad();
            const Scalar* pg = self.grad.data();
            Scalar* pd = x.grad.data();
            for (long i = 0; i < grid.n_windows(); ++i) {
                const long oy = grid.origin_y(i), ox = grid.origin_x(i);
                for (long py = 0; py < grid.win; ++py) {
                    const long y = oy + py;
                    if (y >= grid.h) continue;
                    for (long pxx = 0; pxx < grid.win; ++pxx) {
                        const long xx = ox + pxx;
                        if (xx >= grid.w) continue;
                        const Scalar* src = pg + (i * tokens + py * grid.win + pxx) * c;
                        Scalar* dst = pd + (y * grid.w + xx) * c;
                        for (long ch = 0; ch < c; ++ch) dst[ch] += src[ch];
                    }
                }
            }
        };
    }
    return {out, grid};
}

Tensor merge_windows(const Tensor& windows, const WindowGrid& grid) {
    if (windows.rank() != 3 || windows.dim(0) != grid.n_windows() ||
        windows.dim(1) != grid.tokens_per_window()) {
        throw DimensionError("merge_windows: windows " + shape_str(windows.shape()) +
                             " inconsistent with grid [" + std::to_string(grid.n_windows()) + "," +
                             std::to_string(grid.tokens_per_window()) + ",C]");
    }
    const long c = windows.dim(2);
    const long tokens = grid.tokens_per_window();
    Tensor out = op_result({grid.h, grid.w, c}, {windows});
    const Scalar* pw = windows.data().data();
    Scalar* po = out.data_mut().data();
    for (long i = 0; i < grid.n_windows(); ++i) {
        const long oy = grid.origin_y(i), ox = grid.origin_x(i);
        for (long py = 0; py < grid.win; ++py) {
            const long y = oy + py;
            if (y >= grid.h) continue;
            for (long pxx = 0; pxx < grid.win; ++pxx) {
                const long xx = ox + pxx;
                if (xx >= grid.w) continue;
                std::memcpy(po + (y * grid.w + xx) * c, pw + (i * tokens + py * grid.win + pxx) * c,
                            sizeof(Scalar) * static_cast<size_t>(c));
            }
        }
    }
    if (out.requires_grad()) {
        out.impl().backprop = [grid, c, tokens](TensorImpl& self) {
            TensorImpl& windows = *self.parents[0].ptr();
            windows.ensure_grad();
            const Scalar* pg = self.grad.data();
            Scalar* pd = windows.grad.data();
            for (long i = 0; i < grid.n_windows(); ++i) {
                const long oy = grid.origin_y(i), ox = grid.origin_x(i);
                for (long py = 0; py < grid.win; ++py) {
                    const long y = oy + py;
                    if (y >= grid.h) continue;
                    for (long pxx = 0; pxx < grid.win; ++pxx) {
                        const long xx = ox + pxx;
                        if (xx >= grid.w) continue;
                        const Scalar* src = pg + (y * grid.w + xx) * c;
                        Scalar* dst = pd + (i * tokens + py * grid.win + pxx) * c;
                        for (long ch = 0; ch < c; ++ch) dst[ch] += src[ch];
                    }
                }
            }
        };
    }
    return out;
}

Tensor cyclic_shift(const Tensor& x, long dy, long dx) {
    if (x.rank() != 3) {
        throw DimensionError("cyclic_shift: expected [H,W,C], got " + shape_str(x.shape()));
    }
    const long h = x.dim(0), w = x.dim(1), c = x.dim(2);
    auto wrap = [](long v, long m) { return ((v % m) + m) % m; };
    Tensor out = op_result(x.shape(), {x});
    const Scalar* px = x.data().data();
    Scalar* po = out.data_mut().data();
    for (long y = 0; y < h; ++y) {
        const long sy = wrap(y - dy, h);
        for (long xx = 0; xx < w; ++xx) {
            const long sx = wrap(xx - dx, w);
            std::memcpy(po + (y * w + xx) * c, px + (sy * w + sx) * c,
                        sizeof(Scalar) * static_cast<size_t>(c));
        }
    }
    if (out.requires_grad()) {
        out.impl().backprop = [h, w, c, dy, dx, wrap](TensorImpl& self) {
            TensorImpl& x = *self.parents[0].ptr();
            x.ensure_grad();
            const Scalar* pg = self.grad.data();
            Scalar* pd = x.grad.data();
            for (long y = 0; y < h; ++y) {
                const long sy = wrap(y - dy, h);
                for (long xx = 0; xx < w; ++xx) {
                    const long sx = wrap(xx - dx, w);
                    const Scalar* src = pg + (y * w + xx) * c;
                    Scalar* dst = pd + (sy * w + sx) * c;
                    for (long ch = 0; ch < c; ++ch) dst[ch] += src[ch];
                }
            }
        };
    }
    return out;
}

ShiftMask shift_attention_mask(const WindowGrid& grid, long displacement) {
    if (displacement < 0 || displacement >= grid.win) {
        throw ConfigError("shift_attention_mask: displacement " + std::to_string(displacement) +
                          " must lie in [0, window size)");
    }
    const long tokens = grid.tokens_per_window();
    ShiftMask result;
    result.displacement = displacement;
    result.mask = Tensor::zeros({grid.n_windows(), tokens, tokens});
    if (displacement == 0) return result;

    // Region ids on the rolled padded map, 3x3 slice grid as in the shifted
    // window scheme: [0, P-w), [P-w, P-disp), [P-disp, P) along each axis.
    const long ph = grid.padded_h(), pw = grid.padded_w();
    auto region_of = [&](long v, long extent) {
        if (v < extent - grid.win) return 0L;
        if (v < extent - displacement) return 1L;
        return 2L;
    };
    std::vector<long> region(static_cast<size_t>(ph * pw));
    for (long y = 0; y < ph; ++y) {
        for (long x = 0; x < pw; ++x) {
            region[static_cast<size_t>(y * pw + x)] = region_of(y, ph) * 3 + region_of(x, pw);
        }
    }
    Scalar* pm = result.mask.data_mut().data();
    for (long i = 0; i < grid.n_windows(); ++i) {
        const long oy = grid.origin_y(i), ox = grid.origin_x(i);
        for (long p = 0; p < tokens; ++p) {
            const long py = oy + p / grid.win, px = ox + p % grid.win;
            const long rp = region[static_cast<size_t>(py * pw + px)];
            for (long q = 0; q < tokens; ++q) {
                const long qy = oy + q / grid.win, qx = ox + q % grid.win;
                const long rq = region[static_cast<size_t>(qy * pw + qx)];
                if (rp != rq) pm[(i * tokens + p) * tokens + q] = kMaskBlocked;
            }
        }
    }
    return result;
}

}  // namespace vsa
