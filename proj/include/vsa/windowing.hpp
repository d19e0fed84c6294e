#pragma once

#include "vsa/tensor.hpp"

namespace vsa {

// Bookkeeping for a fixed w x w partition of an H x W token map. Padding is
// bottom/right so (H + pad_h) and (W + pad_w) divide by w.
struct WindowGrid {
    long h = 0, w = 0;        // original token extents
    long win = 0;             // window size
    long pad_h = 0, pad_w = 0;
    long wins_y = 0, wins_x = 0;

    WindowGrid() = default;
    WindowGrid(long h_, long w_, long win_);

    long padded_h() const { return h + pad_h; }
    long padded_w() const { return w + pad_w; }
    long n_windows() const { return wins_y * wins_x; }
    long tokens_per_window() const { return win * win; }
    // top-left token of window i (row-major window order), padded-map units
    long origin_y(long i) const { return (i / wins_x) * win; }
    long origin_x(long i) const { return (i % wins_x) * win; }
};

// Additive attention mask for the shifted-window scheme: 0 where the token
// pair shares a pre-shift region, -1e9 otherwise. Shape [n_windows, w^2, w^2].
struct ShiftMask {
    Tensor mask;
    long displacement = 0;
};

inline constexpr Scalar kMaskBlocked = -1e9;

// [H,W,C] -> [n_windows, w^2, C]; zero pads bottom/right, windows row-major,
// tokens within a window row-major.
std::pair<Tensor, WindowGrid> partition_windows(const Tensor& x, long win);

// Inverse of partition_windows including the pad crop.
Tensor merge_windows(const Tensor& windows, const WindowGrid& grid);

// Toroidal roll: output(y, x) = input(y - dy mod H, x - dx mod W).
Tensor cyclic_shift(const Tensor& x, long dy, long dx);

// Swin-style mask for a map shifted by -displacement along both axes.
ShiftMask shift_attention_mask(const WindowGrid& grid, long displacement);

}  // namespace vsa
