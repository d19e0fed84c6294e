#pragma once

#include <iosfwd>

#include "vsa/backbone.hpp"

namespace vsa {

struct CostRow {
    std::string name;
    long params = 0;
    double flop_units = 0;  // multiply-accumulates
    double misc_units = 0;  // softmax/norm/activation bookkeeping, off the headline
    bool vsa_extra = false; // CPE + regression + sampling terms
};

struct CostReport {
    std::vector<CostRow> rows;
    long total_params = 0;
    double total_flop_units = 0;
    double total_misc_units = 0;
    double vsa_extra_flop_units = 0;  // measured: sum of rows flagged vsa_extra
    double vsa_extra_analytic = 0;    // (54 + 4N/w^2) HWC summed over VSA blocks
    double overhead_ratio = 0;        // extra / (total - extra)
};

// Exact integer counts from the live parameter registry, grouped per layer.
long count_params(Model& model, std::vector<std::pair<std::string, long>>* per_layer = nullptr);

// Structural MAC tally for a model built from `config`; one MAC = one unit,
// the convention under which the Swin-T baseline comes out at 4.5G.
CostReport count_flops(const ModelConfig& config);

// The extra-cost term of the varied-size path for one layer.
double analytic_extra_cost(long h, long w, long c, long n_heads, long win);

struct ScaleHistogram {
    long layer = 0;
    long head = 0;
    char axis = 'x';
    double lo = 0.0, hi = 4.0;
    long bins = 64;
    std::vector<long> counts;  // bins + 2, [0] underflow and [bins+1] overflow

    long bin_of(double value) const;
    double edge(long i) const { return lo + (hi - lo) * static_cast<double>(i) / bins; }
    long total() const;
};

// Runs the batch through the model and bins the effective scales of every
// (layer, head, window). Requires at least one varied-size block.
std::vector<ScaleHistogram> collect_scale_stats(Model& model, const std::vector<Tensor>& batch,
                                                long bins = 64);
void write_scale_csv(std::ostream& out, const std::vector<ScaleHistogram>& histograms);

struct WindowRect {
    long layer = 0, head = 0, window = 0, image = 0;
    double def[4] = {0, 0, 0, 0};     // x0, y0, x1, y1 (token units)
    double target[4] = {0, 0, 0, 0};  // affine image of the default rect
};

std::vector<WindowRect> export_window_rects(Model& model, const Tensor& image, long image_id = 0);
void write_rects_jsonl(std::ostream& out, const std::vector<WindowRect>& rects);

}  // namespace vsa
