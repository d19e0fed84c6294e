#include "vsa/analysis.hpp"

#include <nlohmann/json.hpp>

#include <cmath>
#include <map>
#include <ostream>

namespace vsa {

namespace {

// layer-level grouping key: "stage1.block0", "patch_embed", "merge2", "head"...
std::string layer_of(const std::string& param_name) {
    size_t first = param_name.find('.');
    if (first == std::string::npos) return param_name;
    if (param_name.rfind("stage", 0) == 0) {
        size_t second = param_name.find('.', first + 1);
        if (second != std::string::npos) return param_name.substr(0, second);
    }
    return param_name.substr(0, first);
}

}  // namespace

long count_params(Model& model, std::vector<std::pair<std::string, long>>* per_layer) {
    std::vector<std::pair<std::string, long>> rows;
    long total = 0;
    for (Parameter* p : model.parameters()) {
        const std::string layer = layer_of(p->name);
        if (rows.empty() || rows.back().first != layer) {
            rows.emplace_back(layer, 0);
        }
        rows.back().second += p->size();
        total += p->size();
    }
    if (per_layer) *per_layer = std::move(rows);
    return total;
}

double analytic_extra_cost(long h, long w, long c, long n_heads, long win) {
    if (h <= 0 || w <= 0 || c <= 0 || win <= 0) {
        throw ConfigError("analytic_extra_cost: arguments must be positive");
    }
    const double hwc = static_cast<double>(h) * static_cast<double>(w) * static_cast<double>(c);
    return (54.0 + 4.0 * static_cast<double>(n_heads) / static_cast<double>(win * win)) * hwc;
}

CostReport count_flops(const ModelConfig& config) {
    config.validate();
    CostReport report;
    auto push = [&](std::string name, long params, double flops, double misc, bool extra) {
        report.rows.push_back({std::move(name), params, flops, misc, extra});
    };

    const long p = config.patch_size;
    long h = config.img_size / p, w = config.img_size / p;
    const long c0 = config.embed_dim;
    // patch projection + its norm
    push("patch_embed", (p * p * 3 + 1) * c0 + 2 * c0,
         static_cast<double>(h) * w * (p * p * 3) * c0, static_cast<double>(h) * w * c0 * 5, false);

    for (long s = 0; s < config.stages(); ++s) {
        const long c = config.stage_channels(s);
        const long heads = config.heads[static_cast<size_t>(s)];
        const BlockToggles tg = config.stage_toggles[static_cast<size_t>(s)];
        const long win = config.window;
        const WindowGrid grid(h, w, win);
        const long n_win = grid.n_windows();
        const long t_pad = n_win * win * win;  // padded token count seen by attention
        const double hw = static_cast<double>(h) * w;
        const long span = 2 * win - 1;
        for (long b = 0; b < config.depths[static_cast<size_t>(s)]; ++b) {
            const std::string name = "stage" + std::to_string(s + 1) + ".block" + std::to_string(b);
            if (tg.use_cpe) {
                push(name + ".cpe", win * win * c, hw * c * win * win, hw * c, true);
            }
            // attention: q/kv/out projections and the two w^2 x w^2 contractions
            const long proj_params = c * c + c + c * 2 * c + 2 * c + c * c + c;
            const long rel_params = tg.use_vsr ? 0 : span * span * heads;
            const double proj_flops = static_cast<double>(t_pad) * (4.0 * c * c);
            const double attn_flops =
                2.0 * static_cast<double>(n_win) * std::pow(static_cast<double>(win), 4.0) * c;
            const double attn_misc =
                static_cast<double>(n_win) * heads * std::pow(static_cast<double>(win), 4.0) *
                    (tg.use_vsr ? 3.0 : 4.0) +  // softmax (+ bias add on the baseline path)
                static_cast<double>(t_pad) * c * 5.0 * 2.0;  // the block's two layer norms
            push(name + ".attn", proj_params + rel_params + 4 * c, proj_flops + attn_flops,
                 attn_misc, false);
            if (tg.use_vsr) {
                push(name + ".vsr.pool", 0, hw * c, 0, true);
                push(name + ".vsr.conv", c * 4 * heads + 4 * heads,
                     static_cast<double>(n_win) * c * 4 * heads, 0, true);
                push(name + ".sample", 0, static_cast<double>(n_win) * win * win * 4 * c, 0, true);
                report.vsa_extra_analytic += analytic_extra_cost(h, w, c, heads, win);
            }
            // ffn counted on the unpadded map
            const long hidden = config.mlp_ratio * c;
            push(name + ".ffn", c * hidden + hidden + hidden * c + c, hw * 2.0 * c * hidden,
                 hw * hidden * 2.0, false);
        }
        if (s + 1 < config.stages()) {
            const long eh = (h + 1) / 2, ew = (w + 1) / 2;
            push("merge" + std::to_string(s + 1), 4 * c * 2 * c + 8 * c,
                 static_cast<double>(eh) * ew * 4 * c * 2 * c,
                 static_cast<double>(eh) * ew * 4 * c * 5.0, false);
            h = eh;
            w = ew;
        }
    }
    const long c_last = config.stage_channels(config.stages() - 1);
    push("final_norm", 2 * c_last, 0, static_cast<double>(h) * w * c_last * 5.0, false);
    push("head", c_last * config.num_classes + config.num_classes,
         static_cast<double>(c_last) * config.num_classes, static_cast<double>(h) * w * c_last,
         false);

    for (const CostRow& row : report.rows) {
        report.total_params += row.params;
        report.total_flop_units += row.flop_units;
        report.total_misc_units += row.misc_units;
        if (row.vsa_extra) report.vsa_extra_flop_units += row.flop_units;
    }
    const double base = report.total_flop_units - report.vsa_extra_flop_units;
    report.overhead_ratio = base > 0 ? report.vsa_extra_flop_units / base : 0.0;
    return report;
}

long ScaleHistogram::bin_of(double value) const {
    if (value < lo) return 0;
    if (value >= hi) return bins + 1;
    const long b = static_cast<long>(std::floor((value - lo) / (hi - lo) * bins));
    return std::min(b, bins - 1) + 1;
}

long ScaleHistogram::total() const {
    long t = 0;
    for (long c : counts) t += c;
    return t;
}

std::vector<ScaleHistogram> collect_scale_stats(Model& model, const std::vector<Tensor>& batch,
                                                long bins) {
    if (!model.config().any_vsa()) {
        throw ContractError("collect_scale_stats: model has no varied-size attention blocks");
    }
    std::map<std::pair<long, long>, std::pair<ScaleHistogram, ScaleHistogram>> acc;
    for (const Tensor& image : batch) {
        VsaRecorder recorder;
        NoGradGuard no_grad;
        model.forward(image, &recorder);
        for (const WindowTransformRecord& rec : recorder.records) {
            auto key = std::make_pair(rec.layer, rec.head);
            auto it = acc.find(key);
            if (it == acc.end()) {
                ScaleHistogram hx;
                hx.layer = rec.layer;
                hx.head = rec.head;
                hx.axis = 'x';
                hx.bins = bins;
                hx.counts.assign(static_cast<size_t>(bins + 2), 0);
                ScaleHistogram hy = hx;
                hy.axis = 'y';
                it = acc.emplace(key, std::make_pair(hx, hy)).first;
            }
            it->second.first.counts[static_cast<size_t>(it->second.first.bin_of(rec.sx))]++;
            it->second.second.counts[static_cast<size_t>(it->second.second.bin_of(rec.sy))]++;
        }
    }
    std::vector<ScaleHistogram> out;
    for (auto& [key, pair] : acc) {
        out.push_back(std::move(pair.first));
        out.push_back(std::move(pair.second));
    }
    return out;
}

void write_scale_csv(std::ostream& out, const std::vector<ScaleHistogram>& histograms) {
    out << "layer,head,axis,bin_lo,bin_hi,count\n";
    for (const ScaleHistogram& hist : histograms) {
        for (long b = 0; b < static_cast<long>(hist.counts.size()); ++b) {
            if (hist.counts[static_cast<size_t>(b)] == 0) continue;
            out << hist.layer << ',' << hist.head << ',' << hist.axis << ',';
            if (b == 0) {
                out << "-inf," << hist.lo;
            } else if (b == hist.bins + 1) {
                out << hist.hi << ",inf";
            } else {
                out << hist.edge(b - 1) << ',' << hist.edge(b);
            }
            out << ',' << hist.counts[static_cast<size_t>(b)] << '\n';
        }
    }
}

std::vector<WindowRect> export_window_rects(Model& model, const Tensor& image, long image_id) {
    if (!model.config().any_vsa()) {
        throw ContractError("export_window_rects: model has no varied-size attention blocks");
    }
    VsaRecorder recorder;
    {
        NoGradGuard no_grad;
        model.forward(image, &recorder);
    }
    std::vector<WindowRect> rects;
    rects.reserve(recorder.records.size());
    for (const WindowTransformRecord& rec : recorder.records) {
        WindowRect r;
        r.layer = rec.layer;
        r.head = rec.head;
        r.window = rec.window;
        r.image = image_id;
        const double x0 = static_cast<double>(rec.origin_x);
        const double y0 = static_cast<double>(rec.origin_y);
        const double x1 = x0 + static_cast<double>(rec.win);
        const double y1 = y0 + static_cast<double>(rec.win);
        r.def[0] = x0;
        r.def[1] = y0;
        r.def[2] = x1;
        r.def[3] = y1;
        const double cx = x0 + (static_cast<double>(rec.win) - 1) / 2.0;
        const double cy = y0 + (static_cast<double>(rec.win) - 1) / 2.0;
        r.target[0] = (x0 - cx) * rec.sx + rec.ox + cx;
        r.target[1] = (y0 - cy) * rec.sy + rec.oy + cy;
        r.target[2] = (x1 - cx) * rec.sx + rec.ox + cx;
        r.target[3] = (y1 - cy) * rec.sy + rec.oy + cy;
        rects.push_back(r);
    }
    return rects;
}

void write_rects_jsonl(std::ostream& out, const std::vector<WindowRect>& rects) {
    for (const WindowRect& r : rects) {
        nlohmann::ordered_json j;
        j["layer"] = r.layer;
        j["head"] = r.head;
        j["window"] = r.window;
        j["image"] = r.image;
        j["default"] = {r.def[0], r.def[1], r.def[2], r.def[3]};
        j["target"] = {r.target[0], r.target[1], r.target[2], r.target[3]};
        out << j.dump() << '\n';
    }
}

}  // namespace vsa
