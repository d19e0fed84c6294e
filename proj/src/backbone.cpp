#include "vsa/backbone.hpp"

#include <algorithm>
#include <cstring>
#include <fstream>
#include <set>
#include <sstream>

namespace vsa {

namespace {

std::string toggles_text(const BlockToggles& t) {
    std::vector<std::string> on;
    if (t.use_cpe) on.push_back("cpe");
    if (t.use_vsr) on.push_back("vsr");
    if (t.use_shift) on.push_back("shift");
    if (on.empty()) return "none";
    std::string joined = on[0];
    for (size_t i = 1; i < on.size(); ++i) joined += "+" + on[i];
    return joined;
}

BlockToggles toggles_from_text(const std::string& text) {
    BlockToggles t{false, false, false};
    if (text == "none") return t;
    std::stringstream ss(text);
    std::string item;
    while (std::getline(ss, item, '+')) {
        if (item == "cpe") {
            t.use_cpe = true;
        } else if (item == "vsr") {
            t.use_vsr = true;
        } else if (item == "shift") {
            t.use_shift = true;
        } else {
            throw ConfigError("unknown toggle '" + item + "'");
        }
    }
    return t;
}

std::string join_longs(const std::vector<long>& v, char sep = ',') {
    std::string out;
    for (size_t i = 0; i < v.size(); ++i) {
        if (i) out += sep;
        out += std::to_string(v[i]);
    }
    return out;
}

std::vector<long> parse_longs(const std::string& text, char sep = ',') {
    std::vector<long> out;
    std::stringstream ss(text);
    std::string item;
    while (std::getline(ss, item, sep)) {
        if (!item.empty()) out.push_back(std::stol(item));
    }
    return out;
}

}  // namespace

ModelConfig ModelConfig::preset(const std::string& name) {
    ModelConfig cfg;
    if (name == "swin_tiny") {
        // defaults above
    } else if (name == "swin_pico") {
        cfg.img_size = 64;
        cfg.embed_dim = 32;
        cfg.depths = {1, 1, 2, 1};
        cfg.heads = {1, 2, 4, 8};
        cfg.num_classes = 10;
    } else if (name == "swin_nano") {
        cfg.img_size = 16;
        cfg.embed_dim = 8;
        cfg.depths = {1, 1, 1, 1};
        cfg.heads = {1, 2, 4, 8};
        cfg.num_classes = 10;
    } else {
        throw ConfigError("unknown preset '" + name + "'");
    }
    cfg.stage_toggles.assign(cfg.depths.size(), BlockToggles{false, false, true});
    return cfg;
}

void ModelConfig::set_vsa_stages(const std::vector<long>& vsa_stages) {
    if (stage_toggles.size() != depths.size()) {
        stage_toggles.assign(depths.size(), BlockToggles{false, false, true});
    }
    for (long s : vsa_stages) {
        if (s < 1 || s > stages()) {
            throw ConfigError("vsa stage " + std::to_string(s) + " out of range 1.." +
                              std::to_string(stages()));
        }
        stage_toggles[static_cast<size_t>(s - 1)] = BlockToggles{true, true, false};
    }
}

void ModelConfig::set_toggles_all(const BlockToggles& t) {
    stage_toggles.assign(depths.size(), t);
}

bool ModelConfig::any_vsa() const {
    for (const auto& t : stage_toggles) {
        if (t.use_vsr) return true;
    }
    return false;
}

void ModelConfig::validate() const {
    if (img_size <= 0 || img_size % patch_size != 0) {
        throw ConfigError("img_size " + std::to_string(img_size) + " must divide by patch_size " +
                          std::to_string(patch_size));
    }
    if (depths.empty() || depths.size() != heads.size()) {
        throw ConfigError("depths and heads must list the same number of stages");
    }
    if (stage_toggles.size() != depths.size()) {
        throw ConfigError("stage_toggles must cover every stage");
    }
    for (long s = 0; s < stages(); ++s) {
        const long c = stage_channels(s);
        if (heads[static_cast<size_t>(s)] <= 0 || c % heads[static_cast<size_t>(s)] != 0) {
            throw ConfigError("stage " + std::to_string(s + 1) + ": heads " +
                              std::to_string(heads[static_cast<size_t>(s)]) +
                              " do not divide channels " + std::to_string(c));
        }
    }
    if (window <= 0) throw ConfigError("window must be positive");
    if (mlp_ratio <= 0) throw ConfigError("mlp_ratio must be positive");
    if (num_classes < 2) throw ConfigError("num_classes must be at least 2");
}

std::string ModelConfig::canonical_text() const {
    std::ostringstream out;
    out << "depths=" << join_longs(depths) << "\n";
    out << "embed_dim=" << embed_dim << "\n";
    out << "heads=" << join_longs(heads) << "\n";
    out << "img_size=" << img_size << "\n";
    out << "mlp_ratio=" << mlp_ratio << "\n";
    out << "norm_mode=" << (norm_mode == NormMode::kTokenUnits ? "token_units" : "window_ratio")
        << "\n";
    out << "num_classes=" << num_classes << "\n";
    out << "patch_size=" << patch_size << "\n";
    std::string tg;
    for (size_t i = 0; i < stage_toggles.size(); ++i) {
        if (i) tg += ";";
        tg += toggles_text(stage_toggles[i]);
    }
    out << "stage_toggles=" << tg << "\n";
    out << "window=" << window << "\n";
    return out.str();
}

ModelConfig ModelConfig::from_text(const std::string& text) {
    ModelConfig cfg;
    cfg.stage_toggles.clear();
    std::stringstream ss(text);
    std::string line;
    while (std::getline(ss, line)) {
        if (line.empty()) continue;
        const auto eq = line.find('=');
        if (eq == std::string::npos) throw FormatError("config line without '=': " + line);
        const std::string key = line.substr(0, eq);
        const std::string val = line.substr(eq + 1);
        if (key == "depths") {
            cfg.depths = parse_longs(val);
        } else if (key == "embed_dim") {
            cfg.embed_dim = std::stol(val);
        } else if (key == "heads") {
            cfg.heads = parse_longs(val);
        } else if (key == "img_size") {
            cfg.img_size = std::stol(val);
        } else if (key == "mlp_ratio") {
            cfg.mlp_ratio = std::stol(val);
        } else if (key == "norm_mode") {
            cfg.norm_mode = val == "window_ratio" ? NormMode::kWindowRatio : NormMode::kTokenUnits;
        } else if (key == "num_classes") {
            cfg.num_classes = std::stol(val);
        } else if (key == "patch_size") {
            cfg.patch_size = std::stol(val);
        } else if (key == "stage_toggles") {
            std::stringstream ts(val);
            std::string item;
            while (std::getline(ts, item, ';')) cfg.stage_toggles.push_back(toggles_from_text(item));
        } else if (key == "window") {
            cfg.window = std::stol(val);
        } else {
            throw FormatError("unknown config key '" + key + "'");
        }
    }
    cfg.validate();
    return cfg;
}

PatchMergeParams::PatchMergeParams(const std::string& name, long channels, Rng& rng) {
    norm_gain = Parameter(name + ".norm.gain", {4 * channels}, InitSpec::ones(), rng);
    norm_bias = Parameter(name + ".norm.bias", {4 * channels}, InitSpec::zeros(), rng);
    weight = Parameter(name + ".weight", {4 * channels, 2 * channels}, InitSpec::trunc_normal(0.02),
                       rng);
}

void PatchMergeParams::collect(ParamRefs& out) {
    out.push_back(&norm_gain);
    out.push_back(&norm_bias);
    out.push_back(&weight);
}

Tensor patch_embed(const Tensor& image, const Parameter& weight, const Parameter& bias,
                   const Parameter& norm_gain, const Parameter& norm_bias, long patch_size) {
    if (image.rank() != 3 || image.dim(2) != 3) {
        throw ConfigError("patch_embed: expected [H, W, 3] image, got " + shape_str(image.shape()));
    }
    if (image.dim(0) % patch_size != 0 || image.dim(1) % patch_size != 0) {
        throw ConfigError("patch_embed: image extents " + shape_str(image.shape()) +
                          " not divisible by patch size " + std::to_string(patch_size));
    }
    Tensor patches = space_to_depth(image, patch_size);
    Tensor projected = linear(patches, weight.tensor, bias.tensor);
    return layer_norm(projected, norm_gain.tensor, norm_bias.tensor);
}

Tensor patch_merging(const Tensor& x, const PatchMergeParams& params) {
    long h = x.dim(0), w = x.dim(1);
    Tensor map = x;
    if (h % 2 != 0 || w % 2 != 0) {
        map = pad2d(map, h + h % 2, w + w % 2);
    }
    Tensor grouped = space_to_depth(map, 2);  // [H/2, W/2, 4C]
    Tensor normed = layer_norm(grouped, params.norm_gain.tensor, params.norm_bias.tensor);
    return linear(normed, params.weight.tensor, Tensor());
}

Model::Model(ModelConfig config, uint64_t seed) : config_(std::move(config)), seed_(seed) {
    config_.validate();
    options_.norm_mode = config_.norm_mode;
    Rng rng(seed);
    const long patch_dim = config_.patch_size * config_.patch_size * 3;
    patch_weight_ = Parameter("patch_embed.weight", {patch_dim, config_.embed_dim},
                              InitSpec::trunc_normal(0.02), rng);
    patch_bias_ = Parameter("patch_embed.bias", {config_.embed_dim}, InitSpec::zeros(), rng);
    patch_norm_gain_ = Parameter("patch_embed.norm.gain", {config_.embed_dim}, InitSpec::ones(), rng);
    patch_norm_bias_ = Parameter("patch_embed.norm.bias", {config_.embed_dim}, InitSpec::zeros(), rng);

    for (long s = 0; s < config_.stages(); ++s) {
        const long c = config_.stage_channels(s);
        const long n_heads = config_.heads[static_cast<size_t>(s)];
        const BlockToggles toggles = config_.stage_toggles[static_cast<size_t>(s)];
        std::vector<Block> blocks;
        for (long b = 0; b < config_.depths[static_cast<size_t>(s)]; ++b) {
            const std::string name =
                "stage" + std::to_string(s + 1) + ".block" + std::to_string(b);
            Block block;
            block.toggles = toggles;
            // baseline path carries relative position bias; varied-size drops it
            block.params = BlockParams(name, c, n_heads, config_.window, config_.mlp_ratio,
                                       /*with_rel_pos=*/!toggles.use_vsr, rng);
            if (toggles.use_vsr) {
                block.vsr = VsrParams(name + ".vsr", c, n_heads, rng);
            }
            if (toggles.use_cpe) {
                block.cpe = CpeParams(name + ".cpe", config_.window, c, rng);
            }
            block.shifted = toggles.use_shift && !toggles.use_vsr && (b % 2 == 1);
            blocks.push_back(std::move(block));
        }
        stages_.push_back(std::move(blocks));
        if (s + 1 < config_.stages()) {
            merges_.emplace_back("merge" + std::to_string(s + 1), c, rng);
        }
    }
    const long c_last = config_.stage_channels(config_.stages() - 1);
    final_norm_gain_ = Parameter("final_norm.gain", {c_last}, InitSpec::ones(), rng);
    final_norm_bias_ = Parameter("final_norm.bias", {c_last}, InitSpec::zeros(), rng);
    head_weight_ = Parameter("head.weight", {c_last, config_.num_classes},
                             InitSpec::trunc_normal(0.02), rng);
    head_bias_ = Parameter("head.bias", {config_.num_classes}, InitSpec::zeros(), rng);
}

long Model::layer_index(long stage, long block) const {
    long idx = 0;
    for (long s = 0; s < stage; ++s) idx += config_.depths[static_cast<size_t>(s)];
    return idx + block;
}

Tensor Model::forward(const Tensor& image, VsaRecorder* recorder) const {
    if (image.rank() != 3 || image.dim(0) != config_.img_size || image.dim(1) != config_.img_size ||
        image.dim(2) != 3) {
        throw ConfigError("forward: image " + shape_str(image.shape()) +
                          " does not match configured size " + std::to_string(config_.img_size));
    }
    Tensor z = patch_embed(image, patch_weight_, patch_bias_, patch_norm_gain_, patch_norm_bias_,
                           config_.patch_size);
    for (long s = 0; s < config_.stages(); ++s) {
        const auto& blocks = stages_[static_cast<size_t>(s)];
        for (size_t b = 0; b < blocks.size(); ++b) {
            const Block& blk = blocks[b];
            if (recorder) recorder->current_layer = layer_index(s, static_cast<long>(b));
            z = vsa_block(z, blk.params, blk.vsr, blk.cpe, blk.toggles, blk.shifted, options_,
                          recorder);
        }
        if (s + 1 < config_.stages()) {
            z = patch_merging(z, merges_[static_cast<size_t>(s)]);
        }
    }
    z = layer_norm(z, final_norm_gain_.tensor, final_norm_bias_.tensor);
    Tensor pooled = avg_pool2d(z, std::max(z.dim(0), z.dim(1)));  // [1,1,C]
    Tensor flat = reshape(pooled, {1, z.dim(2)});
    Tensor logits = linear(flat, head_weight_.tensor, head_bias_.tensor);
    return reshape(logits, {config_.num_classes});
}

ParamRefs Model::parameters() {
    ParamRefs out;
    for (Parameter* p : {&patch_weight_, &patch_bias_, &patch_norm_gain_, &patch_norm_bias_}) {
        out.push_back(p);
    }
    for (size_t s = 0; s < stages_.size(); ++s) {
        for (auto& block : stages_[s]) {
            block.params.collect(out);
            if (block.vsr) block.vsr->collect(out);
            if (block.cpe) block.cpe->collect(out);
        }
        if (s < merges_.size()) merges_[s].collect(out);
    }
    for (Parameter* p : {&final_norm_gain_, &final_norm_bias_, &head_weight_, &head_bias_}) {
        out.push_back(p);
    }
    return out;
}

// ----------------------------------------------------------------- checkpoint

namespace {

constexpr char kMagic[8] = {'V', 'S', 'A', 'C', 'K', 'P', 'T', '1'};
constexpr uint8_t kDtypeF64 = 0;
constexpr uint8_t kDtypeU64 = 1;

void write_bytes(std::ofstream& out, const void* data, size_t n) {
    out.write(static_cast<const char*>(data), static_cast<std::streamsize>(n));
}

void write_u32(std::ofstream& out, uint32_t v) { write_bytes(out, &v, sizeof v); }
void write_u64(std::ofstream& out, uint64_t v) { write_bytes(out, &v, sizeof v); }

void read_bytes(std::ifstream& in, void* data, size_t n, const char* what) {
    in.read(static_cast<char*>(data), static_cast<std::streamsize>(n));
    if (in.gcount() != static_cast<std::streamsize>(n)) {
        throw LoadError(std::string("truncated checkpoint while reading ") + what);
    }
}

uint32_t read_u32(std::ifstream& in, const char* what) {
    uint32_t v;
    read_bytes(in, &v, sizeof v, what);
    return v;
}

uint64_t read_u64(std::ifstream& in, const char* what) {
    uint64_t v;
    read_bytes(in, &v, sizeof v, what);
    return v;
}

void write_blob(std::ofstream& out, const std::string& name, uint8_t dtype, const Shape& shape,
                const void* payload, size_t bytes) {
    write_u32(out, static_cast<uint32_t>(name.size()));
    write_bytes(out, name.data(), name.size());
    write_bytes(out, &dtype, 1);
    write_u32(out, static_cast<uint32_t>(shape.size()));
    for (long d : shape) write_u64(out, static_cast<uint64_t>(d));
    write_bytes(out, payload, bytes);
}

struct Blob {
    std::string name;
    uint8_t dtype;
    Shape shape;
    std::vector<char> payload;
};

Blob read_blob(std::ifstream& in) {
    Blob b;
    const uint32_t name_len = read_u32(in, "blob name length");
    b.name.resize(name_len);
    read_bytes(in, b.name.data(), name_len, "blob name");
    read_bytes(in, &b.dtype, 1, "blob dtype");
    const uint32_t rank = read_u32(in, "blob rank");
    b.shape.resize(rank);
    long n = 1;
    for (uint32_t i = 0; i < rank; ++i) {
        b.shape[i] = static_cast<long>(read_u64(in, "blob extent"));
        n *= b.shape[i];
    }
    const size_t elem = b.dtype == kDtypeF64 ? sizeof(double) : sizeof(uint64_t);
    b.payload.resize(static_cast<size_t>(n) * elem);
    read_bytes(in, b.payload.data(), b.payload.size(), ("payload of " + b.name).c_str());
    return b;
}

}  // namespace

void save_checkpoint(const std::string& path, Model& model, const TrainState* state) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw LoadError("cannot open '" + path + "' for writing");
    write_bytes(out, kMagic, sizeof kMagic);
    const std::string config_text = model.config().canonical_text();
    write_u64(out, config_text.size());
    write_bytes(out, config_text.data(), config_text.size());

    ParamRefs params = model.parameters();
    uint64_t n_blobs = params.size() + 3;  // + step, rng, seed
    if (state) n_blobs += state->blobs.size();
    write_u64(out, n_blobs);
    for (Parameter* p : params) {
        // doubles in native (little-endian) order, shape prefixed
        std::vector<double> payload(p->tensor.data().begin(), p->tensor.data().end());
        write_blob(out, "param/" + p->name, kDtypeF64, p->tensor.shape(), payload.data(),
                   payload.size() * sizeof(double));
    }
    if (state) {
        for (const auto& [key, values] : state->blobs) {
            std::vector<double> payload(values.begin(), values.end());
            write_blob(out, "opt/" + key, kDtypeF64, {static_cast<long>(values.size())},
                       payload.data(), payload.size() * sizeof(double));
        }
    }
    const uint64_t step = state ? static_cast<uint64_t>(state->step) : 0;
    const uint64_t rng_state = state ? state->rng_state : 0;
    const uint64_t seed = model.seed();
    write_blob(out, "meta/step", kDtypeU64, {1}, &step, sizeof step);
    write_blob(out, "meta/rng", kDtypeU64, {1}, &rng_state, sizeof rng_state);
    write_blob(out, "meta/seed", kDtypeU64, {1}, &seed, sizeof seed);
    if (!out) throw LoadError("write failed for '" + path + "'");
}

Model load_checkpoint(const std::string& path, TrainState* state) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw LoadError("cannot open '" + path + "'");
    char magic[8];
    read_bytes(in, magic, sizeof magic, "magic");
    if (std::memcmp(magic, kMagic, sizeof kMagic) != 0) {
        throw LoadError("bad magic; not a VSACKPT1 checkpoint");
    }
    const uint64_t config_len = read_u64(in, "config length");
    std::string config_text(config_len, '\0');
    read_bytes(in, config_text.data(), config_len, "config block");
    ModelConfig config = ModelConfig::from_text(config_text);

    const uint64_t n_blobs = read_u64(in, "blob count");
    std::vector<Blob> blobs;
    blobs.reserve(n_blobs);
    for (uint64_t i = 0; i < n_blobs; ++i) blobs.push_back(read_blob(in));

    uint64_t seed = 0;
    for (const Blob& b : blobs) {
        if (b.name == "meta/seed") std::memcpy(&seed, b.payload.data(), sizeof seed);
    }
    Model model(config, seed);
    ParamRefs params = model.parameters();
    std::set<std::string> expected;
    for (Parameter* p : params) expected.insert("param/" + p->name);

    std::set<std::string> seen;
    for (Blob& b : blobs) {
        if (b.name.rfind("param/", 0) == 0) {
            if (!expected.count(b.name)) {
                throw LoadError("unexpected parameter key '" + b.name + "'");
            }
            seen.insert(b.name);
        } else if (b.name.rfind("opt/", 0) == 0) {
            if (state) {
                const double* vals = reinterpret_cast<const double*>(b.payload.data());
                const size_t n = b.payload.size() / sizeof(double);
                state->blobs[b.name.substr(4)] = std::vector<Scalar>(vals, vals + n);
            }
        } else if (b.name == "meta/step") {
            uint64_t v;
            std::memcpy(&v, b.payload.data(), sizeof v);
            if (state) state->step = static_cast<long>(v);
        } else if (b.name == "meta/rng") {
            uint64_t v;
            std::memcpy(&v, b.payload.data(), sizeof v);
            if (state) state->rng_state = v;
        } else if (b.name == "meta/seed") {
            // already handled
        } else {
            throw LoadError("unknown blob '" + b.name + "'");
        }
    }
    for (const std::string& name : expected) {
        if (!seen.count(name)) throw LoadError("missing parameter key '" + name + "'");
    }
    for (Parameter* p : params) {
        for (Blob& b : blobs) {
            if (b.name != "param/" + p->name) continue;
            if (b.shape != p->tensor.shape()) {
                throw LoadError("shape mismatch for '" + b.name + "': file " + shape_str(b.shape) +
                                " vs model " + shape_str(p->tensor.shape()));
            }
            const double* vals = reinterpret_cast<const double*>(b.payload.data());
            auto dst = p->tensor.data_mut();
            for (long i = 0; i < p->tensor.size(); ++i) dst[i] = static_cast<Scalar>(vals[i]);
        }
    }
    return model;
}

}  // namespace vsa
