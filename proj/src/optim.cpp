#include "vsa/optim.hpp"

#include <cmath>

namespace vsa {

Scalar lr_at(long step, const OptimConfig& cfg) {
    if (cfg.lr <= 0) throw ConfigError("learning rate must be positive");
    if (cfg.warmup_steps > cfg.total_steps) {
        throw ConfigError("warmup_steps exceed total_steps");
    }
    if (step < cfg.warmup_steps) {
        return cfg.lr * static_cast<Scalar>(step) / static_cast<Scalar>(cfg.warmup_steps);
    }
    if (cfg.total_steps <= cfg.warmup_steps) return cfg.lr;
    const Scalar progress = static_cast<Scalar>(step - cfg.warmup_steps) /
                            static_cast<Scalar>(cfg.total_steps - cfg.warmup_steps);
    return Scalar(0.5) * cfg.lr * (Scalar(1) + std::cos(Scalar(M_PI) * progress));
}

namespace {

bool wants_decay(const Parameter& p) {
    // 1-D tensors (biases, norm gains) and the relative position table are
    // excluded from decay.
    if (p.tensor.rank() <= 1) return false;
    if (p.name.find("rel_pos") != std::string::npos) return false;
    return true;
}

}  // namespace

AdamW::AdamW(ParamRefs params, OptimConfig config)
    : params_(std::move(params)), config_(config) {
    m_.resize(params_.size());
    v_.resize(params_.size());
    decays_.resize(params_.size());
    for (size_t i = 0; i < params_.size(); ++i) {
        m_[i].assign(static_cast<size_t>(params_[i]->size()), 0);
        v_[i].assign(static_cast<size_t>(params_[i]->size()), 0);
        decays_[i] = wants_decay(*params_[i]);
    }
}

void AdamW::step(Scalar lr) {
    ++t_;
    const Scalar bc1 = Scalar(1) - std::pow(config_.beta1, static_cast<Scalar>(t_));
    const Scalar bc2 = Scalar(1) - std::pow(config_.beta2, static_cast<Scalar>(t_));
    for (size_t i = 0; i < params_.size(); ++i) {
        Parameter& p = *params_[i];
        auto values = p.tensor.data_mut();
        const long n = p.size();
        const bool has_grad = p.tensor.has_grad();
        const Scalar* g = has_grad ? p.tensor.grad().data() : nullptr;
        Scalar* m = m_[i].data();
        Scalar* v = v_[i].data();
        const Scalar decay = decays_[i] ? config_.weight_decay : Scalar(0);
        for (long j = 0; j < n; ++j) {
            const Scalar gj = g ? g[j] : Scalar(0);
            if (!std::isfinite(gj)) {
                throw NumericError("non-finite gradient in parameter '" + p.name + "'");
            }
            m[j] = config_.beta1 * m[j] + (Scalar(1) - config_.beta1) * gj;
            v[j] = config_.beta2 * v[j] + (Scalar(1) - config_.beta2) * gj * gj;
            const Scalar m_hat = m[j] / bc1;
            const Scalar v_hat = v[j] / bc2;
            values[j] -= lr * (m_hat / (std::sqrt(v_hat) + config_.eps) + decay * values[j]);
        }
    }
}

void AdamW::zero_grad() {
    for (Parameter* p : params_) p->tensor.zero_grad();
}

void AdamW::export_state(TrainState& out) const {
    out.step = t_;
    for (size_t i = 0; i < params_.size(); ++i) {
        out.blobs["adam_m/" + params_[i]->name] = m_[i];
        out.blobs["adam_v/" + params_[i]->name] = v_[i];
    }
}

void AdamW::import_state(const TrainState& in) {
    t_ = in.step;
    for (size_t i = 0; i < params_.size(); ++i) {
        const auto m_it = in.blobs.find("adam_m/" + params_[i]->name);
        const auto v_it = in.blobs.find("adam_v/" + params_[i]->name);
        if (m_it == in.blobs.end() || v_it == in.blobs.end()) {
            throw LoadError("missing optimizer state for '" + params_[i]->name + "'");
        }
        if (m_it->second.size() != m_[i].size() || v_it->second.size() != v_[i].size()) {
            throw LoadError("optimizer state size mismatch for '" + params_[i]->name + "'");
        }
        m_[i] = m_it->second;
        v_[i] = v_it->second;
    }
}

}  // namespace vsa
