#pragma once

#include "vsa/backbone.hpp"
#include "vsa/parameter.hpp"

namespace vsa {

struct OptimConfig {
    Scalar lr = 1e-3;
    Scalar weight_decay = 0.05;
    Scalar beta1 = 0.9;
    Scalar beta2 = 0.999;
    Scalar eps = 1e-8;
    long warmup_steps = 100;
    long total_steps = 2000;
};

// Linear warmup to the peak, cosine decay to zero afterwards.
Scalar lr_at(long step, const OptimConfig& cfg);

// Decoupled weight decay, bias-corrected moments. Weight decay skips
// gain/bias/table parameters the way transformer trainers usually do.
class AdamW {
public:
    AdamW(ParamRefs params, OptimConfig config);

    // Applies one update from the accumulated grads at learning rate `lr`.
    void step(Scalar lr);
    void zero_grad();
    long steps_taken() const { return t_; }

    void export_state(TrainState& out) const;
    void import_state(const TrainState& in);

private:
    ParamRefs params_;
    OptimConfig config_;
    std::vector<std::vector<Scalar>> m_, v_;
    std::vector<bool> decays_;
    long t_ = 0;
};

}  // namespace vsa
