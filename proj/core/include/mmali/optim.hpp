#pragma once

#include <map>
#include <string>
#include <vector>

#include "mmali/mlp.hpp"
#include "mmali/tensor.hpp"

namespace mmali {

/// Adam with bias correction. Moments are allocated lazily on the first
/// step so one state can be constructed before the store is populated.
struct AdamState {
    double lr = 2e-4;
    double beta1 = 0.5;
    double beta2 = 0.999;
    double eps = 1e-8;
    std::size_t t = 0;
    std::map<std::string, Tensor> m;
    std::map<std::string, Tensor> v;

    AdamState() = default;
    AdamState(double lr_, double beta1_, double beta2_, double eps_ = 1e-8);
};

/// One Adam update from the accumulated gradients. Gradients are zeroed
/// afterwards and the step count increments. In checked mode a non-finite
/// gradient is a failure.
void adam_step(ParamStore& params, AdamState& state);

/// Scales gradients across the given stores so their joint L2 norm is at
/// most max_norm. Returns the pre-clip norm.
double clip_global_grad_norm(const std::vector<ParamStore*>& stores, double max_norm);

/// Exponential moving average of parameters. Before start_iteration the
/// shadow tracks the parameters exactly; afterwards
/// shadow = decay * shadow + (1 - decay) * params.
struct EMAState {
    double decay = 0.9999;
    std::size_t start_iteration = 0;

    EMAState() = default;
    EMAState(double decay_, std::size_t start_iteration_);

    bool has_shadow() const { return !shadow_.empty(); }
    const std::map<std::string, Tensor>& shadow() const;

    /// Writes the shadow values into the store (used to switch a model to
    /// its averaged weights for evaluation).
    void copy_shadow_to(ParamStore& params) const;

    friend void ema_update(EMAState& ema, const ParamStore& params, std::size_t iteration);

private:
    std::map<std::string, Tensor> shadow_;
};

void ema_update(EMAState& ema, const ParamStore& params, std::size_t iteration);

} // namespace mmali
