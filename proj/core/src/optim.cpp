#include "mmali/optim.hpp"

#include <cmath>
#include <stdexcept>

namespace mmali {

AdamState::AdamState(double lr_, double beta1_, double beta2_, double eps_)
    : lr(lr_), beta1(beta1_), beta2(beta2_), eps(eps_) {
    if (lr <= 0.0 || eps <= 0.0) {
        throw std::invalid_argument("AdamState: lr and eps must be positive");
    }
    if (beta1 < 0.0 || beta1 >= 1.0 || beta2 < 0.0 || beta2 >= 1.0) {
        throw std::invalid_argument("AdamState: betas must lie in [0, 1)");
    }
}

void adam_step(ParamStore& params, AdamState& state) {
    state.t += 1;
    const double bc1 = 1.0 - std::pow(state.beta1, static_cast<double>(state.t));
    const double bc2 = 1.0 - std::pow(state.beta2, static_cast<double>(state.t));

    for (const auto& name : params.names()) {
        Tensor& p = params.param(name);
        Tensor& g = params.grad(name);

        auto mit = state.m.find(name);
        if (mit == state.m.end()) {
            mit = state.m.emplace(name, Tensor(p.shape())).first;
            state.v.emplace(name, Tensor(p.shape()));
        }
        Tensor& m = mit->second;
        Tensor& v = state.v.at(name);
        if (!m.same_shape(p)) {
            throw std::logic_error("adam_step: moment shape mismatch for " + name);
        }

        for (std::size_t i = 0; i < p.numel(); ++i) {
            const double gi = g[i];
            if (checked_mode() && !std::isfinite(gi)) {
                throw std::runtime_error("adam_step: non-finite gradient in " + name);
            }
            m[i] = state.beta1 * m[i] + (1.0 - state.beta1) * gi;
            v[i] = state.beta2 * v[i] + (1.0 - state.beta2) * gi * gi;
            const double m_hat = m[i] / bc1;
            const double v_hat = v[i] / bc2;
            p[i] -= state.lr * m_hat / (std::sqrt(v_hat) + state.eps);
        }
        g.fill(0.0);
    }
    params.bump_revision();
}

double clip_global_grad_norm(const std::vector<ParamStore*>& stores, double max_norm) {
    double sq = 0.0;
    for (ParamStore* s : stores) {
        for (const auto& name : s->names()) {
            for (double g : s->grad(name).data()) {
                sq += g * g;
            }
        }
    }
    const double norm = std::sqrt(sq);
    if (norm > max_norm && norm > 0.0) {
        const double scale = max_norm / norm;
        for (ParamStore* s : stores) {
            for (const auto& name : s->names()) {
                for (auto& g : s->grad(name).data()) {
                    g *= scale;
                }
            }
        }
    }
    return norm;
}

EMAState::EMAState(double decay_, std::size_t start_iteration_)
    : decay(decay_), start_iteration(start_iteration_) {
    if (decay < 0.0 || decay >= 1.0) {
        throw std::invalid_argument("EMAState: decay must lie in [0, 1)");
    }
}

const std::map<std::string, Tensor>& EMAState::shadow() const {
    if (shadow_.empty()) {
        throw std::logic_error("EMAState: shadow read before first update");
    }
    return shadow_;
}

void EMAState::copy_shadow_to(ParamStore& params) const {
    for (const auto& [name, t] : shadow()) {
        Tensor& p = params.param(name);
        if (!p.same_shape(t)) {
            throw std::logic_error("EMAState: shadow shape mismatch for " + name);
        }
        p = t;
    }
    params.bump_revision();
}

void ema_update(EMAState& ema, const ParamStore& params, std::size_t iteration) {
    if (iteration < ema.start_iteration || ema.shadow_.empty()) {
        ema.shadow_.clear();
        for (const auto& name : params.names()) {
            ema.shadow_.emplace(name, params.param(name));
        }
        return;
    }
    for (auto& [name, s] : ema.shadow_) {
        const Tensor& p = params.param(name);
        if (!s.same_shape(p)) {
            throw std::logic_error("ema_update: shadow shape mismatch for " + name);
        }
        for (std::size_t i = 0; i < s.numel(); ++i) {
            s[i] = ema.decay * s[i] + (1.0 - ema.decay) * p[i];
        }
    }
}

} // namespace mmali
