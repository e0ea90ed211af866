#pragma once

#include <cstdint>
#include <functional>
#include <map>
#include <string>
#include <vector>

#include "mmali/rng.hpp"
#include "mmali/tensor.hpp"

namespace mmali {

enum class Activation {
    Identity,
    Tanh,
    LeakyRelu, // slope 0.2
};

std::string activation_name(Activation a);
Activation activation_from_name(const std::string& name);

/// Feed-forward architecture: layer widths input..output, one hidden
/// activation for all hidden layers, identity output.
struct MLPSpec {
    std::vector<std::size_t> layer_widths;
    Activation hidden_activation = Activation::Tanh;

    MLPSpec() = default;
    MLPSpec(std::vector<std::size_t> widths, Activation hidden);

    std::size_t num_layers() const { return layer_widths.size() - 1; }
    std::size_t input_width() const { return layer_widths.front(); }
    std::size_t output_width() const { return layer_widths.back(); }

    void validate() const;
};

/// Named parameters with a matching gradient slot per parameter. Gradients
/// accumulate across backward passes so one parameter set can collect
/// contributions from several loss branches.
class ParamStore {
public:
    void add(const std::string& name, Tensor init);

    Tensor& param(const std::string& name);
    const Tensor& param(const std::string& name) const;
    Tensor& grad(const std::string& name);
    const Tensor& grad(const std::string& name) const;

    bool has(const std::string& name) const;
    std::vector<std::string> names() const; // sorted
    std::size_t size() const { return params_.size(); }

    void zero_grads();

    /// Bumped whenever parameter values change (adam_step, checkpoint load).
    /// Forward caches snapshot it so a stale cache is detected in backward.
    std::uint64_t revision() const { return revision_; }
    void bump_revision() { ++revision_; }

private:
    std::map<std::string, Tensor> params_;
    std::map<std::string, Tensor> grads_;
    std::uint64_t revision_ = 0;
};

/// Activations recorded by forward for the matching backward.
struct ForwardCache {
    const MLPSpec* spec = nullptr;
    const ParamStore* params = nullptr;
    std::uint64_t revision = 0;
    std::vector<Tensor> activations; // layer inputs a_0..a_{L-1} plus output a_L
};

/// Layer parameter names inside a store: w0/b0, w1/b1, ...
std::string weight_name(std::size_t layer);
std::string bias_name(std::size_t layer);

/// Glorot-uniform weights, zero biases.
void init_params(const MLPSpec& spec, ParamStore& params, Rng& rng);

/// input is batch x in; returns batch x out. Pass a cache to enable backward.
Tensor forward(const MLPSpec& spec, const ParamStore& params, const Tensor& input,
               ForwardCache* cache = nullptr);

/// Accumulates (+=) parameter gradients and returns the gradient w.r.t. the
/// forward input. grad_output must match the forward output shape.
Tensor backward(const MLPSpec& spec, ParamStore& params, const ForwardCache& cache,
                const Tensor& grad_output);

/// Central-difference gradient of an arbitrary scalar loss of the parameters:
/// (f(th+h) - f(th-h)) / 2h per coordinate. The loss callback is evaluated
/// with the store temporarily perturbed in place.
std::map<std::string, Tensor> finite_difference_grad(ParamStore& params,
                                                     const std::function<double()>& loss,
                                                     double h);

/// Spec-level convenience: loss is a function of the network output on one
/// fixed input batch.
std::map<std::string, Tensor> finite_difference_grad(const MLPSpec& spec, ParamStore& params,
                                                     const Tensor& input,
                                                     const std::function<double(const Tensor&)>& loss,
                                                     double h);

/// A network bound to its own parameter store.
struct Mlp {
    MLPSpec spec;
    ParamStore params;

    Mlp() = default;
    Mlp(MLPSpec s, Rng& rng);

    Tensor forward(const Tensor& input, ForwardCache* cache = nullptr) const {
        return mmali::forward(spec, params, input, cache);
    }
    Tensor backward(const ForwardCache& cache, const Tensor& grad_output) {
        return mmali::backward(spec, params, cache, grad_output);
    }
};

} // namespace mmali
