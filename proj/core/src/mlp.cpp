#include "mmali/mlp.hpp"

#include <Eigen/Core>

#include <cmath>
#include <stdexcept>

namespace mmali {

namespace {

using MatMap = Eigen::Map<Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>>;
using ConstMatMap =
    Eigen::Map<const Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>>;

ConstMatMap as_matrix(const Tensor& t) {
    return ConstMatMap(t.data().data(), static_cast<Eigen::Index>(t.rows()),
                       static_cast<Eigen::Index>(t.cols()));
}

MatMap as_matrix(Tensor& t) {
    return MatMap(t.data().data(), static_cast<Eigen::Index>(t.rows()),
                  static_cast<Eigen::Index>(t.cols()));
}

constexpr double kLeakySlope = 0.2;

void apply_activation(Activation act, Tensor& t) {
    switch (act) {
    case Activation::Identity:
        return;
    case Activation::Tanh:
        for (auto& v : t.data()) {
            v = std::tanh(v);
        }
        return;
    case Activation::LeakyRelu:
        for (auto& v : t.data()) {
            if (v < 0.0) {
                v *= kLeakySlope;
            }
        }
        return;
    }
}

// Derivative expressed through the post-activation value; valid for all
// activations used here (tanh' = 1 - y^2, leaky relu slope by sign of y).
double activation_grad_from_output(Activation act, double y) {
    switch (act) {
    case Activation::Identity:
        return 1.0;
    case Activation::Tanh:
        return 1.0 - y * y;
    case Activation::LeakyRelu:
        return y > 0.0 ? 1.0 : kLeakySlope;
    }
    return 1.0;
}

} // namespace

std::string activation_name(Activation a) {
    switch (a) {
    case Activation::Identity:
        return "identity";
    case Activation::Tanh:
        return "tanh";
    case Activation::LeakyRelu:
        return "leaky_relu";
    }
    return "?";
}

Activation activation_from_name(const std::string& name) {
    if (name == "identity") {
        return Activation::Identity;
    }
    if (name == "tanh") {
        return Activation::Tanh;
    }
    if (name == "leaky_relu") {
        return Activation::LeakyRelu;
    }
    throw std::invalid_argument("unknown activation: " + name);
}

MLPSpec::MLPSpec(std::vector<std::size_t> widths, Activation hidden)
    : layer_widths(std::move(widths)), hidden_activation(hidden) {
    validate();
}

void MLPSpec::validate() const {
    if (layer_widths.size() < 2) {
        throw std::invalid_argument("MLPSpec: need at least input and output widths");
    }
    for (auto w : layer_widths) {
        if (w < 1) {
            throw std::invalid_argument("MLPSpec: all widths must be >= 1");
        }
    }
}

void ParamStore::add(const std::string& name, Tensor init) {
    if (params_.count(name)) {
        throw std::invalid_argument("ParamStore: duplicate parameter " + name);
    }
    grads_.emplace(name, Tensor(init.shape()));
    params_.emplace(name, std::move(init));
}

Tensor& ParamStore::param(const std::string& name) {
    auto it = params_.find(name);
    if (it == params_.end()) {
        throw std::out_of_range("ParamStore: no parameter named " + name);
    }
    return it->second;
}

const Tensor& ParamStore::param(const std::string& name) const {
    auto it = params_.find(name);
    if (it == params_.end()) {
        throw std::out_of_range("ParamStore: no parameter named " + name);
    }
    return it->second;
}

Tensor& ParamStore::grad(const std::string& name) {
    auto it = grads_.find(name);
    if (it == grads_.end()) {
        throw std::out_of_range("ParamStore: no gradient slot named " + name);
    }
    return it->second;
}

const Tensor& ParamStore::grad(const std::string& name) const {
    auto it = grads_.find(name);
    if (it == grads_.end()) {
        throw std::out_of_range("ParamStore: no gradient slot named " + name);
    }
    return it->second;
}

bool ParamStore::has(const std::string& name) const {
    return params_.count(name) != 0;
}

std::vector<std::string> ParamStore::names() const {
    std::vector<std::string> out;
    out.reserve(params_.size());
    for (const auto& [name, _] : params_) {
        out.push_back(name);
    }
    return out;
}

void ParamStore::zero_grads() {
    for (auto& [_, g] : grads_) {
        g.fill(0.0);
    }
}

std::string weight_name(std::size_t layer) { return "w" + std::to_string(layer); }
std::string bias_name(std::size_t layer) { return "b" + std::to_string(layer); }

void init_params(const MLPSpec& spec, ParamStore& params, Rng& rng) {
    spec.validate();
    for (std::size_t l = 0; l < spec.num_layers(); ++l) {
        const std::size_t fan_in = spec.layer_widths[l];
        const std::size_t fan_out = spec.layer_widths[l + 1];
        const double bound = std::sqrt(6.0 / static_cast<double>(fan_in + fan_out));
        Tensor w({fan_in, fan_out});
        for (auto& v : w.data()) {
            v = rng.uniform(-bound, bound);
        }
        params.add(weight_name(l), std::move(w));
        params.add(bias_name(l), Tensor({1, fan_out}));
    }
}

Tensor forward(const MLPSpec& spec, const ParamStore& params, const Tensor& input,
               ForwardCache* cache) {
    if (input.cols() != spec.input_width()) {
        throw std::invalid_argument("forward: input width " + std::to_string(input.cols()) +
                                    " does not match spec input width " +
                                    std::to_string(spec.input_width()));
    }
    if (cache) {
        cache->spec = &spec;
        cache->params = &params;
        cache->revision = params.revision();
        cache->activations.clear();
        cache->activations.reserve(spec.num_layers() + 1);
        cache->activations.push_back(input);
    }
    Tensor act = input;
    for (std::size_t l = 0; l < spec.num_layers(); ++l) {
        const Tensor& w = params.param(weight_name(l));
        const Tensor& b = params.param(bias_name(l));
        if (w.rows() != act.cols() || w.cols() != spec.layer_widths[l + 1]) {
            throw std::invalid_argument("forward: layer " + std::to_string(l) + " weight shape " +
                                        w.shape_str() + " expected [" + std::to_string(act.cols()) +
                                        "x" + std::to_string(spec.layer_widths[l + 1]) + "]");
        }
        Tensor next({act.rows(), w.cols()});
        as_matrix(next).noalias() = as_matrix(act) * as_matrix(w);
        as_matrix(next).rowwise() += as_matrix(b).row(0);
        if (l + 1 < spec.num_layers()) {
            apply_activation(spec.hidden_activation, next);
        }
        act = std::move(next);
        if (cache) {
            cache->activations.push_back(act);
        }
    }
    return act;
}

Tensor backward(const MLPSpec& spec, ParamStore& params, const ForwardCache& cache,
                const Tensor& grad_output) {
    if (cache.spec != &spec || cache.params != &params) {
        throw std::logic_error("backward: cache does not belong to this spec/params");
    }
    if (cache.revision != params.revision()) {
        throw std::logic_error("backward: stale cache, parameters changed since forward");
    }
    if (cache.activations.size() != spec.num_layers() + 1) {
        throw std::logic_error("backward: cache activation count mismatch");
    }
    const Tensor& out = cache.activations.back();
    if (!grad_output.same_shape(out)) {
        throw std::invalid_argument("backward: grad_output shape " + grad_output.shape_str() +
                                    " does not match output shape " + out.shape_str());
    }

    Tensor grad = grad_output;
    for (std::size_t l = spec.num_layers(); l-- > 0;) {
        // Hidden layers carry the activation; the output layer is identity.
        if (l + 1 < spec.num_layers()) {
            const Tensor& y = cache.activations[l + 1];
            for (std::size_t i = 0; i < grad.numel(); ++i) {
                grad[i] *= activation_grad_from_output(spec.hidden_activation, y[i]);
            }
        }
        const Tensor& x = cache.activations[l];
        Tensor& gw = params.grad(weight_name(l));
        Tensor& gb = params.grad(bias_name(l));
        as_matrix(gw).noalias() += as_matrix(x).transpose() * as_matrix(grad);
        as_matrix(gb).row(0) += as_matrix(grad).colwise().sum();

        const Tensor& w = params.param(weight_name(l));
        Tensor grad_in({x.rows(), x.cols()});
        as_matrix(grad_in).noalias() = as_matrix(grad) * as_matrix(w).transpose();
        grad = std::move(grad_in);
    }
    return grad;
}

std::map<std::string, Tensor> finite_difference_grad(ParamStore& params,
                                                     const std::function<double()>& loss,
                                                     double h) {
    std::map<std::string, Tensor> out;
    for (const auto& name : params.names()) {
        Tensor& p = params.param(name);
        Tensor g(p.shape());
        for (std::size_t i = 0; i < p.numel(); ++i) {
            const double orig = p[i];
            p[i] = orig + h;
            const double f_plus = loss();
            p[i] = orig - h;
            const double f_minus = loss();
            p[i] = orig;
            g[i] = (f_plus - f_minus) / (2.0 * h);
        }
        out.emplace(name, std::move(g));
    }
    return out;
}

std::map<std::string, Tensor> finite_difference_grad(const MLPSpec& spec, ParamStore& params,
                                                     const Tensor& input,
                                                     const std::function<double(const Tensor&)>& loss,
                                                     double h) {
    return finite_difference_grad(
        params, [&]() { return loss(forward(spec, params, input)); }, h);
}

Mlp::Mlp(MLPSpec s, Rng& rng) : spec(std::move(s)) {
    init_params(spec, params, rng);
}

} // namespace mmali
