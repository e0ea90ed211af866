#include "mmali/gaussian.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

namespace mmali {

namespace {
constexpr double kLog2Pi = 1.8378770664093454836;

void check_dim(const DiagGaussian& g, const std::vector<double>& x, const char* op) {
    if (g.dim() != x.size()) {
        throw std::invalid_argument(std::string(op) + ": point has dim " +
                                    std::to_string(x.size()) + ", gaussian has dim " +
                                    std::to_string(g.dim()));
    }
}
} // namespace

double clamp_log_var(double lv) {
    return std::min(kLogVarMax, std::max(kLogVarMin, lv));
}

DiagGaussian::DiagGaussian(std::vector<double> mean_, std::vector<double> log_var_)
    : mean(std::move(mean_)), log_var(std::move(log_var_)) {
    if (mean.size() != log_var.size()) {
        throw std::invalid_argument("DiagGaussian: mean dim " + std::to_string(mean.size()) +
                                    " != log_var dim " + std::to_string(log_var.size()));
    }
    for (double m : mean) {
        if (!std::isfinite(m)) {
            throw std::invalid_argument("DiagGaussian: non-finite mean entry");
        }
    }
    for (auto& lv : log_var) {
        if (!std::isfinite(lv)) {
            throw std::invalid_argument("DiagGaussian: non-finite log_var entry");
        }
        lv = clamp_log_var(lv);
    }
}

DiagGaussian DiagGaussian::standard(std::size_t dim) {
    return DiagGaussian(std::vector<double>(dim, 0.0), std::vector<double>(dim, 0.0));
}

double DiagGaussian::variance(std::size_t i) const { return std::exp(log_var[i]); }
double DiagGaussian::precision(std::size_t i) const { return std::exp(-log_var[i]); }

double log_pdf(const DiagGaussian& g, const std::vector<double>& x) {
    check_dim(g, x, "log_pdf");
    double lp = 0.0;
    for (std::size_t i = 0; i < x.size(); ++i) {
        const double d = x[i] - g.mean[i];
        lp += -0.5 * (kLog2Pi + g.log_var[i] + d * d * std::exp(-g.log_var[i]));
    }
    return lp;
}

std::vector<double> sample(const DiagGaussian& g, Rng& rng) {
    std::vector<double> eps(g.dim());
    for (auto& e : eps) {
        e = rng.normal();
    }
    return sample_given_eps(g, eps);
}

std::vector<double> sample_given_eps(const DiagGaussian& g, const std::vector<double>& eps) {
    check_dim(g, eps, "sample_given_eps");
    std::vector<double> z(g.dim());
    for (std::size_t i = 0; i < z.size(); ++i) {
        z[i] = g.mean[i] + std::exp(0.5 * g.log_var[i]) * eps[i];
    }
    return z;
}

namespace {
DiagGaussian precision_combine(const std::vector<DiagGaussian>& experts, bool average,
                               const char* op) {
    if (experts.empty()) {
        throw std::invalid_argument(std::string(op) + ": empty expert list");
    }
    const std::size_t d = experts[0].dim();
    for (const auto& e : experts) {
        if (e.dim() != d) {
            throw std::invalid_argument(std::string(op) + ": expert dims differ");
        }
    }
    std::vector<double> mean(d, 0.0);
    std::vector<double> log_var(d, 0.0);
    for (std::size_t i = 0; i < d; ++i) {
        double lambda_sum = 0.0;
        double weighted_mean = 0.0;
        for (const auto& e : experts) {
            const double lambda = e.precision(i);
            lambda_sum += lambda;
            weighted_mean += lambda * e.mean[i];
        }
        const double lambda = average ? lambda_sum / static_cast<double>(experts.size())
                                      : lambda_sum;
        mean[i] = weighted_mean / lambda_sum;
        log_var[i] = -std::log(lambda);
    }
    return DiagGaussian(std::move(mean), std::move(log_var));
}
} // namespace

DiagGaussian product_of_experts(const std::vector<DiagGaussian>& experts) {
    return precision_combine(experts, /*average=*/false, "product_of_experts");
}

DiagGaussian geometric_mean_of_experts(const std::vector<DiagGaussian>& experts) {
    return precision_combine(experts, /*average=*/true, "geometric_mean_of_experts");
}

GaussianMixture::GaussianMixture(std::vector<DiagGaussian> components_,
                                 std::vector<double> weights_)
    : components(std::move(components_)), weights(std::move(weights_)) {
    if (components.empty()) {
        throw std::invalid_argument("GaussianMixture: empty component list");
    }
    if (components.size() != weights.size()) {
        throw std::invalid_argument("GaussianMixture: " + std::to_string(components.size()) +
                                    " components but " + std::to_string(weights.size()) +
                                    " weights");
    }
    double sum = 0.0;
    for (double w : weights) {
        if (w < 0.0) {
            throw std::invalid_argument("GaussianMixture: negative weight");
        }
        sum += w;
    }
    if (std::abs(sum - 1.0) > 1e-12) {
        throw std::invalid_argument("GaussianMixture: weights sum to " + std::to_string(sum));
    }
    const std::size_t d = components[0].dim();
    for (const auto& c : components) {
        if (c.dim() != d) {
            throw std::invalid_argument("GaussianMixture: component dims differ");
        }
    }
}

GaussianMixture mixture_of_experts(const std::vector<DiagGaussian>& experts,
                                   std::vector<double> weights) {
    if (weights.empty()) {
        weights.assign(experts.size(), 1.0 / static_cast<double>(experts.size()));
    }
    return GaussianMixture(experts, std::move(weights));
}

double log_pdf(const GaussianMixture& mix, const std::vector<double>& x) {
    std::vector<double> terms;
    terms.reserve(mix.components.size());
    for (std::size_t k = 0; k < mix.components.size(); ++k) {
        if (mix.weights[k] == 0.0) {
            continue;
        }
        terms.push_back(std::log(mix.weights[k]) + log_pdf(mix.components[k], x));
    }
    return log_sum_exp(terms);
}

std::vector<double> moe_sample(const GaussianMixture& mix, Rng& rng) {
    const double u = rng.uniform();
    double acc = 0.0;
    std::size_t pick = mix.components.size() - 1;
    for (std::size_t k = 0; k < mix.weights.size(); ++k) {
        acc += mix.weights[k];
        if (u < acc) {
            pick = k;
            break;
        }
    }
    return sample(mix.components[pick], rng);
}

double log_sum_exp(const std::vector<double>& values) {
    if (values.empty()) {
        throw std::invalid_argument("log_sum_exp: empty input");
    }
    const double hi = *std::max_element(values.begin(), values.end());
    double s = 0.0;
    for (double v : values) {
        s += std::exp(v - hi);
    }
    return hi + std::log(s);
}

} // namespace mmali
