#pragma once

#include <vector>

#include "mmali/rng.hpp"

namespace mmali {

/// Diagonal Gaussian as mean + log-variance. log_var is clamped to
/// [-10, 10] at construction so precisions and ratios stay finite.
/// A zero-dimensional instance is legal and acts as the neutral element
/// (log-density 0, empty samples); style codes of width 0 rely on this.
struct DiagGaussian {
    std::vector<double> mean;
    std::vector<double> log_var;

    DiagGaussian() = default;
    DiagGaussian(std::vector<double> mean_, std::vector<double> log_var_);

    static DiagGaussian standard(std::size_t dim);

    std::size_t dim() const { return mean.size(); }
    double variance(std::size_t i) const;
    double precision(std::size_t i) const;
};

inline constexpr double kLogVarMin = -10.0;
inline constexpr double kLogVarMax = 10.0;
double clamp_log_var(double lv);

/// Exact diagonal-Gaussian log density.
double log_pdf(const DiagGaussian& g, const std::vector<double>& x);

/// Reparameterized draw mean + exp(log_var / 2) * eps with eps ~ N(0, I).
std::vector<double> sample(const DiagGaussian& g, Rng& rng);

/// Same draw for a caller-supplied eps; the pathway training differentiates.
std::vector<double> sample_given_eps(const DiagGaussian& g, const std::vector<double>& eps);

/// Product of experts: precisions add, mean is precision-weighted.
DiagGaussian product_of_experts(const std::vector<DiagGaussian>& experts);

/// Normalized K-th root of the product: precision is the average of the
/// expert precisions, mean is precision-weighted like the product.
DiagGaussian geometric_mean_of_experts(const std::vector<DiagGaussian>& experts);

struct GaussianMixture {
    std::vector<DiagGaussian> components;
    std::vector<double> weights;

    GaussianMixture() = default;
    GaussianMixture(std::vector<DiagGaussian> components_, std::vector<double> weights_);

    std::size_t dim() const { return components.empty() ? 0 : components[0].dim(); }
};

/// Arithmetic mean of experts (MoE). Default weights are uniform.
GaussianMixture mixture_of_experts(const std::vector<DiagGaussian>& experts,
                                   std::vector<double> weights = {});

/// Mixture log density via log-sum-exp over weighted components.
double log_pdf(const GaussianMixture& mix, const std::vector<double>& x);

/// Draw: pick a component by weight, then sample it.
std::vector<double> moe_sample(const GaussianMixture& mix, Rng& rng);

double log_sum_exp(const std::vector<double>& values);

} // namespace mmali
