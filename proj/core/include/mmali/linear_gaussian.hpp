#pragma once

#include <Eigen/Core>

#include <vector>

#include "mmali/gaussian.hpp"
#include "mmali/rng.hpp"

namespace mmali {

/// One conditional block of a joint density: the target coordinates are
/// Gaussian with diagonal covariance around a linear function of the
/// conditioning coordinates, target ~ N(coeff * point[given] + offset,
/// diag(exp(log_var))). An empty `given` makes it a marginal factor.
struct GaussianFactor {
    std::vector<int> target;
    std::vector<int> given;
    Eigen::MatrixXd coeff;   // target.size() x given.size()
    Eigen::VectorXd offset;  // target.size()
    Eigen::VectorXd log_var; // target.size()

    double log_pdf(const Eigen::VectorXd& point) const;
};

/// A joint density over a point vector, written as an ordered product of
/// conditional factors. Factor order must be ancestral (conditioning
/// coordinates produced by earlier factors) for sampling to be valid;
/// log_pdf does not care about order.
struct JointDensity {
    int dim = 0;
    std::vector<GaussianFactor> factors;

    double log_pdf(const Eigen::VectorXd& point) const;
    Eigen::VectorXd sample(Rng& rng) const;
    void validate() const;
};

/// log numerator(point) - log denominator(point).
double analytic_log_ratio(const JointDensity& numerator, const JointDensity& denominator,
                          const Eigen::VectorXd& point);

/// Exactly specified linear-Gaussian MMALI system: a chain-structured data
/// distribution over M modalities, linear-Gaussian content/style encoders,
/// linear-Gaussian decoders and standard-normal latent priors. Every factor
/// of the ratio chain has a closed form, which makes this the ground truth
/// against which learned and assembled log-ratios are checked.
///
/// Data chain (all couplings diagonal so every marginal stays diagonal):
///   x_0 ~ N(data_mean[0], diag)   x_j | x_{j-1} ~ N(a_j * x_{j-1} + b_j, diag)
/// Encoders:
///   c | x_i ~ N(Ec_i x_i + ec_i, diag)    s_i | x_i ~ N(Es_i x_i + es_i, diag)
/// Decoders:
///   x_i | s_i, c ~ N(Dd_i [s_i; c] + dd_i, diag)
struct LinearGaussianRig {
    int modalities = 0;
    int modality_dim = 0;
    int content_dim = 0;
    int style_dim = 0;

    // Data chain; entry 0 of chain_coeff is unused.
    std::vector<Eigen::VectorXd> chain_coeff;   // diagonal of a_j, size modality_dim
    std::vector<Eigen::VectorXd> chain_offset;  // b_j
    std::vector<Eigen::VectorXd> chain_log_var; // conditional log variance

    std::vector<Eigen::MatrixXd> enc_content_coeff;
    std::vector<Eigen::VectorXd> enc_content_offset;
    std::vector<Eigen::VectorXd> enc_content_log_var;

    std::vector<Eigen::MatrixXd> enc_style_coeff;
    std::vector<Eigen::VectorXd> enc_style_offset;
    std::vector<Eigen::VectorXd> enc_style_log_var;

    std::vector<Eigen::MatrixXd> dec_coeff; // modality_dim x (style_dim + content_dim)
    std::vector<Eigen::VectorXd> dec_offset;
    std::vector<Eigen::VectorXd> dec_log_var;

    /// Smoothly parameter-filled rig for tests: coefficients and offsets
    /// vary deterministically with the seed, variances stay O(1).
    static LinearGaussianRig make(int modalities, int modality_dim, int content_dim,
                                  int style_dim, std::uint64_t seed);

    // Point layout: [x_0 .. x_{M-1}, s_0 .. s_{M-1}, c].
    int point_dim() const;
    int x_offset(int i) const { return i * modality_dim; }
    int s_offset(int i) const { return modalities * modality_dim + i * style_dim; }
    int c_offset() const { return modalities * (modality_dim + style_dim); }

    /// Marginal of modality i under the data chain (diagonal by construction).
    DiagGaussian data_marginal(int i) const;

    /// The three analytic factor logits of the ratio chain.
    double factor_joint_data(const Eigen::VectorXd& point) const; // log q(X) - sum log q(x_k)
    double factor_content(int i, const Eigen::VectorXd& point) const; // log q(c|x_i) - log p(c)
    double factor_unimodal(int j, const Eigen::VectorXd& point) const;
    // ^ log q(x_j, s_j, c) - log p(x_j, s_j, c)

    /// Assembled from the factors: joint_data + content_i + sum_j(unimodal_j - content_j).
    double assembled_log_ratio(int i, const Eigen::VectorXd& point) const;

    /// Direct densities for the identity check and for sampling.
    JointDensity encoder_joint(int i) const; // q_i(X, S, c)
    JointDensity decoder_joint() const;      // p(X, S, c)

    /// log q_i(point) - log p(point), computed without the factor chain.
    double direct_log_ratio(int i, const Eigen::VectorXd& point) const;

    /// Draw from the balanced mixture (1/(M+1) each of q_1..q_M and p);
    /// the density the discriminators actually see during training.
    Eigen::VectorXd sample_mixture(Rng& rng) const;
};

} // namespace mmali
