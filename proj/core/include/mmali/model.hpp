#pragma once

#include <optional>
#include <string>
#include <vector>

#include "mmali/gaussian.hpp"
#include "mmali/mlp.hpp"
#include "mmali/rng.hpp"
#include "mmali/tensor.hpp"

namespace mmali {

struct ModelConfig {
    int modalities = 2;
    std::vector<std::size_t> modality_dims{2, 2};
    std::size_t content_dim = 2;
    std::size_t style_dim = 1;
    std::vector<std::size_t> enc_hidden{64, 64};
    std::vector<std::size_t> dec_hidden{64, 64};
    std::vector<std::size_t> disc_hidden{64, 64};
    Activation gen_activation = Activation::Tanh;
    Activation disc_activation = Activation::LeakyRelu;
    bool joint_discriminator = false; // also build the monolithic baseline head

    std::size_t latent_dim() const { return content_dim + style_dim; }
    void validate() const;
};

/// Shared content code plus one style code per modality.
struct LatentSample {
    std::vector<double> content;
    std::vector<std::vector<double>> styles;
};

/// Ratio logits are clamped here before any assembly, capping each factor
/// at e^+-30.
inline constexpr double kLogitClamp = 30.0;
double clamp_logit(double t);

/// log r_i = C + A_i + sum_j (B_j - A_j), all logits clamped. a and b hold
/// the per-modality A/B logits for one tuple.
std::vector<double> assemble_log_ratios(const std::vector<double>& a_logits,
                                        const std::vector<double>& b_logits, double c_logit);

/// M+1 class probabilities (r_1..r_M, 1) / (1 + sum r); computed in the
/// log domain. Entry M is the decoder class.
std::vector<double> assemble_optimal_discriminator(const std::vector<double>& log_ratios);

/// Batched encoder output, split into posterior blocks. Log-variances are
/// clamped like DiagGaussian; `raw` keeps the pre-clamp network output so
/// backward can mask the clamp.
struct EncodeResult {
    Tensor raw;
    Tensor mu_c, lv_c;
    Tensor mu_s, lv_s;
    ForwardCache cache;
};

enum class StyleSource { Prior, Provided };

/// Per-modality stochastic encoders, deterministic decoders and the
/// factorized discriminator ensemble (A_i, B_i per modality plus the joint
/// data discriminator C). The optional joint head reproduces the
/// monolithic-discriminator baseline.
struct MmaliModel {
    ModelConfig config;
    std::vector<Mlp> encoders;
    std::vector<Mlp> decoders;
    std::vector<Mlp> disc_a;
    std::vector<Mlp> disc_b;
    Mlp disc_c;
    std::optional<Mlp> disc_joint;

    MmaliModel() = default;
    MmaliModel(ModelConfig cfg, Rng& rng);

    // -- inference ---------------------------------------------------------

    EncodeResult encode(int i, const Tensor& x, bool want_cache = false) const;

    /// Single-row convenience returning (content posterior, style posterior).
    std::pair<DiagGaussian, DiagGaussian> encode_row(int i, const std::vector<double>& x) const;

    /// input is batch x (style_dim + content_dim), output batch x n_i.
    Tensor decode(int i, const Tensor& style_content, ForwardCache* cache = nullptr) const;
    std::vector<double> decode_row(int i, const std::vector<double>& style,
                                   const std::vector<double>& content) const;

    // -- discriminator logits on one tuple ---------------------------------

    double logit_a(int i, const std::vector<double>& x, const std::vector<double>& style,
                   const std::vector<double>& content) const;
    double logit_b(int i, const std::vector<double>& x, const std::vector<double>& style,
                   const std::vector<double>& content) const;
    double logit_c(const std::vector<std::vector<double>>& xs) const;

    /// Assembled log r_i for one tuple from the ensemble's logits.
    std::vector<double> model_log_ratios(const std::vector<std::vector<double>>& xs,
                                         const std::vector<std::vector<double>>& styles,
                                         const std::vector<double>& content) const;

    // -- generation --------------------------------------------------------

    /// c ~ q(c|x_source); target style from the prior or caller-provided.
    std::vector<double> cross_generate(int source, const std::vector<double>& x_source, int target,
                                       StyleSource style, Rng& rng,
                                       const std::vector<double>* provided_style = nullptr) const;

    /// All modalities decoded from one prior draw of (c, s_1..s_M).
    std::vector<std::vector<double>> joint_generate(Rng& rng) const;

    // -- persistence -------------------------------------------------------

    void save(const std::string& prefix) const; // writes <prefix>.ckpt and <prefix>.manifest
    static MmaliModel load(const std::string& prefix);

    std::vector<ParamStore*> generator_stores();
    std::vector<ParamStore*> discriminator_stores();
};

/// Architecture helpers shared with the training module.
MLPSpec encoder_spec(const ModelConfig& cfg, int i);
MLPSpec decoder_spec(const ModelConfig& cfg, int i);
MLPSpec disc_ab_spec(const ModelConfig& cfg, int i);
MLPSpec disc_c_spec(const ModelConfig& cfg);
MLPSpec disc_joint_spec(const ModelConfig& cfg);

} // namespace mmali
