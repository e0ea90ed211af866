#pragma once

#include <cstdint>
#include <fstream>
#include <functional>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include "mmali/data.hpp"
#include "mmali/model.hpp"
#include "mmali/optim.hpp"
#include "mmali/rng.hpp"

namespace mmali {

enum class DiscriminatorMode { Factorized, Joint };
enum class MeanFunction { Arithmetic, Geometric };

std::string discriminator_mode_name(DiscriminatorMode m);
DiscriminatorMode discriminator_mode_from_name(const std::string& s);
std::string mean_function_name(MeanFunction m);
MeanFunction mean_function_from_name(const std::string& s);

struct TrainConfig {
    int modalities = 2;
    std::vector<std::size_t> modality_dims{2, 2};
    std::size_t content_dim = 2;
    std::size_t style_dim = 1;
    std::size_t batch_size = 64;
    std::size_t iterations = 20000;
    double lr = 2e-4;
    double adam_beta1 = 0.5;
    double adam_beta2 = 0.999;
    double ema_decay = 0.9999;
    std::optional<std::size_t> ema_start; // default iterations / 5
    double paired_fraction = 1.0;
    bool use_unpaired = true; // false drops unpaired rows instead of training on them
    DiscriminatorMode discriminator_mode = DiscriminatorMode::Factorized;
    MeanFunction mean_function = MeanFunction::Geometric;
    std::uint64_t seed = 0;
    std::vector<std::size_t> enc_hidden{64, 64};
    std::vector<std::size_t> dec_hidden{64, 64};
    std::vector<std::size_t> disc_hidden{64, 64};
    double grad_clip = 10.0;
    std::size_t checkpoint_every = 0; // 0 disables periodic checkpoints

    void validate() const;
    ModelConfig model_config() const;
    std::size_t ema_start_or_default() const {
        return ema_start ? *ema_start : iterations / 5;
    }
};

/// One iteration's losses. Everything reported is finite; a skipped C
/// update is flagged instead of reported as a hole.
struct LossReport {
    std::size_t iteration = 0;
    std::vector<double> disc_a; // per modality
    std::vector<double> disc_b;
    double disc_c = 0.0;
    bool c_skipped = false;
    double disc_joint = 0.0;
    std::vector<double> gen_enc; // per encoder branch
    double gen_dec = 0.0;
    std::vector<double> mean_log_ratio; // assembled log r_i averaged over decoder samples

    void check_finite() const;
};

/// Raised when a loss goes non-finite; message carries the logit dump.
struct TrainAbort : std::runtime_error {
    explicit TrainAbort(const std::string& what) : std::runtime_error(what) {}
};

class Trainer {
public:
    Trainer(TrainConfig cfg, Rng& init_rng);

    const TrainConfig& config() const { return cfg_; }
    MmaliModel& model() { return model_; }
    const MmaliModel& model() const { return model_; }

    /// Trains A_i/B_i on every row of the batch and C on its paired rows;
    /// one Adam step per discriminator. Generator parameters are untouched.
    LossReport discriminator_step(const MultimodalBatch& batch, Rng& rng);

    /// Non-saturating generator update through the assembled D*; one Adam
    /// step for encoders+decoders followed by the EMA update. Discriminator
    /// parameters are untouched.
    LossReport generator_step(const MultimodalBatch& batch, Rng& rng);

    std::size_t iteration() const { return iteration_; }
    void set_iteration(std::size_t it) { iteration_ = it; }

    /// Copies EMA shadows into the encoder/decoder parameters; no-op when
    /// no EMA update has happened yet.
    void apply_ema();

private:
    LossReport discriminator_step_factorized(const MultimodalBatch& batch, Rng& rng);
    LossReport discriminator_step_joint(const MultimodalBatch& batch, Rng& rng);
    LossReport generator_step_factorized(const MultimodalBatch& batch, Rng& rng);
    LossReport generator_step_joint(const MultimodalBatch& batch, Rng& rng);

    TrainConfig cfg_;
    MmaliModel model_;
    std::vector<AdamState> adam_enc_, adam_dec_, adam_a_, adam_b_;
    AdamState adam_c_;
    AdamState adam_joint_;
    std::vector<EMAState> ema_enc_, ema_dec_;
    std::size_t iteration_ = 0;
};

struct TrainHooks {
    std::function<void(const LossReport&)> on_report;                    // every 100 iterations
    std::function<void(const MmaliModel&, std::size_t)> on_checkpoint;   // at the configured cadence
};

/// Full training run: alternates one discriminator and one generator step
/// per iteration on batches drawn from the train split, applies the
/// configured pairing regime up front, and returns the model with EMA
/// weights in its encoders/decoders.
MmaliModel train(const TrainConfig& cfg, const Dataset& dataset, const TrainHooks& hooks = {});

/// Same loop with the monolithic (M+1)-way discriminator; cfg must say so.
MmaliModel train_joint_baseline(const TrainConfig& cfg, const Dataset& dataset,
                                const TrainHooks& hooks = {});

/// Uniform batch of row indices, the train loop's sampling rule.
std::vector<std::size_t> sample_batch_indices(std::size_t rows, std::size_t batch_size, Rng& rng);
MultimodalBatch gather_batch(const MultimodalBatch& data, const std::vector<std::size_t>& rows);

/// Binary ratio-estimator training: positives labelled 1, negatives 0,
/// logistic loss, so the learned logit estimates log(pos density / neg
/// density). Used by the ratio-learning experiments and tests.
struct RatioFitConfig {
    std::vector<std::size_t> hidden{32, 32};
    std::size_t steps = 20000;
    std::size_t batch_size = 64;
    double lr = 2e-4;
    double adam_beta1 = 0.5;
    double adam_beta2 = 0.999;
    double grad_clip = 10.0;
    std::uint64_t seed = 0;
};

using RowSampler = std::function<std::vector<double>(Rng&)>;

Mlp fit_ratio_discriminator(std::size_t input_dim, const RowSampler& positive,
                            const RowSampler& negative, const RatioFitConfig& cfg);

/// Binary logistic loss value for a batch of logits with labels 1 (pos)
/// then 0 (neg); chance level is ln 2.
double logistic_loss(const Tensor& logits, std::size_t positives);

/// CSV sink for LossReports: stable header derived from the config,
/// deterministic %.17g formatting, append-only.
class MetricsWriter {
public:
    MetricsWriter(const std::string& path, const TrainConfig& cfg);
    void append(const LossReport& report);
    const std::string& path() const { return path_; }

private:
    std::string path_;
    std::ofstream out_;
    int modalities_ = 0;
    DiscriminatorMode mode_ = DiscriminatorMode::Factorized;
};

} // namespace mmali
