#include "mmali/training.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <sstream>

#include "mmali/gaussian.hpp"
#include "mmali/kv.hpp"

namespace mmali {

namespace {

// Fixed rng stream ids; iteration streams start at kStreamIterations + it.
constexpr std::uint64_t kStreamInit = 1;
constexpr std::uint64_t kStreamUnpair = 2;
constexpr std::uint64_t kStreamIterations = 1000;

Tensor randn(std::size_t rows, std::size_t cols, Rng& rng) {
    Tensor t({rows, cols});
    for (auto& v : t.data()) {
        v = rng.normal();
    }
    return t;
}

// z = mu + exp(lv/2) * eps with lv clamped like DiagGaussian.
Tensor reparam(const Tensor& mu, const Tensor& lv, const Tensor& eps) {
    Tensor z(mu.shape());
    for (std::size_t i = 0; i < z.numel(); ++i) {
        z[i] = mu[i] + std::exp(0.5 * lv[i]) * eps[i];
    }
    return z;
}

double sigmoid(double t) { return 1.0 / (1.0 + std::exp(-t)); }

// softplus without overflow
double softplus(double t) { return t > 0.0 ? t + std::log1p(std::exp(-t)) : std::log1p(std::exp(t)); }

// Mean logistic loss over pos rows (label 1) then neg rows (label 0);
// fills the matching mean-reduced gradient.
double bce_with_grad(const Tensor& logits, std::size_t positives, Tensor& grad) {
    const std::size_t n = logits.rows();
    grad = Tensor(logits.shape());
    double loss = 0.0;
    for (std::size_t r = 0; r < n; ++r) {
        const double t = logits[r];
        const double y = r < positives ? 1.0 : 0.0;
        loss += y > 0.5 ? softplus(-t) : softplus(t);
        grad[r] = (sigmoid(t) - y) / static_cast<double>(n);
    }
    return loss / static_cast<double>(n);
}

double clamp_mask(double t) { return std::abs(t) < kLogitClamp ? 1.0 : 0.0; }

std::vector<std::size_t> mask_indices(const MultimodalBatch& batch, bool paired) {
    std::vector<std::size_t> idx;
    for (std::size_t r = 0; r < batch.rows(); ++r) {
        if (batch.paired_mask[r] == paired) {
            idx.push_back(r);
        }
    }
    return idx;
}

std::string dump_tensor_stats(const std::string& name, const Tensor& t) {
    double lo = 0.0;
    double hi = 0.0;
    double sum = 0.0;
    bool first = true;
    for (double v : t.data()) {
        if (first) {
            lo = hi = v;
            first = false;
        }
        lo = std::min(lo, v);
        hi = std::max(hi, v);
        sum += v;
    }
    std::ostringstream os;
    os << name << ": min=" << lo << " max=" << hi
       << " mean=" << (t.numel() ? sum / static_cast<double>(t.numel()) : 0.0) << "\n";
    return os.str();
}

} // namespace

std::string discriminator_mode_name(DiscriminatorMode m) {
    return m == DiscriminatorMode::Factorized ? "factorized" : "joint";
}

DiscriminatorMode discriminator_mode_from_name(const std::string& s) {
    if (s == "factorized") {
        return DiscriminatorMode::Factorized;
    }
    if (s == "joint") {
        return DiscriminatorMode::Joint;
    }
    throw std::invalid_argument("unknown discriminator_mode: " + s);
}

std::string mean_function_name(MeanFunction m) {
    return m == MeanFunction::Arithmetic ? "arithmetic" : "geometric";
}

MeanFunction mean_function_from_name(const std::string& s) {
    if (s == "arithmetic") {
        return MeanFunction::Arithmetic;
    }
    if (s == "geometric") {
        return MeanFunction::Geometric;
    }
    throw std::invalid_argument("unknown mean_function: " + s);
}

void TrainConfig::validate() const {
    if (modalities < 1) {
        throw std::invalid_argument("TrainConfig: modalities must be >= 1");
    }
    if (modality_dims.size() != static_cast<std::size_t>(modalities)) {
        throw std::invalid_argument("TrainConfig: modality_dims count != modalities");
    }
    if (batch_size < 2) {
        throw std::invalid_argument("TrainConfig: batch_size must be >= 2 for in-batch shuffling");
    }
    if (lr <= 0.0) {
        throw std::invalid_argument("TrainConfig: lr must be positive");
    }
    if (paired_fraction <= 0.0 || paired_fraction > 1.0) {
        throw std::invalid_argument("TrainConfig: paired_fraction must lie in (0, 1]");
    }
    if (ema_decay < 0.0 || ema_decay >= 1.0) {
        throw std::invalid_argument("TrainConfig: ema_decay must lie in [0, 1)");
    }
    if (grad_clip <= 0.0) {
        throw std::invalid_argument("TrainConfig: grad_clip must be positive");
    }
}

ModelConfig TrainConfig::model_config() const {
    ModelConfig mc;
    mc.modalities = modalities;
    mc.modality_dims = modality_dims;
    mc.content_dim = content_dim;
    mc.style_dim = style_dim;
    mc.enc_hidden = enc_hidden;
    mc.dec_hidden = dec_hidden;
    mc.disc_hidden = disc_hidden;
    mc.joint_discriminator = discriminator_mode == DiscriminatorMode::Joint;
    return mc;
}

void LossReport::check_finite() const {
    auto ok = [](double v) { return std::isfinite(v); };
    bool fine = ok(disc_c) && ok(disc_joint) && ok(gen_dec);
    for (double v : disc_a) {
        fine = fine && ok(v);
    }
    for (double v : disc_b) {
        fine = fine && ok(v);
    }
    for (double v : gen_enc) {
        fine = fine && ok(v);
    }
    for (double v : mean_log_ratio) {
        fine = fine && ok(v);
    }
    if (!fine) {
        throw TrainAbort("LossReport: non-finite loss at iteration " + std::to_string(iteration));
    }
}

Trainer::Trainer(TrainConfig cfg, Rng& init_rng) : cfg_(std::move(cfg)) {
    cfg_.validate();
    model_ = MmaliModel(cfg_.model_config(), init_rng);
    const std::size_t ema_start = cfg_.ema_start_or_default();
    for (int i = 0; i < cfg_.modalities; ++i) {
        adam_enc_.emplace_back(cfg_.lr, cfg_.adam_beta1, cfg_.adam_beta2);
        adam_dec_.emplace_back(cfg_.lr, cfg_.adam_beta1, cfg_.adam_beta2);
        adam_a_.emplace_back(cfg_.lr, cfg_.adam_beta1, cfg_.adam_beta2);
        adam_b_.emplace_back(cfg_.lr, cfg_.adam_beta1, cfg_.adam_beta2);
        ema_enc_.emplace_back(cfg_.ema_decay, ema_start);
        ema_dec_.emplace_back(cfg_.ema_decay, ema_start);
    }
    adam_c_ = AdamState(cfg_.lr, cfg_.adam_beta1, cfg_.adam_beta2);
    adam_joint_ = AdamState(cfg_.lr, cfg_.adam_beta1, cfg_.adam_beta2);
}

void Trainer::apply_ema() {
    for (int i = 0; i < cfg_.modalities; ++i) {
        if (ema_enc_[i].has_shadow()) {
            ema_enc_[i].copy_shadow_to(model_.encoders[i].params);
        }
        if (ema_dec_[i].has_shadow()) {
            ema_dec_[i].copy_shadow_to(model_.decoders[i].params);
        }
    }
}

LossReport Trainer::discriminator_step(const MultimodalBatch& batch, Rng& rng) {
    batch.validate();
    return cfg_.discriminator_mode == DiscriminatorMode::Factorized
               ? discriminator_step_factorized(batch, rng)
               : discriminator_step_joint(batch, rng);
}

LossReport Trainer::generator_step(const MultimodalBatch& batch, Rng& rng) {
    batch.validate();
    LossReport report = cfg_.discriminator_mode == DiscriminatorMode::Factorized
                            ? generator_step_factorized(batch, rng)
                            : generator_step_joint(batch, rng);
    for (int i = 0; i < cfg_.modalities; ++i) {
        ema_update(ema_enc_[i], model_.encoders[i].params, iteration_);
        ema_update(ema_dec_[i], model_.decoders[i].params, iteration_);
    }
    return report;
}

LossReport Trainer::discriminator_step_factorized(const MultimodalBatch& batch, Rng& rng) {
    const int m = cfg_.modalities;
    const std::size_t rows = batch.rows();
    const std::size_t dc = cfg_.content_dim;
    const std::size_t ds = cfg_.style_dim;

    LossReport report;
    report.iteration = iteration_;
    report.disc_a.resize(m);
    report.disc_b.resize(m);

    for (auto* store : model_.discriminator_stores()) {
        store->zero_grads();
    }

    for (int i = 0; i < m; ++i) {
        const Tensor& x = batch.modalities[i];
        const EncodeResult enc = model_.encode(i, x);

        // A_i: q(x_i, s_i, c) against q(x_i, s_i) p(c).
        {
            const Tensor s_pos = reparam(enc.mu_s, enc.lv_s, randn(rows, ds, rng));
            const Tensor c_pos = reparam(enc.mu_c, enc.lv_c, randn(rows, dc, rng));
            const Tensor s_neg = reparam(enc.mu_s, enc.lv_s, randn(rows, ds, rng));
            const Tensor c_neg = randn(rows, dc, rng);
            const Tensor pos = hcat({&x, &s_pos, &c_pos});
            const Tensor neg = hcat({&x, &s_neg, &c_neg});
            const Tensor in = vcat({&pos, &neg});
            ForwardCache cache;
            const Tensor logits = model_.disc_a[i].forward(in, &cache);
            Tensor grad;
            report.disc_a[i] = bce_with_grad(logits, rows, grad);
            model_.disc_a[i].backward(cache, grad);
            clip_global_grad_norm({&model_.disc_a[i].params}, cfg_.grad_clip);
            adam_step(model_.disc_a[i].params, adam_a_[i]);
        }

        // B_i: q(x_i, s_i, c) against p(x_i, s_i, c).
        {
            const Tensor s_pos = reparam(enc.mu_s, enc.lv_s, randn(rows, ds, rng));
            const Tensor c_pos = reparam(enc.mu_c, enc.lv_c, randn(rows, dc, rng));
            const Tensor pos = hcat({&x, &s_pos, &c_pos});
            const Tensor s_prior = randn(rows, ds, rng);
            const Tensor c_prior = randn(rows, dc, rng);
            const Tensor sc = hcat({&s_prior, &c_prior});
            const Tensor x_fake = model_.decode(i, sc);
            const Tensor neg = hcat({&x_fake, &s_prior, &c_prior});
            const Tensor in = vcat({&pos, &neg});
            ForwardCache cache;
            const Tensor logits = model_.disc_b[i].forward(in, &cache);
            Tensor grad;
            report.disc_b[i] = bce_with_grad(logits, rows, grad);
            model_.disc_b[i].backward(cache, grad);
            clip_global_grad_norm({&model_.disc_b[i].params}, cfg_.grad_clip);
            adam_step(model_.disc_b[i].params, adam_b_[i]);
        }
    }

    // C: paired tuples against independently permuted modality columns.
    const auto paired = mask_indices(batch, true);
    if (paired.empty()) {
        report.c_skipped = true;
        return report;
    }
    std::vector<Tensor> pos_parts;
    std::vector<Tensor> neg_parts;
    pos_parts.reserve(m);
    neg_parts.reserve(m);
    for (int i = 0; i < m; ++i) {
        pos_parts.push_back(row_gather(batch.modalities[i], paired));
        const auto perm = rng.permutation(paired.size());
        std::vector<std::size_t> shuffled(paired.size());
        for (std::size_t r = 0; r < paired.size(); ++r) {
            shuffled[r] = paired[perm[r]];
        }
        neg_parts.push_back(row_gather(batch.modalities[i], shuffled));
    }
    std::vector<const Tensor*> pos_ptrs, neg_ptrs;
    for (int i = 0; i < m; ++i) {
        pos_ptrs.push_back(&pos_parts[i]);
        neg_ptrs.push_back(&neg_parts[i]);
    }
    const Tensor pos = hcat(pos_ptrs);
    const Tensor neg = hcat(neg_ptrs);
    const Tensor in = vcat({&pos, &neg});
    ForwardCache cache;
    const Tensor logits = model_.disc_c.forward(in, &cache);
    Tensor grad;
    report.disc_c = bce_with_grad(logits, paired.size(), grad);
    model_.disc_c.backward(cache, grad);
    clip_global_grad_norm({&model_.disc_c.params}, cfg_.grad_clip);
    adam_step(model_.disc_c.params, adam_c_);
    return report;
}

LossReport Trainer::discriminator_step_joint(const MultimodalBatch& batch, Rng& rng) {
    const int m = cfg_.modalities;
    const std::size_t dc = cfg_.content_dim;
    const std::size_t ds = cfg_.style_dim;

    LossReport report;
    report.iteration = iteration_;

    Mlp& joint = *model_.disc_joint;
    joint.params.zero_grads();

    // The monolithic discriminator needs full tuples; only paired rows feed it.
    const auto paired = mask_indices(batch, true);
    if (paired.empty()) {
        report.c_skipped = true;
        return report;
    }
    const std::size_t p = paired.size();

    std::vector<Tensor> xg(m);
    std::vector<EncodeResult> enc(m);
    for (int j = 0; j < m; ++j) {
        xg[j] = row_gather(batch.modalities[j], paired);
        enc[j] = model_.encode(j, xg[j]);
    }

    // Group i <= M-1: (X, S ~ q(s_j|x_j), c ~ q(c|x_i)); group M: prior draws.
    std::vector<Tensor> groups;
    for (int i = 0; i < m; ++i) {
        std::vector<Tensor> styles(m);
        std::vector<const Tensor*> parts;
        for (int j = 0; j < m; ++j) {
            parts.push_back(&xg[j]);
        }
        for (int j = 0; j < m; ++j) {
            styles[j] = reparam(enc[j].mu_s, enc[j].lv_s, randn(p, ds, rng));
        }
        for (int j = 0; j < m; ++j) {
            parts.push_back(&styles[j]);
        }
        const Tensor c = reparam(enc[i].mu_c, enc[i].lv_c, randn(p, dc, rng));
        parts.push_back(&c);
        groups.push_back(hcat(parts));
    }
    {
        const Tensor c_prior = randn(p, dc, rng);
        std::vector<Tensor> s_prior(m), x_fake(m);
        std::vector<const Tensor*> parts;
        for (int j = 0; j < m; ++j) {
            s_prior[j] = randn(p, ds, rng);
            const Tensor sc = hcat({&s_prior[j], &c_prior});
            x_fake[j] = model_.decode(j, sc);
        }
        for (int j = 0; j < m; ++j) {
            parts.push_back(&x_fake[j]);
        }
        for (int j = 0; j < m; ++j) {
            parts.push_back(&s_prior[j]);
        }
        parts.push_back(&c_prior);
        groups.push_back(hcat(parts));
    }

    std::vector<const Tensor*> group_ptrs;
    for (const auto& g : groups) {
        group_ptrs.push_back(&g);
    }
    const Tensor in = vcat(group_ptrs);
    ForwardCache cache;
    const Tensor logits = joint.forward(in, &cache);

    // Multiclass cross-entropy over the M+1 sample sources.
    const std::size_t n = in.rows();
    const std::size_t classes = static_cast<std::size_t>(m) + 1;
    Tensor grad(logits.shape());
    double loss = 0.0;
    for (std::size_t r = 0; r < n; ++r) {
        const std::size_t label = r / p;
        std::vector<double> row(classes);
        for (std::size_t k = 0; k < classes; ++k) {
            row[k] = logits.at(r, k);
        }
        const double lse = log_sum_exp(row);
        loss += lse - row[label];
        for (std::size_t k = 0; k < classes; ++k) {
            grad.at(r, k) =
                (std::exp(row[k] - lse) - (k == label ? 1.0 : 0.0)) / static_cast<double>(n);
        }
    }
    report.disc_joint = loss / static_cast<double>(n);
    joint.backward(cache, grad);
    clip_global_grad_norm({&joint.params}, cfg_.grad_clip);
    adam_step(joint.params, adam_joint_);
    return report;
}

namespace {

// Adds the reparameterization chain grads of z = mu + exp(lv/2) * eps into
// the encoder's raw-output gradient block. Rows of grad_z map to raw rows
// through `rows`; the clamp on lv zeroes the gradient outside its range.
void add_reparam_grads(const Tensor& grad_z, const Tensor& lv_clamped, const Tensor& eps,
                       const Tensor& raw, std::size_t mu_col, std::size_t lv_col,
                       const std::vector<std::size_t>& rows, Tensor& grad_raw) {
    const std::size_t d = grad_z.cols();
    for (std::size_t r = 0; r < grad_z.rows(); ++r) {
        const std::size_t rr = rows[r];
        for (std::size_t k = 0; k < d; ++k) {
            const double g = grad_z.at(r, k);
            grad_raw.at(rr, mu_col + k) += g;
            const double raw_lv = raw.at(rr, lv_col + k);
            if (raw_lv > kLogVarMin && raw_lv < kLogVarMax) {
                grad_raw.at(rr, lv_col + k) +=
                    g * 0.5 * std::exp(0.5 * lv_clamped.at(r, k)) * eps.at(r, k);
            }
        }
    }
}

std::vector<std::size_t> iota_rows(std::size_t n) {
    std::vector<std::size_t> v(n);
    for (std::size_t i = 0; i < n; ++i) {
        v[i] = i;
    }
    return v;
}

} // namespace

LossReport Trainer::generator_step_factorized(const MultimodalBatch& batch, Rng& rng) {
    const int m = cfg_.modalities;
    const std::size_t rows = batch.rows();
    const std::size_t dc = cfg_.content_dim;
    const std::size_t ds = cfg_.style_dim;

    LossReport report;
    report.iteration = iteration_;
    report.gen_enc.assign(m, 0.0);
    report.mean_log_ratio.assign(m, 0.0);

    for (auto* store : model_.generator_stores()) {
        store->zero_grads();
    }

    const auto paired = mask_indices(batch, true);
    const auto unpaired = mask_indices(batch, false);
    const std::size_t branch_n = paired.size() + unpaired.size(); // every row contributes

    // One cached forward per encoder over the whole batch; every branch
    // accumulates into the same raw-output gradient.
    std::vector<EncodeResult> enc(m);
    std::vector<Tensor> grad_raw(m);
    for (int j = 0; j < m; ++j) {
        enc[j] = model_.encode(j, batch.modalities[j], /*want_cache=*/true);
        grad_raw[j] = Tensor(enc[j].raw.shape());
    }
    auto sub = [](const Tensor& t, const std::vector<std::size_t>& idx) {
        return row_gather(t, idx);
    };

    // --- encoder branches on paired rows: full assembled ratio -----------
    if (!paired.empty()) {
        const std::size_t p = paired.size();
        std::vector<Tensor> xg(m);
        std::vector<const Tensor*> xg_ptrs;
        for (int j = 0; j < m; ++j) {
            xg[j] = sub(batch.modalities[j], paired);
        }
        for (int j = 0; j < m; ++j) {
            xg_ptrs.push_back(&xg[j]);
        }
        const Tensor x_all = hcat(xg_ptrs);
        const Tensor c_logits = model_.disc_c.forward(x_all); // constant w.r.t. generators

        for (int i = 0; i < m; ++i) {
            const Tensor eps_c = randn(p, dc, rng);
            const Tensor mu_c = sub(enc[i].mu_c, paired);
            const Tensor lv_c = sub(enc[i].lv_c, paired);
            const Tensor c = reparam(mu_c, lv_c, eps_c);

            std::vector<Tensor> eps_s(m), s(m), lv_s(m);
            std::vector<Tensor> a_logits(m), b_logits(m);
            std::vector<ForwardCache> cache_a(m), cache_b(m);
            std::vector<Tensor> inputs(m);
            for (int j = 0; j < m; ++j) {
                eps_s[j] = randn(p, ds, rng);
                const Tensor mu_s = sub(enc[j].mu_s, paired);
                lv_s[j] = sub(enc[j].lv_s, paired);
                s[j] = reparam(mu_s, lv_s[j], eps_s[j]);
                inputs[j] = hcat({&xg[j], &s[j], &c});
                a_logits[j] = model_.disc_a[j].forward(inputs[j], &cache_a[j]);
                b_logits[j] = model_.disc_b[j].forward(inputs[j], &cache_b[j]);
            }

            // log r_i per row; the i-th A logit cancels out of the sum.
            for (std::size_t r = 0; r < p; ++r) {
                double lr = clamp_logit(c_logits[r]) + clamp_logit(a_logits[i][r]);
                for (int j = 0; j < m; ++j) {
                    lr += clamp_logit(b_logits[j][r]) - clamp_logit(a_logits[j][r]);
                }
                report.gen_enc[i] += lr / static_cast<double>(branch_n);
            }

            for (int j = 0; j < m; ++j) {
                Tensor ga({p, 1});
                Tensor gb({p, 1});
                for (std::size_t r = 0; r < p; ++r) {
                    ga[r] = (j == i ? 0.0 : -1.0) * clamp_mask(a_logits[j][r]) /
                            static_cast<double>(branch_n);
                    gb[r] = clamp_mask(b_logits[j][r]) / static_cast<double>(branch_n);
                }
                Tensor grad_in = model_.disc_a[j].backward(cache_a[j], ga);
                const Tensor grad_in_b = model_.disc_b[j].backward(cache_b[j], gb);
                for (std::size_t k = 0; k < grad_in.numel(); ++k) {
                    grad_in[k] += grad_in_b[k];
                }
                const std::size_t nx = cfg_.modality_dims[j];
                const Tensor gs = col_slice(grad_in, nx, nx + ds);
                const Tensor gc = col_slice(grad_in, nx + ds, nx + ds + dc);
                add_reparam_grads(gs, lv_s[j], eps_s[j], enc[j].raw, 2 * dc, 2 * dc + ds, paired,
                                  grad_raw[j]);
                add_reparam_grads(gc, lv_c, eps_c, enc[i].raw, 0, dc, paired, grad_raw[i]);
            }
        }
    }

    // --- encoder branches on unpaired rows: the B_i factor alone ---------
    if (!unpaired.empty()) {
        const std::size_t u = unpaired.size();
        for (int i = 0; i < m; ++i) {
            const Tensor xu = sub(batch.modalities[i], unpaired);
            const Tensor mu_c = sub(enc[i].mu_c, unpaired);
            const Tensor lv_c = sub(enc[i].lv_c, unpaired);
            const Tensor mu_s = sub(enc[i].mu_s, unpaired);
            const Tensor lv_s = sub(enc[i].lv_s, unpaired);
            const Tensor eps_c = randn(u, dc, rng);
            const Tensor eps_s = randn(u, ds, rng);
            const Tensor c = reparam(mu_c, lv_c, eps_c);
            const Tensor s = reparam(mu_s, lv_s, eps_s);
            const Tensor in = hcat({&xu, &s, &c});
            ForwardCache cache;
            const Tensor b_logits = model_.disc_b[i].forward(in, &cache);

            Tensor gb({u, 1});
            for (std::size_t r = 0; r < u; ++r) {
                report.gen_enc[i] += clamp_logit(b_logits[r]) / static_cast<double>(branch_n);
                gb[r] = clamp_mask(b_logits[r]) / static_cast<double>(branch_n);
            }
            const Tensor grad_in = model_.disc_b[i].backward(cache, gb);
            const std::size_t nx = cfg_.modality_dims[i];
            const Tensor gs = col_slice(grad_in, nx, nx + ds);
            const Tensor gc = col_slice(grad_in, nx + ds, nx + ds + dc);
            add_reparam_grads(gs, lv_s, eps_s, enc[i].raw, 2 * dc, 2 * dc + ds, unpaired,
                              grad_raw[i]);
            add_reparam_grads(gc, lv_c, eps_c, enc[i].raw, 0, dc, unpaired, grad_raw[i]);
        }
    }

    // --- decoder branch on prior tuples ----------------------------------
    {
        const std::size_t n = rows;
        const Tensor c_prior = randn(n, dc, rng);
        std::vector<Tensor> s_prior(m), x_fake(m);
        std::vector<ForwardCache> cache_dec(m);
        for (int j = 0; j < m; ++j) {
            s_prior[j] = randn(n, ds, rng);
            const Tensor sc = hcat({&s_prior[j], &c_prior});
            x_fake[j] = model_.decode(j, sc, &cache_dec[j]);
        }
        std::vector<const Tensor*> xf_ptrs;
        for (int j = 0; j < m; ++j) {
            xf_ptrs.push_back(&x_fake[j]);
        }
        const Tensor x_all = hcat(xf_ptrs);
        ForwardCache cache_c;
        const Tensor c_logits = model_.disc_c.forward(x_all, &cache_c);

        std::vector<Tensor> a_logits(m), b_logits(m);
        std::vector<ForwardCache> cache_a(m), cache_b(m);
        std::vector<Tensor> inputs(m);
        for (int j = 0; j < m; ++j) {
            inputs[j] = hcat({&x_fake[j], &s_prior[j], &c_prior});
            a_logits[j] = model_.disc_a[j].forward(inputs[j], &cache_a[j]);
            b_logits[j] = model_.disc_b[j].forward(inputs[j], &cache_b[j]);
        }

        Tensor gt({n, 1});
        std::vector<Tensor> ga(m, Tensor({n, 1})), gb(m, Tensor({n, 1}));
        for (std::size_t r = 0; r < n; ++r) {
            std::vector<double> a_row(m), b_row(m);
            for (int j = 0; j < m; ++j) {
                a_row[j] = a_logits[j][r];
                b_row[j] = b_logits[j][r];
            }
            const std::vector<double> log_r = assemble_log_ratios(a_row, b_row, c_logits[r]);
            const std::vector<double> probs = assemble_optimal_discriminator(log_r);
            const double p_dec = probs[m];

            double mean_lr = 0.0;
            for (int k = 0; k < m; ++k) {
                mean_lr += log_r[k] / static_cast<double>(m);
                report.mean_log_ratio[k] += log_r[k] / static_cast<double>(n);
            }
            // loss_dec = lse(0, log r) - mean_k log r_k, so that the branch
            // maximizes mass on the encoder classes.
            std::vector<double> lse_terms = log_r;
            lse_terms.push_back(0.0);
            report.gen_dec += (log_sum_exp(lse_terms) - mean_lr) / static_cast<double>(n);

            gt[r] = -p_dec * clamp_mask(c_logits[r]) / static_cast<double>(n);
            for (int j = 0; j < m; ++j) {
                ga[j][r] = (probs[j] - 1.0 / static_cast<double>(m) + p_dec) *
                           clamp_mask(a_logits[j][r]) / static_cast<double>(n);
                gb[j][r] = -p_dec * clamp_mask(b_logits[j][r]) / static_cast<double>(n);
            }
        }

        const Tensor grad_x_all = model_.disc_c.backward(cache_c, gt);
        std::size_t col = 0;
        for (int j = 0; j < m; ++j) {
            Tensor grad_in = model_.disc_a[j].backward(cache_a[j], ga[j]);
            const Tensor grad_in_b = model_.disc_b[j].backward(cache_b[j], gb[j]);
            for (std::size_t k = 0; k < grad_in.numel(); ++k) {
                grad_in[k] += grad_in_b[k];
            }
            const std::size_t nx = cfg_.modality_dims[j];
            Tensor grad_x = col_slice(grad_in, 0, nx);
            for (std::size_t r = 0; r < n; ++r) {
                for (std::size_t k = 0; k < nx; ++k) {
                    grad_x.at(r, k) += grad_x_all.at(r, col + k);
                }
            }
            col += nx;
            model_.decoders[j].backward(cache_dec[j], grad_x);
        }
    }

    // --- encoder backward and the joint generator update -----------------
    for (int j = 0; j < m; ++j) {
        model_.encoders[j].backward(enc[j].cache, grad_raw[j]);
    }

    try {
        report.check_finite();
    } catch (const TrainAbort&) {
        std::ostringstream os;
        os << "generator_step: non-finite loss at iteration " << iteration_ << "\n";
        for (int j = 0; j < m; ++j) {
            os << dump_tensor_stats("enc" + std::to_string(j) + ".raw", enc[j].raw);
        }
        throw TrainAbort(os.str());
    }

    clip_global_grad_norm(model_.generator_stores(), cfg_.grad_clip);
    for (int j = 0; j < m; ++j) {
        adam_step(model_.encoders[j].params, adam_enc_[j]);
        adam_step(model_.decoders[j].params, adam_dec_[j]);
    }
    // Backward through the (frozen) discriminators left gradients behind;
    // drop them so the next discriminator step starts clean.
    for (auto* store : model_.discriminator_stores()) {
        store->zero_grads();
    }
    return report;
}

LossReport Trainer::generator_step_joint(const MultimodalBatch& batch, Rng& rng) {
    const int m = cfg_.modalities;
    const std::size_t dc = cfg_.content_dim;
    const std::size_t ds = cfg_.style_dim;
    const std::size_t total_x =
        std::accumulate(cfg_.modality_dims.begin(), cfg_.modality_dims.end(), std::size_t{0});

    LossReport report;
    report.iteration = iteration_;
    report.gen_enc.assign(m, 0.0);
    report.mean_log_ratio.assign(m, 0.0);

    for (auto* store : model_.generator_stores()) {
        store->zero_grads();
    }
    Mlp& joint = *model_.disc_joint;

    const auto paired = mask_indices(batch, true);

    std::vector<EncodeResult> enc(m);
    std::vector<Tensor> grad_raw(m);
    std::vector<Tensor> xg(m);

    if (!paired.empty()) {
        const std::size_t p = paired.size();
        for (int j = 0; j < m; ++j) {
            xg[j] = row_gather(batch.modalities[j], paired);
            enc[j] = model_.encode(j, xg[j], /*want_cache=*/true);
            grad_raw[j] = Tensor(enc[j].raw.shape());
        }
        for (int i = 0; i < m; ++i) {
            const Tensor eps_c = randn(p, dc, rng);
            const Tensor c = reparam(enc[i].mu_c, enc[i].lv_c, eps_c);
            std::vector<Tensor> eps_s(m), s(m);
            std::vector<const Tensor*> parts;
            for (int j = 0; j < m; ++j) {
                parts.push_back(&xg[j]);
            }
            for (int j = 0; j < m; ++j) {
                eps_s[j] = randn(p, ds, rng);
                s[j] = reparam(enc[j].mu_s, enc[j].lv_s, eps_s[j]);
            }
            for (int j = 0; j < m; ++j) {
                parts.push_back(&s[j]);
            }
            parts.push_back(&c);
            const Tensor in = hcat(parts);
            ForwardCache cache;
            const Tensor logits = joint.forward(in, &cache);

            // log D*[i] - log D*[M+1] collapses to a logit difference.
            Tensor grad(logits.shape());
            for (std::size_t r = 0; r < p; ++r) {
                report.gen_enc[i] +=
                    (logits.at(r, i) - logits.at(r, m)) / static_cast<double>(p);
                grad.at(r, static_cast<std::size_t>(i)) = 1.0 / static_cast<double>(p);
                grad.at(r, static_cast<std::size_t>(m)) = -1.0 / static_cast<double>(p);
            }
            const Tensor grad_in = joint.backward(cache, grad);

            for (int j = 0; j < m; ++j) {
                const std::size_t s_col = total_x + static_cast<std::size_t>(j) * ds;
                const Tensor gs = col_slice(grad_in, s_col, s_col + ds);
                add_reparam_grads(gs, enc[j].lv_s, eps_s[j], enc[j].raw, 2 * dc, 2 * dc + ds,
                                  iota_rows(p), grad_raw[j]);
            }
            const std::size_t c_col = total_x + static_cast<std::size_t>(m) * ds;
            const Tensor gc = col_slice(grad_in, c_col, c_col + dc);
            add_reparam_grads(gc, enc[i].lv_c, eps_c, enc[i].raw, 0, dc, iota_rows(p),
                              grad_raw[i]);
        }
    }

    // Decoder branch from prior tuples.
    {
        const std::size_t n = batch.rows();
        const Tensor c_prior = randn(n, dc, rng);
        std::vector<Tensor> s_prior(m), x_fake(m);
        std::vector<ForwardCache> cache_dec(m);
        std::vector<const Tensor*> parts;
        for (int j = 0; j < m; ++j) {
            s_prior[j] = randn(n, ds, rng);
            const Tensor sc = hcat({&s_prior[j], &c_prior});
            x_fake[j] = model_.decode(j, sc, &cache_dec[j]);
        }
        for (int j = 0; j < m; ++j) {
            parts.push_back(&x_fake[j]);
        }
        for (int j = 0; j < m; ++j) {
            parts.push_back(&s_prior[j]);
        }
        parts.push_back(&c_prior);
        const Tensor in = hcat(parts);
        ForwardCache cache;
        const Tensor logits = joint.forward(in, &cache);

        Tensor grad(logits.shape());
        for (std::size_t r = 0; r < n; ++r) {
            std::vector<double> row(static_cast<std::size_t>(m) + 1);
            for (std::size_t k = 0; k < row.size(); ++k) {
                row[k] = logits.at(r, k);
            }
            const double lse = log_sum_exp(row);
            double mean_enc_logit = 0.0;
            for (int k = 0; k < m; ++k) {
                mean_enc_logit += row[k] / static_cast<double>(m);
                report.mean_log_ratio[k] += (row[k] - row[m]) / static_cast<double>(n);
            }
            report.gen_dec += (lse - mean_enc_logit) / static_cast<double>(n);
            for (std::size_t k = 0; k < row.size(); ++k) {
                const double target = k < static_cast<std::size_t>(m)
                                          ? 1.0 / static_cast<double>(m)
                                          : 0.0;
                grad.at(r, k) = (std::exp(row[k] - lse) - target) / static_cast<double>(n);
            }
        }
        const Tensor grad_in = joint.backward(cache, grad);
        std::size_t col = 0;
        for (int j = 0; j < m; ++j) {
            const std::size_t nx = cfg_.modality_dims[j];
            const Tensor gx = col_slice(grad_in, col, col + nx);
            col += nx;
            model_.decoders[j].backward(cache_dec[j], gx);
        }
    }

    if (!paired.empty()) {
        for (int j = 0; j < m; ++j) {
            model_.encoders[j].backward(enc[j].cache, grad_raw[j]);
        }
    }

    report.check_finite();

    clip_global_grad_norm(model_.generator_stores(), cfg_.grad_clip);
    for (int j = 0; j < m; ++j) {
        adam_step(model_.encoders[j].params, adam_enc_[j]);
        adam_step(model_.decoders[j].params, adam_dec_[j]);
    }
    joint.params.zero_grads();
    return report;
}

std::vector<std::size_t> sample_batch_indices(std::size_t rows, std::size_t batch_size, Rng& rng) {
    if (rows == 0) {
        throw std::invalid_argument("sample_batch_indices: empty dataset");
    }
    std::vector<std::size_t> idx(batch_size);
    for (auto& v : idx) {
        v = static_cast<std::size_t>(rng.below(rows));
    }
    return idx;
}

MultimodalBatch gather_batch(const MultimodalBatch& data, const std::vector<std::size_t>& rows) {
    MultimodalBatch out;
    for (const auto& x : data.modalities) {
        out.modalities.push_back(row_gather(x, rows));
    }
    if (!data.labels.empty()) {
        out.labels.reserve(rows.size());
        for (auto r : rows) {
            out.labels.push_back(data.labels.at(r));
        }
    }
    out.paired_mask.reserve(rows.size());
    for (auto r : rows) {
        out.paired_mask.push_back(data.paired_mask.at(r));
    }
    return out;
}

namespace {
LossReport merge_reports(std::size_t iteration, const LossReport& d, const LossReport& g) {
    LossReport out = d;
    out.iteration = iteration;
    out.gen_enc = g.gen_enc;
    out.gen_dec = g.gen_dec;
    out.mean_log_ratio = g.mean_log_ratio;
    return out;
}
} // namespace

MmaliModel train(const TrainConfig& cfg, const Dataset& dataset, const TrainHooks& hooks) {
    cfg.validate();
    if (dataset.manifest.modalities != cfg.modalities ||
        dataset.manifest.modality_dims != cfg.modality_dims) {
        throw std::invalid_argument(
            "train: dataset manifest (M=" + std::to_string(dataset.manifest.modalities) +
            ", dims=" + format_csv_sizes(dataset.manifest.modality_dims) +
            ") does not match config (M=" + std::to_string(cfg.modalities) +
            ", dims=" + format_csv_sizes(cfg.modality_dims) + ")");
    }

    MultimodalBatch data = dataset.train;
    if (cfg.paired_fraction < 1.0) {
        Rng unpair_rng(cfg.seed, kStreamUnpair);
        unpair(data, 1.0 - cfg.paired_fraction, unpair_rng);
        if (!cfg.use_unpaired) {
            data = drop_unpaired(data);
        }
    }

    Rng init_rng(cfg.seed, kStreamInit);
    Trainer trainer(cfg, init_rng);

    for (std::size_t it = 1; it <= cfg.iterations; ++it) {
        trainer.set_iteration(it);
        Rng iter_rng(cfg.seed, kStreamIterations + it);
        const auto idx = sample_batch_indices(data.rows(), cfg.batch_size, iter_rng);
        const MultimodalBatch batch = gather_batch(data, idx);
        const LossReport d = trainer.discriminator_step(batch, iter_rng);
        const LossReport g = trainer.generator_step(batch, iter_rng);
        if (it % 100 == 0 && hooks.on_report) {
            hooks.on_report(merge_reports(it, d, g));
        }
        if (cfg.checkpoint_every > 0 && it % cfg.checkpoint_every == 0 && hooks.on_checkpoint) {
            hooks.on_checkpoint(trainer.model(), it);
        }
    }
    trainer.apply_ema();
    return std::move(trainer.model());
}

MmaliModel train_joint_baseline(const TrainConfig& cfg, const Dataset& dataset,
                                const TrainHooks& hooks) {
    if (cfg.discriminator_mode != DiscriminatorMode::Joint) {
        throw std::invalid_argument("train_joint_baseline: discriminator_mode must be joint");
    }
    return train(cfg, dataset, hooks);
}

Mlp fit_ratio_discriminator(std::size_t input_dim, const RowSampler& positive,
                            const RowSampler& negative, const RatioFitConfig& cfg) {
    std::vector<std::size_t> widths{input_dim};
    widths.insert(widths.end(), cfg.hidden.begin(), cfg.hidden.end());
    widths.push_back(1);

    Rng init_rng(cfg.seed, kStreamInit);
    Mlp net(MLPSpec(std::move(widths), Activation::LeakyRelu), init_rng);
    AdamState adam(cfg.lr, cfg.adam_beta1, cfg.adam_beta2);

    for (std::size_t step = 1; step <= cfg.steps; ++step) {
        Rng rng(cfg.seed, kStreamIterations + step);
        Tensor in({2 * cfg.batch_size, input_dim});
        for (std::size_t r = 0; r < 2 * cfg.batch_size; ++r) {
            const std::vector<double> row = r < cfg.batch_size ? positive(rng) : negative(rng);
            if (row.size() != input_dim) {
                throw std::invalid_argument("fit_ratio_discriminator: sampler returned dim " +
                                            std::to_string(row.size()));
            }
            for (std::size_t k = 0; k < input_dim; ++k) {
                in.at(r, k) = row[k];
            }
        }
        ForwardCache cache;
        const Tensor logits = net.forward(in, &cache);
        Tensor grad;
        bce_with_grad(logits, cfg.batch_size, grad);
        net.backward(cache, grad);
        clip_global_grad_norm({&net.params}, cfg.grad_clip);
        adam_step(net.params, adam);
    }
    return net;
}

double logistic_loss(const Tensor& logits, std::size_t positives) {
    double loss = 0.0;
    for (std::size_t r = 0; r < logits.rows(); ++r) {
        const double t = logits[r];
        loss += r < positives ? softplus(-t) : softplus(t);
    }
    return loss / static_cast<double>(logits.rows());
}

MetricsWriter::MetricsWriter(const std::string& path, const TrainConfig& cfg)
    : path_(path), out_(path, std::ios::trunc), modalities_(cfg.modalities),
      mode_(cfg.discriminator_mode) {
    if (!out_) {
        throw std::runtime_error("MetricsWriter: cannot open " + path);
    }
    out_ << "iteration";
    if (mode_ == DiscriminatorMode::Factorized) {
        for (int i = 0; i < modalities_; ++i) {
            out_ << ",disc_a" << i;
        }
        for (int i = 0; i < modalities_; ++i) {
            out_ << ",disc_b" << i;
        }
        out_ << ",disc_c,c_skipped";
    } else {
        out_ << ",disc_joint,c_skipped";
    }
    for (int i = 0; i < modalities_; ++i) {
        out_ << ",gen_enc" << i;
    }
    out_ << ",gen_dec";
    for (int i = 0; i < modalities_; ++i) {
        out_ << ",mean_log_ratio" << i;
    }
    out_ << "\n";
    out_.flush();
}

void MetricsWriter::append(const LossReport& report) {
    out_ << report.iteration;
    if (mode_ == DiscriminatorMode::Factorized) {
        for (int i = 0; i < modalities_; ++i) {
            out_ << "," << format_double(report.disc_a.at(i));
        }
        for (int i = 0; i < modalities_; ++i) {
            out_ << "," << format_double(report.disc_b.at(i));
        }
        out_ << "," << format_double(report.disc_c) << "," << (report.c_skipped ? 1 : 0);
    } else {
        out_ << "," << format_double(report.disc_joint) << "," << (report.c_skipped ? 1 : 0);
    }
    for (int i = 0; i < modalities_; ++i) {
        out_ << "," << format_double(report.gen_enc.at(i));
    }
    out_ << "," << format_double(report.gen_dec);
    for (int i = 0; i < modalities_; ++i) {
        out_ << "," << format_double(report.mean_log_ratio.at(i));
    }
    out_ << "\n";
    out_.flush();
}

} // namespace mmali
