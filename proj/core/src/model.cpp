#include "mmali/model.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <stdexcept>

#include "mmali/checkpoint.hpp"
#include "mmali/kv.hpp"

namespace mmali {

void ModelConfig::validate() const {
    if (modalities < 1) {
        throw std::invalid_argument("ModelConfig: need at least one modality");
    }
    if (modality_dims.size() != static_cast<std::size_t>(modalities)) {
        throw std::invalid_argument("ModelConfig: modality_dims count != modalities");
    }
    for (auto d : modality_dims) {
        if (d < 1) {
            throw std::invalid_argument("ModelConfig: modality dims must be >= 1");
        }
    }
}

double clamp_logit(double t) {
    return std::min(kLogitClamp, std::max(-kLogitClamp, t));
}

std::vector<double> assemble_log_ratios(const std::vector<double>& a_logits,
                                        const std::vector<double>& b_logits, double c_logit) {
    if (a_logits.size() != b_logits.size()) {
        throw std::invalid_argument("assemble_log_ratios: A/B logit count mismatch");
    }
    const std::size_t m = a_logits.size();
    double shared = clamp_logit(c_logit);
    for (std::size_t j = 0; j < m; ++j) {
        shared += clamp_logit(b_logits[j]) - clamp_logit(a_logits[j]);
    }
    std::vector<double> log_r(m);
    for (std::size_t i = 0; i < m; ++i) {
        log_r[i] = shared + clamp_logit(a_logits[i]);
    }
    return log_r;
}

std::vector<double> assemble_optimal_discriminator(const std::vector<double>& log_ratios) {
    std::vector<double> values = log_ratios;
    values.push_back(0.0); // the decoder class carries ratio 1
    const double lse = log_sum_exp(values);
    std::vector<double> probs(values.size());
    for (std::size_t i = 0; i < values.size(); ++i) {
        probs[i] = std::exp(values[i] - lse);
    }
    return probs;
}

MLPSpec encoder_spec(const ModelConfig& cfg, int i) {
    std::vector<std::size_t> widths{cfg.modality_dims[i]};
    widths.insert(widths.end(), cfg.enc_hidden.begin(), cfg.enc_hidden.end());
    widths.push_back(2 * cfg.content_dim + 2 * cfg.style_dim);
    return MLPSpec(std::move(widths), cfg.gen_activation);
}

MLPSpec decoder_spec(const ModelConfig& cfg, int i) {
    std::vector<std::size_t> widths{cfg.style_dim + cfg.content_dim};
    if (widths[0] == 0) {
        throw std::invalid_argument("decoder_spec: style_dim + content_dim must be positive");
    }
    widths.insert(widths.end(), cfg.dec_hidden.begin(), cfg.dec_hidden.end());
    widths.push_back(cfg.modality_dims[i]);
    return MLPSpec(std::move(widths), cfg.gen_activation);
}

MLPSpec disc_ab_spec(const ModelConfig& cfg, int i) {
    std::vector<std::size_t> widths{cfg.modality_dims[i] + cfg.style_dim + cfg.content_dim};
    widths.insert(widths.end(), cfg.disc_hidden.begin(), cfg.disc_hidden.end());
    widths.push_back(1);
    return MLPSpec(std::move(widths), cfg.disc_activation);
}

MLPSpec disc_c_spec(const ModelConfig& cfg) {
    const std::size_t total =
        std::accumulate(cfg.modality_dims.begin(), cfg.modality_dims.end(), std::size_t{0});
    std::vector<std::size_t> widths{total};
    widths.insert(widths.end(), cfg.disc_hidden.begin(), cfg.disc_hidden.end());
    widths.push_back(1);
    return MLPSpec(std::move(widths), cfg.disc_activation);
}

MLPSpec disc_joint_spec(const ModelConfig& cfg) {
    const std::size_t total =
        std::accumulate(cfg.modality_dims.begin(), cfg.modality_dims.end(), std::size_t{0});
    std::vector<std::size_t> widths{total + cfg.modalities * cfg.style_dim + cfg.content_dim};
    widths.insert(widths.end(), cfg.disc_hidden.begin(), cfg.disc_hidden.end());
    widths.push_back(static_cast<std::size_t>(cfg.modalities) + 1);
    return MLPSpec(std::move(widths), cfg.disc_activation);
}

MmaliModel::MmaliModel(ModelConfig cfg, Rng& rng) : config(std::move(cfg)) {
    config.validate();
    for (int i = 0; i < config.modalities; ++i) {
        encoders.emplace_back(encoder_spec(config, i), rng);
        decoders.emplace_back(decoder_spec(config, i), rng);
        disc_a.emplace_back(disc_ab_spec(config, i), rng);
        disc_b.emplace_back(disc_ab_spec(config, i), rng);
    }
    disc_c = Mlp(disc_c_spec(config), rng);
    if (config.joint_discriminator) {
        disc_joint = Mlp(disc_joint_spec(config), rng);
    }
}

namespace {
void check_modality(int i, int m, const char* op) {
    if (i < 0 || i >= m) {
        throw std::out_of_range(std::string(op) + ": modality " + std::to_string(i) +
                                " out of range [0, " + std::to_string(m) + ")");
    }
}
} // namespace

EncodeResult MmaliModel::encode(int i, const Tensor& x, bool want_cache) const {
    check_modality(i, config.modalities, "encode");
    EncodeResult out;
    out.raw = encoders[i].forward(x, want_cache ? &out.cache : nullptr);

    const std::size_t dc = config.content_dim;
    const std::size_t ds = config.style_dim;
    out.mu_c = col_slice(out.raw, 0, dc);
    out.lv_c = col_slice(out.raw, dc, 2 * dc);
    out.mu_s = col_slice(out.raw, 2 * dc, 2 * dc + ds);
    out.lv_s = col_slice(out.raw, 2 * dc + ds, 2 * dc + 2 * ds);
    for (auto& v : out.lv_c.data()) {
        v = clamp_log_var(v);
    }
    for (auto& v : out.lv_s.data()) {
        v = clamp_log_var(v);
    }
    return out;
}

std::pair<DiagGaussian, DiagGaussian> MmaliModel::encode_row(int i,
                                                             const std::vector<double>& x) const {
    const EncodeResult r = encode(i, Tensor::row(x));
    DiagGaussian content(r.mu_c.data(), r.lv_c.data());
    DiagGaussian style(r.mu_s.data(), r.lv_s.data());
    return {std::move(content), std::move(style)};
}

Tensor MmaliModel::decode(int i, const Tensor& style_content, ForwardCache* cache) const {
    check_modality(i, config.modalities, "decode");
    return decoders[i].forward(style_content, cache);
}

std::vector<double> MmaliModel::decode_row(int i, const std::vector<double>& style,
                                           const std::vector<double>& content) const {
    if (style.size() != config.style_dim || content.size() != config.content_dim) {
        throw std::invalid_argument("decode_row: style/content dims (" +
                                    std::to_string(style.size()) + ", " +
                                    std::to_string(content.size()) + ") do not match model (" +
                                    std::to_string(config.style_dim) + ", " +
                                    std::to_string(config.content_dim) + ")");
    }
    std::vector<double> in(style);
    in.insert(in.end(), content.begin(), content.end());
    return decode(i, Tensor::row(std::move(in))).data();
}

namespace {
double scalar_logit(const Mlp& net, std::vector<double> input) {
    return net.forward(Tensor::row(std::move(input))).data()[0];
}

std::vector<double> tuple_input(const std::vector<double>& x, const std::vector<double>& style,
                                const std::vector<double>& content) {
    std::vector<double> in(x);
    in.insert(in.end(), style.begin(), style.end());
    in.insert(in.end(), content.begin(), content.end());
    return in;
}
} // namespace

double MmaliModel::logit_a(int i, const std::vector<double>& x, const std::vector<double>& style,
                           const std::vector<double>& content) const {
    check_modality(i, config.modalities, "logit_a");
    return scalar_logit(disc_a[i], tuple_input(x, style, content));
}

double MmaliModel::logit_b(int i, const std::vector<double>& x, const std::vector<double>& style,
                           const std::vector<double>& content) const {
    check_modality(i, config.modalities, "logit_b");
    return scalar_logit(disc_b[i], tuple_input(x, style, content));
}

double MmaliModel::logit_c(const std::vector<std::vector<double>>& xs) const {
    std::vector<double> in;
    for (const auto& x : xs) {
        in.insert(in.end(), x.begin(), x.end());
    }
    return scalar_logit(disc_c, std::move(in));
}

std::vector<double> MmaliModel::model_log_ratios(const std::vector<std::vector<double>>& xs,
                                                 const std::vector<std::vector<double>>& styles,
                                                 const std::vector<double>& content) const {
    std::vector<double> a(config.modalities), b(config.modalities);
    for (int i = 0; i < config.modalities; ++i) {
        a[i] = logit_a(i, xs[i], styles[i], content);
        b[i] = logit_b(i, xs[i], styles[i], content);
    }
    return assemble_log_ratios(a, b, logit_c(xs));
}

std::vector<double> MmaliModel::cross_generate(int source, const std::vector<double>& x_source,
                                               int target, StyleSource style, Rng& rng,
                                               const std::vector<double>* provided_style) const {
    check_modality(source, config.modalities, "cross_generate");
    check_modality(target, config.modalities, "cross_generate");
    auto [content_post, style_post] = encode_row(source, x_source);
    (void)style_post;
    const std::vector<double> c = sample(content_post, rng);

    std::vector<double> s;
    if (style == StyleSource::Provided) {
        if (!provided_style) {
            throw std::invalid_argument("cross_generate: StyleSource::Provided without a style");
        }
        s = *provided_style;
    } else {
        s = sample(DiagGaussian::standard(config.style_dim), rng);
    }
    return decode_row(target, s, c);
}

std::vector<std::vector<double>> MmaliModel::joint_generate(Rng& rng) const {
    const std::vector<double> c = sample(DiagGaussian::standard(config.content_dim), rng);
    std::vector<std::vector<double>> out(config.modalities);
    for (int i = 0; i < config.modalities; ++i) {
        const std::vector<double> s = sample(DiagGaussian::standard(config.style_dim), rng);
        out[i] = decode_row(i, s, c);
    }
    return out;
}

void MmaliModel::save(const std::string& prefix) const {
    std::map<std::string, Tensor> entries;
    for (int i = 0; i < config.modalities; ++i) {
        collect_params(encoders[i].params, "enc" + std::to_string(i), entries);
        collect_params(decoders[i].params, "dec" + std::to_string(i), entries);
        collect_params(disc_a[i].params, "discA" + std::to_string(i), entries);
        collect_params(disc_b[i].params, "discB" + std::to_string(i), entries);
    }
    collect_params(disc_c.params, "discC", entries);
    if (disc_joint) {
        collect_params(disc_joint->params, "discJoint", entries);
    }
    save_checkpoint(entries, prefix + ".ckpt");

    KvDoc doc;
    doc.set("format", "mmali-model-v1");
    doc.set("modalities", std::to_string(config.modalities));
    doc.set("modality_dims", format_csv_sizes(config.modality_dims));
    doc.set("content_dim", std::to_string(config.content_dim));
    doc.set("style_dim", std::to_string(config.style_dim));
    doc.set("enc_hidden", format_csv_sizes(config.enc_hidden));
    doc.set("dec_hidden", format_csv_sizes(config.dec_hidden));
    doc.set("disc_hidden", format_csv_sizes(config.disc_hidden));
    doc.set("gen_activation", activation_name(config.gen_activation));
    doc.set("disc_activation", activation_name(config.disc_activation));
    doc.set("joint_discriminator", config.joint_discriminator ? "1" : "0");
    doc.save(prefix + ".manifest");
}

MmaliModel MmaliModel::load(const std::string& prefix) {
    const KvDoc doc = KvDoc::load(prefix + ".manifest");
    if (doc.get_or("format", "") != "mmali-model-v1") {
        throw std::runtime_error("model manifest: unsupported format");
    }
    ModelConfig cfg;
    cfg.modalities = static_cast<int>(parse_int(doc.get("modalities"), "model modalities"));
    cfg.modality_dims = parse_csv_sizes(doc.get("modality_dims"), "model modality_dims");
    cfg.content_dim = static_cast<std::size_t>(parse_int(doc.get("content_dim"), "content_dim"));
    cfg.style_dim = static_cast<std::size_t>(parse_int(doc.get("style_dim"), "style_dim"));
    cfg.enc_hidden = parse_csv_sizes(doc.get("enc_hidden"), "enc_hidden");
    cfg.dec_hidden = parse_csv_sizes(doc.get("dec_hidden"), "dec_hidden");
    cfg.disc_hidden = parse_csv_sizes(doc.get("disc_hidden"), "disc_hidden");
    cfg.gen_activation = activation_from_name(doc.get("gen_activation"));
    cfg.disc_activation = activation_from_name(doc.get("disc_activation"));
    cfg.joint_discriminator = doc.get_or("joint_discriminator", "0") == "1";

    Rng scratch(0);
    MmaliModel model(cfg, scratch);
    const auto entries = load_checkpoint(prefix + ".ckpt");
    for (int i = 0; i < cfg.modalities; ++i) {
        restore_params(model.encoders[i].params, "enc" + std::to_string(i), entries);
        restore_params(model.decoders[i].params, "dec" + std::to_string(i), entries);
        restore_params(model.disc_a[i].params, "discA" + std::to_string(i), entries);
        restore_params(model.disc_b[i].params, "discB" + std::to_string(i), entries);
    }
    restore_params(model.disc_c.params, "discC", entries);
    if (model.disc_joint) {
        restore_params(model.disc_joint->params, "discJoint", entries);
    }
    return model;
}

std::vector<ParamStore*> MmaliModel::generator_stores() {
    std::vector<ParamStore*> out;
    for (auto& e : encoders) {
        out.push_back(&e.params);
    }
    for (auto& d : decoders) {
        out.push_back(&d.params);
    }
    return out;
}

std::vector<ParamStore*> MmaliModel::discriminator_stores() {
    std::vector<ParamStore*> out;
    for (auto& d : disc_a) {
        out.push_back(&d.params);
    }
    for (auto& d : disc_b) {
        out.push_back(&d.params);
    }
    out.push_back(&disc_c.params);
    if (disc_joint) {
        out.push_back(&disc_joint->params);
    }
    return out;
}

} // namespace mmali
