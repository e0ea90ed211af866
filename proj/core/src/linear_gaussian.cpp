#include "mmali/linear_gaussian.hpp"

#include <cmath>
#include <set>
#include <stdexcept>

namespace mmali {

namespace {
constexpr double kLog2Pi = 1.8378770664093454836;

double diag_log_pdf(const Eigen::VectorXd& x, const Eigen::VectorXd& mean,
                    const Eigen::VectorXd& log_var) {
    double lp = 0.0;
    for (Eigen::Index i = 0; i < x.size(); ++i) {
        const double d = x[i] - mean[i];
        lp += -0.5 * (kLog2Pi + log_var[i] + d * d * std::exp(-log_var[i]));
    }
    return lp;
}
} // namespace

double GaussianFactor::log_pdf(const Eigen::VectorXd& point) const {
    Eigen::VectorXd cond(given.size());
    for (std::size_t i = 0; i < given.size(); ++i) {
        cond[static_cast<Eigen::Index>(i)] = point[given[i]];
    }
    Eigen::VectorXd mean = offset;
    if (!given.empty()) {
        mean += coeff * cond;
    }
    Eigen::VectorXd x(target.size());
    for (std::size_t i = 0; i < target.size(); ++i) {
        x[static_cast<Eigen::Index>(i)] = point[target[i]];
    }
    return diag_log_pdf(x, mean, log_var);
}

double JointDensity::log_pdf(const Eigen::VectorXd& point) const {
    if (point.size() != dim) {
        throw std::invalid_argument("JointDensity::log_pdf: point dim " +
                                    std::to_string(point.size()) + " != " + std::to_string(dim));
    }
    double lp = 0.0;
    for (const auto& f : factors) {
        lp += f.log_pdf(point);
    }
    return lp;
}

Eigen::VectorXd JointDensity::sample(Rng& rng) const {
    Eigen::VectorXd point = Eigen::VectorXd::Zero(dim);
    for (const auto& f : factors) {
        Eigen::VectorXd cond(f.given.size());
        for (std::size_t i = 0; i < f.given.size(); ++i) {
            cond[static_cast<Eigen::Index>(i)] = point[f.given[i]];
        }
        Eigen::VectorXd mean = f.offset;
        if (!f.given.empty()) {
            mean += f.coeff * cond;
        }
        for (std::size_t i = 0; i < f.target.size(); ++i) {
            const auto k = static_cast<Eigen::Index>(i);
            point[f.target[i]] = mean[k] + std::exp(0.5 * f.log_var[k]) * rng.normal();
        }
    }
    return point;
}

void JointDensity::validate() const {
    std::set<int> produced;
    for (const auto& f : factors) {
        for (int g : f.given) {
            if (!produced.count(g)) {
                throw std::logic_error("JointDensity: factor conditions on coordinate " +
                                       std::to_string(g) + " before it is produced");
            }
        }
        for (int t : f.target) {
            if (t < 0 || t >= dim || produced.count(t)) {
                throw std::logic_error("JointDensity: bad or duplicated target coordinate " +
                                       std::to_string(t));
            }
            produced.insert(t);
        }
    }
    if (static_cast<int>(produced.size()) != dim) {
        throw std::logic_error("JointDensity: factors cover " + std::to_string(produced.size()) +
                               " of " + std::to_string(dim) + " coordinates");
    }
}

double analytic_log_ratio(const JointDensity& numerator, const JointDensity& denominator,
                          const Eigen::VectorXd& point) {
    if (numerator.dim != denominator.dim) {
        throw std::invalid_argument("analytic_log_ratio: dim mismatch");
    }
    return numerator.log_pdf(point) - denominator.log_pdf(point);
}

LinearGaussianRig LinearGaussianRig::make(int modalities, int modality_dim, int content_dim,
                                          int style_dim, std::uint64_t seed) {
    if (modalities < 1 || modality_dim < 1 || content_dim < 0 || style_dim < 0) {
        throw std::invalid_argument("LinearGaussianRig: bad dimensions");
    }
    Rng rng(seed, /*stream=*/71);
    auto vec = [&](int n, double lo, double hi) {
        Eigen::VectorXd v(n);
        for (int i = 0; i < n; ++i) {
            v[i] = rng.uniform(lo, hi);
        }
        return v;
    };
    auto mat = [&](int r, int c, double scale) {
        Eigen::MatrixXd m(r, c);
        for (int i = 0; i < r; ++i) {
            for (int j = 0; j < c; ++j) {
                m(i, j) = rng.uniform(-scale, scale);
            }
        }
        return m;
    };

    LinearGaussianRig rig;
    rig.modalities = modalities;
    rig.modality_dim = modality_dim;
    rig.content_dim = content_dim;
    rig.style_dim = style_dim;

    for (int j = 0; j < modalities; ++j) {
        rig.chain_coeff.push_back(j == 0 ? Eigen::VectorXd::Zero(modality_dim).eval()
                                         : vec(modality_dim, 0.3, 0.8));
        rig.chain_offset.push_back(vec(modality_dim, -0.5, 0.5));
        rig.chain_log_var.push_back(vec(modality_dim, -1.2, -0.4));

        rig.enc_content_coeff.push_back(mat(content_dim, modality_dim, 0.7));
        rig.enc_content_offset.push_back(vec(content_dim, -0.3, 0.3));
        rig.enc_content_log_var.push_back(vec(content_dim, -1.0, -0.3));

        rig.enc_style_coeff.push_back(mat(style_dim, modality_dim, 0.7));
        rig.enc_style_offset.push_back(vec(style_dim, -0.3, 0.3));
        rig.enc_style_log_var.push_back(vec(style_dim, -1.0, -0.3));

        rig.dec_coeff.push_back(mat(modality_dim, style_dim + content_dim, 0.7));
        rig.dec_offset.push_back(vec(modality_dim, -0.5, 0.5));
        rig.dec_log_var.push_back(vec(modality_dim, -1.0, -0.3));
    }
    return rig;
}

int LinearGaussianRig::point_dim() const {
    return modalities * (modality_dim + style_dim) + content_dim;
}

DiagGaussian LinearGaussianRig::data_marginal(int i) const {
    Eigen::VectorXd mean = chain_offset[0];
    Eigen::VectorXd var = chain_log_var[0].array().exp();
    for (int j = 1; j <= i; ++j) {
        mean = chain_coeff[j].cwiseProduct(mean) + chain_offset[j];
        var = chain_coeff[j].array().square() * var.array() + chain_log_var[j].array().exp();
    }
    std::vector<double> m(mean.data(), mean.data() + mean.size());
    std::vector<double> lv(var.size());
    for (Eigen::Index k = 0; k < var.size(); ++k) {
        lv[static_cast<std::size_t>(k)] = std::log(var[k]);
    }
    return DiagGaussian(std::move(m), std::move(lv));
}

namespace {
std::vector<int> index_range(int from, int count) {
    std::vector<int> idx(count);
    for (int i = 0; i < count; ++i) {
        idx[i] = from + i;
    }
    return idx;
}
} // namespace

double LinearGaussianRig::factor_joint_data(const Eigen::VectorXd& point) const {
    // Chain and marginal terms for x_0 coincide, so the sum starts at 1.
    double lp = 0.0;
    for (int j = 1; j < modalities; ++j) {
        const auto xj = point.segment(x_offset(j), modality_dim);
        const auto xprev = point.segment(x_offset(j - 1), modality_dim);
        const Eigen::VectorXd cond_mean = chain_coeff[j].cwiseProduct(xprev) + chain_offset[j];
        lp += diag_log_pdf(xj, cond_mean, chain_log_var[j]);

        const DiagGaussian marg = data_marginal(j);
        std::vector<double> x(xj.data(), xj.data() + xj.size());
        lp -= log_pdf(marg, x);
    }
    return lp;
}

double LinearGaussianRig::factor_content(int i, const Eigen::VectorXd& point) const {
    const auto xi = point.segment(x_offset(i), modality_dim);
    const auto c = point.segment(c_offset(), content_dim);
    const Eigen::VectorXd mean = enc_content_coeff[i] * xi + enc_content_offset[i];
    const double lq = diag_log_pdf(c, mean, enc_content_log_var[i]);
    const double lp =
        diag_log_pdf(c, Eigen::VectorXd::Zero(content_dim), Eigen::VectorXd::Zero(content_dim));
    return lq - lp;
}

double LinearGaussianRig::factor_unimodal(int j, const Eigen::VectorXd& point) const {
    const auto xj = point.segment(x_offset(j), modality_dim);
    const auto sj = point.segment(s_offset(j), style_dim);
    const auto c = point.segment(c_offset(), content_dim);

    std::vector<double> xj_v(xj.data(), xj.data() + xj.size());
    double lq = log_pdf(data_marginal(j), xj_v);
    lq += diag_log_pdf(sj, enc_style_coeff[j] * xj + enc_style_offset[j], enc_style_log_var[j]);
    lq += diag_log_pdf(c, enc_content_coeff[j] * xj + enc_content_offset[j],
                       enc_content_log_var[j]);

    double lp =
        diag_log_pdf(c, Eigen::VectorXd::Zero(content_dim), Eigen::VectorXd::Zero(content_dim));
    lp += diag_log_pdf(sj, Eigen::VectorXd::Zero(style_dim), Eigen::VectorXd::Zero(style_dim));
    Eigen::VectorXd sc(style_dim + content_dim);
    sc << sj, c;
    lp += diag_log_pdf(xj, dec_coeff[j] * sc + dec_offset[j], dec_log_var[j]);

    return lq - lp;
}

double LinearGaussianRig::assembled_log_ratio(int i, const Eigen::VectorXd& point) const {
    double lr = factor_joint_data(point) + factor_content(i, point);
    for (int j = 0; j < modalities; ++j) {
        lr += factor_unimodal(j, point) - factor_content(j, point);
    }
    return lr;
}

JointDensity LinearGaussianRig::encoder_joint(int i) const {
    JointDensity jd;
    jd.dim = point_dim();
    for (int j = 0; j < modalities; ++j) {
        GaussianFactor f;
        f.target = index_range(x_offset(j), modality_dim);
        if (j > 0) {
            f.given = index_range(x_offset(j - 1), modality_dim);
            f.coeff = chain_coeff[j].asDiagonal();
        }
        f.offset = chain_offset[j];
        f.log_var = chain_log_var[j];
        jd.factors.push_back(std::move(f));
    }
    for (int j = 0; j < modalities; ++j) {
        GaussianFactor f;
        f.target = index_range(s_offset(j), style_dim);
        f.given = index_range(x_offset(j), modality_dim);
        f.coeff = enc_style_coeff[j];
        f.offset = enc_style_offset[j];
        f.log_var = enc_style_log_var[j];
        jd.factors.push_back(std::move(f));
    }
    GaussianFactor fc;
    fc.target = index_range(c_offset(), content_dim);
    fc.given = index_range(x_offset(i), modality_dim);
    fc.coeff = enc_content_coeff[i];
    fc.offset = enc_content_offset[i];
    fc.log_var = enc_content_log_var[i];
    jd.factors.push_back(std::move(fc));
    jd.validate();
    return jd;
}

JointDensity LinearGaussianRig::decoder_joint() const {
    JointDensity jd;
    jd.dim = point_dim();
    GaussianFactor fc;
    fc.target = index_range(c_offset(), content_dim);
    fc.offset = Eigen::VectorXd::Zero(content_dim);
    fc.log_var = Eigen::VectorXd::Zero(content_dim);
    jd.factors.push_back(std::move(fc));
    for (int j = 0; j < modalities; ++j) {
        GaussianFactor fs;
        fs.target = index_range(s_offset(j), style_dim);
        fs.offset = Eigen::VectorXd::Zero(style_dim);
        fs.log_var = Eigen::VectorXd::Zero(style_dim);
        jd.factors.push_back(std::move(fs));

        GaussianFactor fx;
        fx.target = index_range(x_offset(j), modality_dim);
        fx.given = index_range(s_offset(j), style_dim);
        auto cidx = index_range(c_offset(), content_dim);
        fx.given.insert(fx.given.end(), cidx.begin(), cidx.end());
        fx.coeff = dec_coeff[j];
        fx.offset = dec_offset[j];
        fx.log_var = dec_log_var[j];
        jd.factors.push_back(std::move(fx));
    }
    jd.validate();
    return jd;
}

double LinearGaussianRig::direct_log_ratio(int i, const Eigen::VectorXd& point) const {
    return analytic_log_ratio(encoder_joint(i), decoder_joint(), point);
}

Eigen::VectorXd LinearGaussianRig::sample_mixture(Rng& rng) const {
    const auto pick = rng.below(static_cast<std::uint64_t>(modalities + 1));
    if (pick == static_cast<std::uint64_t>(modalities)) {
        return decoder_joint().sample(rng);
    }
    return encoder_joint(static_cast<int>(pick)).sample(rng);
}

} // namespace mmali
