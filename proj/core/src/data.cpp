#include "mmali/data.hpp"

#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <stdexcept>

#include "mmali/kv.hpp"

namespace mmali {

namespace fs = std::filesystem;

void MultimodalBatch::validate() const {
    const std::size_t n = rows();
    for (std::size_t i = 0; i < modalities.size(); ++i) {
        if (modalities[i].rows() != n) {
            throw std::invalid_argument("MultimodalBatch: modality " + std::to_string(i) +
                                        " has " + std::to_string(modalities[i].rows()) +
                                        " rows, expected " + std::to_string(n));
        }
    }
    if (!labels.empty() && labels.size() != n) {
        throw std::invalid_argument("MultimodalBatch: label count mismatch");
    }
    if (paired_mask.size() != n) {
        throw std::invalid_argument("MultimodalBatch: paired_mask count mismatch");
    }
}

AffineMap AffineMap::identity() { return AffineMap{}; }

AffineMap AffineMap::rotation(double degrees) {
    const double rad = degrees * M_PI / 180.0;
    AffineMap m;
    m.linear = {std::cos(rad), -std::sin(rad), std::sin(rad), std::cos(rad)};
    return m;
}

std::array<double, 2> AffineMap::apply(double x, double y) const {
    return {linear[0] * x + linear[1] * y + offset[0], linear[2] * x + linear[3] * y + offset[1]};
}

double AffineMap::determinant() const {
    return linear[0] * linear[3] - linear[1] * linear[2];
}

namespace {

std::vector<std::array<double, 2>> ring_centers(int k_components) {
    std::vector<std::array<double, 2>> centers(k_components);
    for (int k = 0; k < k_components; ++k) {
        const double angle = 2.0 * M_PI * k / k_components;
        centers[k] = {std::cos(angle), std::sin(angle)};
    }
    return centers;
}

MultimodalBatch generate_split(const GaussianRingParams& p,
                               const std::vector<std::array<double, 2>>& centers,
                               std::size_t rows, Rng& rng) {
    MultimodalBatch batch;
    batch.modalities.assign(p.modalities, Tensor({rows, 2}));
    batch.labels.resize(rows);
    batch.paired_mask.assign(rows, true);
    for (std::size_t r = 0; r < rows; ++r) {
        const int label = static_cast<int>(rng.below(static_cast<std::uint64_t>(p.components)));
        batch.labels[r] = label;
        double shared_x = 0.0;
        double shared_y = 0.0;
        if (!p.instance_redraw) {
            shared_x = centers[label][0] + p.cluster_sigma * rng.normal();
            shared_y = centers[label][1] + p.cluster_sigma * rng.normal();
        }
        for (int i = 0; i < p.modalities; ++i) {
            double bx = shared_x;
            double by = shared_y;
            if (p.instance_redraw) {
                bx = centers[label][0] + p.cluster_sigma * rng.normal();
                by = centers[label][1] + p.cluster_sigma * rng.normal();
            }
            auto obs = p.transforms[i].apply(bx, by);
            obs[0] += p.noise_sigma * rng.normal();
            obs[1] += p.noise_sigma * rng.normal();
            batch.modalities[i].at(r, 0) = obs[0];
            batch.modalities[i].at(r, 1) = obs[1];
        }
    }
    return batch;
}

std::uint64_t fnv1a(const char* data, std::size_t len) {
    std::uint64_t h = 0xcbf29ce484222325ULL;
    for (std::size_t i = 0; i < len; ++i) {
        h ^= static_cast<unsigned char>(data[i]);
        h *= 0x100000001b3ULL;
    }
    return h;
}

std::string hash_hex(const std::string& bytes) {
    char buf[20];
    std::snprintf(buf, sizeof(buf), "%016llx",
                  static_cast<unsigned long long>(fnv1a(bytes.data(), bytes.size())));
    return buf;
}

void write_file(const fs::path& path, const std::string& bytes) {
    std::ofstream out(path, std::ios::binary);
    if (!out) {
        throw std::runtime_error("cannot open " + path.string() + " for writing");
    }
    out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
    if (!out) {
        throw std::runtime_error("write failed: " + path.string());
    }
}

std::string read_file(const fs::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) {
        throw std::runtime_error("cannot open " + path.string());
    }
    std::string bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
    return bytes;
}

std::string f64_bytes(const Tensor& t) {
    std::string bytes(t.numel() * 8, '\0');
    for (std::size_t i = 0; i < t.numel(); ++i) {
        const double v = t[i];
        std::uint64_t bits;
        std::memcpy(&bits, &v, 8);
        for (int b = 0; b < 8; ++b) {
            bytes[i * 8 + b] = static_cast<char>((bits >> (8 * b)) & 0xff);
        }
    }
    return bytes;
}

Tensor f64_from_bytes(const std::string& bytes, std::size_t rows, std::size_t cols,
                      const std::string& file) {
    if (bytes.size() != rows * cols * 8) {
        throw std::runtime_error("dataset file " + file + ": has " +
                                 std::to_string(bytes.size()) + " bytes, expected shape [" +
                                 std::to_string(rows) + "x" + std::to_string(cols) + "] = " +
                                 std::to_string(rows * cols * 8) + " bytes");
    }
    Tensor t({rows, cols});
    for (std::size_t i = 0; i < rows * cols; ++i) {
        std::uint64_t bits = 0;
        for (int b = 0; b < 8; ++b) {
            bits |= static_cast<std::uint64_t>(static_cast<unsigned char>(bytes[i * 8 + b]))
                    << (8 * b);
        }
        double v;
        std::memcpy(&v, &bits, 8);
        t[i] = v;
    }
    return t;
}

std::string i64_bytes(const std::vector<int>& values) {
    std::string bytes(values.size() * 8, '\0');
    for (std::size_t i = 0; i < values.size(); ++i) {
        const auto v = static_cast<std::int64_t>(values[i]);
        for (int b = 0; b < 8; ++b) {
            bytes[i * 8 + b] = static_cast<char>((static_cast<std::uint64_t>(v) >> (8 * b)) & 0xff);
        }
    }
    return bytes;
}

std::vector<int> i64_from_bytes(const std::string& bytes, std::size_t rows,
                                const std::string& file) {
    if (bytes.size() != rows * 8) {
        throw std::runtime_error("dataset file " + file + ": has " +
                                 std::to_string(bytes.size()) + " bytes, expected shape [" +
                                 std::to_string(rows) + "] = " + std::to_string(rows * 8) +
                                 " bytes");
    }
    std::vector<int> values(rows);
    for (std::size_t i = 0; i < rows; ++i) {
        std::uint64_t bits = 0;
        for (int b = 0; b < 8; ++b) {
            bits |= static_cast<std::uint64_t>(static_cast<unsigned char>(bytes[i * 8 + b]))
                    << (8 * b);
        }
        values[i] = static_cast<int>(static_cast<std::int64_t>(bits));
    }
    return values;
}

std::string mask_bytes(const std::vector<bool>& mask) {
    std::string bytes(mask.size(), '\0');
    for (std::size_t i = 0; i < mask.size(); ++i) {
        bytes[i] = mask[i] ? 1 : 0;
    }
    return bytes;
}

std::vector<bool> mask_from_bytes(const std::string& bytes, std::size_t rows,
                                  const std::string& file) {
    if (bytes.size() != rows) {
        throw std::runtime_error("dataset file " + file + ": has " +
                                 std::to_string(bytes.size()) + " bytes, expected shape [" +
                                 std::to_string(rows) + "]");
    }
    std::vector<bool> mask(rows);
    for (std::size_t i = 0; i < rows; ++i) {
        mask[i] = bytes[i] != 0;
    }
    return mask;
}

} // namespace

Dataset generate_gaussian_ring(const GaussianRingParams& params) {
    GaussianRingParams p = params;
    if (p.components < 2) {
        throw std::invalid_argument("generate_gaussian_ring: need at least 2 components");
    }
    if (p.modalities < 1) {
        throw std::invalid_argument("generate_gaussian_ring: need at least 1 modality");
    }
    if (p.transforms.empty()) {
        for (int i = 0; i < p.modalities; ++i) {
            p.transforms.push_back(AffineMap::rotation(90.0 * i));
        }
    }
    if (static_cast<int>(p.transforms.size()) != p.modalities) {
        throw std::invalid_argument("generate_gaussian_ring: transform count != modalities");
    }
    for (std::size_t i = 0; i < p.transforms.size(); ++i) {
        if (std::abs(p.transforms[i].determinant()) < 1e-12) {
            throw std::invalid_argument("generate_gaussian_ring: transform " + std::to_string(i) +
                                        " is not invertible");
        }
    }

    const auto centers = ring_centers(p.components);
    Rng train_rng(p.seed, /*stream=*/11);
    Rng test_rng(p.seed, /*stream=*/12);

    Dataset ds;
    ds.train = generate_split(p, centers, p.train_rows, train_rng);
    ds.test = generate_split(p, centers, p.test_rows, test_rng);

    ds.manifest.name = "gaussian-ring";
    ds.manifest.generator = "gaussian-ring";
    ds.manifest.modalities = p.modalities;
    ds.manifest.modality_dims.assign(p.modalities, 2);
    ds.manifest.components = p.components;
    ds.manifest.cluster_sigma = p.cluster_sigma;
    ds.manifest.noise_sigma = p.noise_sigma;
    ds.manifest.seed = p.seed;
    ds.manifest.train_rows = p.train_rows;
    ds.manifest.test_rows = p.test_rows;
    ds.manifest.transforms = p.transforms;
    ds.manifest.instance_redraw = p.instance_redraw;
    return ds;
}

void unpair(MultimodalBatch& batch, double fraction, Rng& rng) {
    if (fraction < 0.0 || fraction > 1.0) {
        throw std::invalid_argument("unpair: fraction must lie in [0, 1]");
    }
    batch.validate();
    const std::size_t rows = batch.rows();
    const auto count = static_cast<std::size_t>(std::floor(fraction * static_cast<double>(rows)));
    if (count == 0) {
        return;
    }
    const auto order = rng.permutation(rows);
    std::vector<std::size_t> selected(order.begin(), order.begin() + static_cast<long>(count));
    for (std::size_t r : selected) {
        batch.paired_mask[r] = false;
    }
    // Modality 0 keeps its values (and the labels stay valid for it); every
    // other modality is shuffled independently within the selected rows.
    for (std::size_t i = 1; i < batch.num_modalities(); ++i) {
        const auto perm = rng.permutation(count);
        Tensor& x = batch.modalities[i];
        const Tensor original = x;
        for (std::size_t a = 0; a < count; ++a) {
            const std::size_t dst = selected[a];
            const std::size_t src = selected[perm[a]];
            for (std::size_t c = 0; c < x.cols(); ++c) {
                x.at(dst, c) = original.at(src, c);
            }
        }
    }
}

MultimodalBatch drop_unpaired(const MultimodalBatch& batch) {
    std::vector<std::size_t> keep;
    for (std::size_t r = 0; r < batch.rows(); ++r) {
        if (batch.paired_mask[r]) {
            keep.push_back(r);
        }
    }
    MultimodalBatch out;
    for (const auto& m : batch.modalities) {
        out.modalities.push_back(row_gather(m, keep));
    }
    if (!batch.labels.empty()) {
        out.labels.reserve(keep.size());
        for (std::size_t r : keep) {
            out.labels.push_back(batch.labels[r]);
        }
    }
    out.paired_mask.assign(keep.size(), true);
    return out;
}

namespace {

void save_split(const MultimodalBatch& batch, const std::string& split, const fs::path& dir,
                KvDoc& manifest) {
    for (std::size_t i = 0; i < batch.num_modalities(); ++i) {
        const std::string file = split + "_x" + std::to_string(i) + ".f64";
        const std::string bytes = f64_bytes(batch.modalities[i]);
        write_file(dir / file, bytes);
        manifest.set("checksum_" + split + "_x" + std::to_string(i), hash_hex(bytes));
    }
    const std::string label_bytes = i64_bytes(batch.labels);
    write_file(dir / (split + "_labels.i64"), label_bytes);
    manifest.set("checksum_" + split + "_labels", hash_hex(label_bytes));

    const std::string pair_bytes = mask_bytes(batch.paired_mask);
    write_file(dir / (split + "_paired.u8"), pair_bytes);
    manifest.set("checksum_" + split + "_paired", hash_hex(pair_bytes));
}

MultimodalBatch load_split(const DatasetManifest& m, const std::string& split, const fs::path& dir,
                           const KvDoc& manifest) {
    const std::size_t rows = split == "train" ? m.train_rows : m.test_rows;
    MultimodalBatch batch;
    auto check = [&](const std::string& file, const std::string& bytes) {
        const std::string key = "checksum_" + fs::path(file).stem().string();
        if (manifest.has(key) && manifest.get(key) != hash_hex(bytes)) {
            throw std::runtime_error("dataset file " + file + ": checksum mismatch");
        }
    };
    for (int i = 0; i < m.modalities; ++i) {
        const std::string file = split + "_x" + std::to_string(i) + ".f64";
        const std::string bytes = read_file(dir / file);
        check(file, bytes);
        batch.modalities.push_back(f64_from_bytes(bytes, rows, m.modality_dims[i], file));
    }
    {
        const std::string file = split + "_labels.i64";
        const std::string bytes = read_file(dir / file);
        check(file, bytes);
        batch.labels = i64_from_bytes(bytes, rows, file);
    }
    {
        const std::string file = split + "_paired.u8";
        const std::string bytes = read_file(dir / file);
        check(file, bytes);
        batch.paired_mask = mask_from_bytes(bytes, rows, file);
    }
    batch.validate();
    return batch;
}

} // namespace

void save_dataset(const Dataset& dataset, const std::string& dir) {
    const fs::path root(dir);
    fs::create_directories(root);

    KvDoc doc;
    const DatasetManifest& m = dataset.manifest;
    doc.set("format", "mmali-dataset-v1");
    doc.set("name", m.name);
    doc.set("generator", m.generator);
    doc.set("modalities", std::to_string(m.modalities));
    doc.set("modality_dims", format_csv_sizes(m.modality_dims));
    doc.set("components", std::to_string(m.components));
    doc.set("cluster_sigma", format_double(m.cluster_sigma));
    doc.set("noise_sigma", format_double(m.noise_sigma));
    doc.set("seed", std::to_string(m.seed));
    doc.set("train_rows", std::to_string(m.train_rows));
    doc.set("test_rows", std::to_string(m.test_rows));
    doc.set("instance_redraw", m.instance_redraw ? "1" : "0");
    for (std::size_t i = 0; i < m.transforms.size(); ++i) {
        const auto& t = m.transforms[i];
        doc.set("transform" + std::to_string(i),
                format_csv({t.linear[0], t.linear[1], t.linear[2], t.linear[3]}));
        doc.set("offset" + std::to_string(i), format_csv({t.offset[0], t.offset[1]}));
    }

    save_split(dataset.train, "train", root, doc);
    save_split(dataset.test, "test", root, doc);
    doc.save((root / "manifest.txt").string());
}

Dataset load_dataset(const std::string& dir) {
    const fs::path root(dir);
    const KvDoc doc = KvDoc::load((root / "manifest.txt").string());
    if (doc.get_or("format", "") != "mmali-dataset-v1") {
        throw std::runtime_error("dataset manifest: unsupported format \"" +
                                 doc.get_or("format", "?") + "\"");
    }

    DatasetManifest m;
    m.name = doc.get("name");
    m.generator = doc.get("generator");
    m.modalities = static_cast<int>(parse_int(doc.get("modalities"), "manifest modalities"));
    m.modality_dims = parse_csv_sizes(doc.get("modality_dims"), "manifest modality_dims");
    m.components = static_cast<int>(parse_int(doc.get("components"), "manifest components"));
    m.cluster_sigma = parse_double(doc.get("cluster_sigma"), "manifest cluster_sigma");
    m.noise_sigma = parse_double(doc.get("noise_sigma"), "manifest noise_sigma");
    m.seed = static_cast<std::uint64_t>(parse_int(doc.get("seed"), "manifest seed"));
    m.train_rows = static_cast<std::size_t>(parse_int(doc.get("train_rows"), "manifest train_rows"));
    m.test_rows = static_cast<std::size_t>(parse_int(doc.get("test_rows"), "manifest test_rows"));
    m.instance_redraw = doc.get_or("instance_redraw", "1") == "1";
    for (int i = 0; i < m.modalities; ++i) {
        const auto lin =
            parse_csv_doubles(doc.get("transform" + std::to_string(i)), "manifest transform");
        const auto off = parse_csv_doubles(doc.get("offset" + std::to_string(i)), "manifest offset");
        if (lin.size() != 4 || off.size() != 2) {
            throw std::runtime_error("dataset manifest: transform" + std::to_string(i) +
                                     " must have 4 linear and 2 offset entries");
        }
        AffineMap t;
        t.linear = {lin[0], lin[1], lin[2], lin[3]};
        t.offset = {off[0], off[1]};
        m.transforms.push_back(t);
    }

    Dataset ds;
    ds.manifest = m;
    ds.train = load_split(m, "train", root, doc);
    ds.test = load_split(m, "test", root, doc);
    return ds;
}

NearestCenterClassifier::NearestCenterClassifier(const DatasetManifest& manifest, int modality) {
    if (modality < 0 || modality >= manifest.modalities) {
        throw std::out_of_range("NearestCenterClassifier: modality out of range");
    }
    const auto centers = ring_centers(manifest.components);
    centers_.reserve(centers.size());
    for (const auto& c : centers) {
        centers_.push_back(manifest.transforms[modality].apply(c[0], c[1]));
    }
}

int NearestCenterClassifier::classify(const double* x, std::size_t dim) const {
    if (dim != 2) {
        throw std::invalid_argument("NearestCenterClassifier: expects 2-d points");
    }
    int best = 0;
    double best_d = std::numeric_limits<double>::infinity();
    for (std::size_t k = 0; k < centers_.size(); ++k) {
        const double dx = x[0] - centers_[k][0];
        const double dy = x[1] - centers_[k][1];
        const double d = dx * dx + dy * dy;
        if (d < best_d) {
            best_d = d;
            best = static_cast<int>(k);
        }
    }
    return best;
}

int NearestCenterClassifier::classify_row(const Tensor& batch, std::size_t row) const {
    return classify(batch.data().data() + row * batch.cols(), batch.cols());
}

std::vector<NearestCenterClassifier> analytic_classifiers(const DatasetManifest& manifest) {
    std::vector<NearestCenterClassifier> out;
    out.reserve(manifest.modalities);
    for (int i = 0; i < manifest.modalities; ++i) {
        out.emplace_back(manifest, i);
    }
    return out;
}

} // namespace mmali
