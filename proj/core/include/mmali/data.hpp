#pragma once

#include <array>
#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "mmali/rng.hpp"
#include "mmali/tensor.hpp"

namespace mmali {

/// Aligned tuples (x_1..x_M) with optional component labels and a pairing
/// mask. A row with paired_mask false still holds valid per-modality
/// samples, but its cross-modal alignment has been destroyed; its label
/// describes modality 0 only.
struct MultimodalBatch {
    std::vector<Tensor> modalities; // each rows x n_i
    std::vector<int> labels;        // empty or rows entries in [0, K)
    std::vector<bool> paired_mask;  // rows entries

    std::size_t rows() const { return modalities.empty() ? 0 : modalities[0].rows(); }
    std::size_t num_modalities() const { return modalities.size(); }
    void validate() const;
};

/// 2-d affine observation map x -> A x + b.
struct AffineMap {
    std::array<double, 4> linear{1.0, 0.0, 0.0, 1.0}; // row-major 2x2
    std::array<double, 2> offset{0.0, 0.0};

    static AffineMap identity();
    static AffineMap rotation(double degrees);

    std::array<double, 2> apply(double x, double y) const;
    double determinant() const;
};

struct GaussianRingParams {
    int components = 8;              // K ring clusters
    int modalities = 2;              // M
    std::size_t train_rows = 10000;
    std::size_t test_rows = 2000;
    double cluster_sigma = 0.1;
    double noise_sigma = 0.03;
    std::uint64_t seed = 0;
    std::vector<AffineMap> transforms; // defaults to rotation(90 * i)
    /// Paired rows share the class but each modality redraws its own
    /// instance from that class; turning this off copies one base point
    /// into every modality instead.
    bool instance_redraw = true;
};

struct DatasetManifest {
    std::string name = "gaussian-ring";
    int modalities = 0;
    std::vector<std::size_t> modality_dims;
    int components = 0;
    std::string generator = "gaussian-ring";
    double cluster_sigma = 0.0;
    double noise_sigma = 0.0;
    std::uint64_t seed = 0;
    std::size_t train_rows = 0;
    std::size_t test_rows = 0;
    std::vector<AffineMap> transforms;
    bool instance_redraw = true;
};

struct Dataset {
    DatasetManifest manifest;
    MultimodalBatch train;
    MultimodalBatch test;
};

/// K equally weighted Gaussian clusters centered on the unit ring (angle
/// 2*pi*k/K); modality i observes its affine transform of a same-class
/// instance plus isotropic noise. Labels are the component index.
Dataset generate_gaussian_ring(const GaussianRingParams& params);

/// Clears paired_mask on exactly floor(fraction * rows) rows and destroys
/// their cross-modal alignment by shuffling each modality independently
/// within the unpaired subset.
void unpair(MultimodalBatch& batch, double fraction, Rng& rng);

/// Drops rows whose paired_mask is false.
MultimodalBatch drop_unpaired(const MultimodalBatch& batch);

/// Manifest + one flat little-endian f64 matrix file per modality per
/// split, plus label and pairing files. Bytewise round trip.
void save_dataset(const Dataset& dataset, const std::string& dir);
Dataset load_dataset(const std::string& dir);

/// Labels x_i by the nearest transformed cluster center of its modality.
class NearestCenterClassifier {
public:
    NearestCenterClassifier(const DatasetManifest& manifest, int modality);

    int classify(const double* x, std::size_t dim) const;
    int classify_row(const Tensor& batch, std::size_t row) const;

private:
    std::vector<std::array<double, 2>> centers_;
};

std::vector<NearestCenterClassifier> analytic_classifiers(const DatasetManifest& manifest);

} // namespace mmali
