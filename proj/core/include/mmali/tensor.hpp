#pragma once

#include <cstddef>
#include <string>
#include <vector>

namespace mmali {

/// When enabled, tensor construction rejects NaN/Inf entries and adam_step
/// rejects non-finite gradients. Off by default; tests and the training
/// loop's abort path turn it on.
void set_checked_mode(bool enabled);
bool checked_mode();

/// Dense row-major array of 64-bit floats. All network computation moves
/// through this type; rank is arbitrary but almost everything here is
/// batch x dim matrices.
class Tensor {
public:
    Tensor() = default;

    /// Zero-filled tensor of the given shape.
    explicit Tensor(std::vector<std::size_t> shape);

    Tensor(std::vector<std::size_t> shape, std::vector<double> data);

    static Tensor zeros(std::size_t rows, std::size_t cols);
    static Tensor row(std::vector<double> values);

    const std::vector<std::size_t>& shape() const { return shape_; }
    const std::vector<double>& data() const { return data_; }
    std::vector<double>& data() { return data_; }

    std::size_t numel() const { return data_.size(); }
    std::size_t ndim() const { return shape_.size(); }

    /// Matrix accessors; valid for rank-2 tensors only.
    std::size_t rows() const;
    std::size_t cols() const;
    double& at(std::size_t r, std::size_t c);
    double at(std::size_t r, std::size_t c) const;

    double& operator[](std::size_t i) { return data_[i]; }
    double operator[](std::size_t i) const { return data_[i]; }

    void fill(double value);
    bool same_shape(const Tensor& other) const;

    std::string shape_str() const;

private:
    std::vector<std::size_t> shape_;
    std::vector<double> data_;
};

/// Column-wise concatenation of rank-2 tensors with equal row counts.
Tensor hcat(const std::vector<const Tensor*>& parts);

/// Row-wise concatenation of rank-2 tensors with equal column counts.
Tensor vcat(const std::vector<const Tensor*>& parts);

/// Copy of columns [from, to) of a rank-2 tensor.
Tensor col_slice(const Tensor& t, std::size_t from, std::size_t to);

/// Copy of the given rows of a rank-2 tensor.
Tensor row_gather(const Tensor& t, const std::vector<std::size_t>& rows);

std::string shape_to_string(const std::vector<std::size_t>& shape);

} // namespace mmali
