#include "mmali/tensor.hpp"

#include <cmath>
#include <sstream>
#include <stdexcept>

namespace mmali {

namespace {
bool g_checked = false;

std::size_t shape_product(const std::vector<std::size_t>& shape) {
    std::size_t n = 1;
    for (auto d : shape) {
        n *= d;
    }
    return n;
}
} // namespace

void set_checked_mode(bool enabled) { g_checked = enabled; }
bool checked_mode() { return g_checked; }

Tensor::Tensor(std::vector<std::size_t> shape)
    : shape_(std::move(shape)), data_(shape_product(shape_), 0.0) {}

Tensor::Tensor(std::vector<std::size_t> shape, std::vector<double> data)
    : shape_(std::move(shape)), data_(std::move(data)) {
    if (shape_product(shape_) != data_.size()) {
        throw std::invalid_argument("Tensor: shape " + shape_to_string(shape_) +
                                    " does not match data length " + std::to_string(data_.size()));
    }
    if (g_checked) {
        for (double v : data_) {
            if (!std::isfinite(v)) {
                throw std::invalid_argument("Tensor: non-finite entry rejected in checked mode");
            }
        }
    }
}

Tensor Tensor::zeros(std::size_t rows, std::size_t cols) {
    return Tensor({rows, cols});
}

Tensor Tensor::row(std::vector<double> values) {
    const std::size_t n = values.size();
    return Tensor({1, n}, std::move(values));
}

std::size_t Tensor::rows() const {
    if (shape_.size() != 2) {
        throw std::logic_error("Tensor::rows: tensor of shape " + shape_str() + " is not a matrix");
    }
    return shape_[0];
}

std::size_t Tensor::cols() const {
    if (shape_.size() != 2) {
        throw std::logic_error("Tensor::cols: tensor of shape " + shape_str() + " is not a matrix");
    }
    return shape_[1];
}

double& Tensor::at(std::size_t r, std::size_t c) {
    return data_[r * cols() + c];
}

double Tensor::at(std::size_t r, std::size_t c) const {
    return data_[r * shape_[1] + c];
}

void Tensor::fill(double value) {
    for (auto& v : data_) {
        v = value;
    }
}

bool Tensor::same_shape(const Tensor& other) const {
    return shape_ == other.shape_;
}

std::string Tensor::shape_str() const {
    return shape_to_string(shape_);
}

std::string shape_to_string(const std::vector<std::size_t>& shape) {
    std::ostringstream os;
    os << "[";
    for (std::size_t i = 0; i < shape.size(); ++i) {
        os << (i ? "x" : "") << shape[i];
    }
    os << "]";
    return os.str();
}

Tensor hcat(const std::vector<const Tensor*>& parts) {
    if (parts.empty()) {
        throw std::invalid_argument("hcat: no tensors given");
    }
    const std::size_t rows = parts[0]->rows();
    std::size_t total_cols = 0;
    for (const Tensor* p : parts) {
        if (p->rows() != rows) {
            throw std::invalid_argument("hcat: row count mismatch: " + std::to_string(p->rows()) +
                                        " vs " + std::to_string(rows));
        }
        total_cols += p->cols();
    }
    Tensor out({rows, total_cols});
    for (std::size_t r = 0; r < rows; ++r) {
        std::size_t c0 = 0;
        for (const Tensor* p : parts) {
            const std::size_t pc = p->cols();
            for (std::size_t c = 0; c < pc; ++c) {
                out.at(r, c0 + c) = p->at(r, c);
            }
            c0 += pc;
        }
    }
    return out;
}

Tensor vcat(const std::vector<const Tensor*>& parts) {
    if (parts.empty()) {
        throw std::invalid_argument("vcat: no tensors given");
    }
    const std::size_t cols = parts[0]->cols();
    std::size_t total_rows = 0;
    for (const Tensor* p : parts) {
        if (p->cols() != cols) {
            throw std::invalid_argument("vcat: column count mismatch: " + std::to_string(p->cols()) +
                                        " vs " + std::to_string(cols));
        }
        total_rows += p->rows();
    }
    Tensor out({total_rows, cols});
    std::size_t r0 = 0;
    for (const Tensor* p : parts) {
        for (std::size_t i = 0; i < p->numel(); ++i) {
            out[r0 * cols + i] = (*p)[i];
        }
        r0 += p->rows();
    }
    return out;
}

Tensor col_slice(const Tensor& t, std::size_t from, std::size_t to) {
    if (from > to || to > t.cols()) {
        throw std::invalid_argument("col_slice: range [" + std::to_string(from) + ", " +
                                    std::to_string(to) + ") out of bounds for " + t.shape_str());
    }
    Tensor out({t.rows(), to - from});
    for (std::size_t r = 0; r < t.rows(); ++r) {
        for (std::size_t c = from; c < to; ++c) {
            out.at(r, c - from) = t.at(r, c);
        }
    }
    return out;
}

Tensor row_gather(const Tensor& t, const std::vector<std::size_t>& rows) {
    Tensor out({rows.size(), t.cols()});
    for (std::size_t i = 0; i < rows.size(); ++i) {
        if (rows[i] >= t.rows()) {
            throw std::out_of_range("row_gather: row " + std::to_string(rows[i]) +
                                    " out of range for " + t.shape_str());
        }
        for (std::size_t c = 0; c < t.cols(); ++c) {
            out.at(i, c) = t.at(rows[i], c);
        }
    }
    return out;
}

} // namespace mmali
