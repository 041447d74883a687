#pragma once

#include <cstddef>
#include <initializer_list>
#include <span>
#include <string>
#include <string_view>
#include <vector>

namespace fedstgd {

using Dims = std::vector<std::size_t>;

/// Dense row-major array of doubles with rank 1 to 3.
///
/// Tensors are plain values. Copying copies the buffer; nothing is shared,
/// so a const Tensor can be read from any thread.
class Tensor {
public:
    Tensor() = default;
    explicit Tensor(Dims dims);
    Tensor(Dims dims, std::vector<double> values);

    static Tensor zeros(std::size_t rows, std::size_t cols);
    static Tensor ones(std::size_t rows, std::size_t cols);
    static Tensor filled(Dims dims, double value);
    static Tensor scalar(double value);
    static Tensor matrix(std::initializer_list<std::initializer_list<double>> rows);
    static Tensor row(std::initializer_list<double> values);
    static Tensor identity(std::size_t n);

    std::size_t rank() const { return dims_.size(); }
    const Dims& dims() const { return dims_; }
    std::size_t dim(std::size_t axis) const { return dims_.at(axis); }
    std::size_t size() const { return data_.size(); }
    bool empty() const { return data_.empty(); }

    /// Matrix view: rank-1 tensors are one row; rank-3 tensors fold the
    /// trailing two axes into the column count.
    std::size_t rows() const;
    std::size_t cols() const;

    std::span<double> values() { return data_; }
    std::span<const double> values() const { return data_; }
    double* data() { return data_.data(); }
    const double* data() const { return data_.data(); }

    double& operator[](std::size_t i) { return data_[i]; }
    double operator[](std::size_t i) const { return data_[i]; }
    double& at(std::size_t r, std::size_t c) { return data_[r * cols() + c]; }
    double at(std::size_t r, std::size_t c) const { return data_[r * cols() + c]; }
    double& at(std::size_t i, std::size_t j, std::size_t k)
    {
        return data_[(i * dims_[1] + j) * dims_[2] + k];
    }
    double at(std::size_t i, std::size_t j, std::size_t k) const
    {
        return data_[(i * dims_[1] + j) * dims_[2] + k];
    }

    /// Same buffer, new extents. Element count must match.
    Tensor reshaped(Dims dims) const;

    /// Throws NumericError naming `what` if any value is NaN or infinite.
    const Tensor& require_finite(std::string_view what) const;
    bool all_finite() const;

    /// Bitwise equality of extents and values.
    bool identical(const Tensor& other) const;

    std::string shape_string() const;

private:
    Dims dims_;
    std::vector<double> data_;
};

std::size_t element_count(const Dims& dims);

// Matrix algebra on rank-2 (or matrix-viewed) tensors.
Tensor matmul(const Tensor& a, const Tensor& b);
Tensor matmul_tn(const Tensor& a, const Tensor& b); ///< aᵀ·b
Tensor matmul_nt(const Tensor& a, const Tensor& b); ///< a·bᵀ
Tensor transpose(const Tensor& a);

Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor hadamard(const Tensor& a, const Tensor& b);
Tensor scale(const Tensor& a, double factor);
Tensor add_scalar(const Tensor& a, double value);
/// Adds the single row `bias` to every row of `a`.
Tensor add_row(const Tensor& a, const Tensor& bias);

Tensor concat_cols(const Tensor& a, const Tensor& b);
Tensor concat_rows(std::span<const Tensor> parts);
Tensor slice_cols(const Tensor& a, std::size_t begin, std::size_t end);
Tensor slice_rows(const Tensor& a, std::size_t begin, std::size_t end);
Tensor gather_rows(const Tensor& a, std::span<const std::size_t> rows);

/// Row-wise Khatri-Rao expansion. Column k*V.cols() + l holds W[:,k] ⊙ V[:,l].
Tensor gamma_map(const Tensor& w, const Tensor& v);

/// Softmax along each row, shifted by the row maximum.
Tensor softmax_rows(const Tensor& m);

/// One of "sigmoid", "tanh", "relu", "leaky_relu" (slope 0.01).
Tensor activation(std::string_view name, const Tensor& x);
bool is_known_activation(std::string_view name);

double sum(const Tensor& a);
double mean(const Tensor& a);
double max_abs(const Tensor& a);
double max_abs_diff(const Tensor& a, const Tensor& b);

} // namespace fedstgd
