#include "fedstgd/tensor.hpp"

#include "fedstgd/errors.hpp"

#include <Eigen/Core>

#include <algorithm>
#include <cmath>
#include <cstring>
#include <limits>
#include <numeric>
#include <sstream>

namespace fedstgd {

namespace {

using RowMatrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using ConstMap = Eigen::Map<const RowMatrix>;
using MutMap = Eigen::Map<RowMatrix>;

ConstMap as_matrix(const Tensor& t)
{
    return ConstMap(t.data(), static_cast<Eigen::Index>(t.rows()), static_cast<Eigen::Index>(t.cols()));
}

MutMap as_matrix(Tensor& t)
{
    return MutMap(t.data(), static_cast<Eigen::Index>(t.rows()), static_cast<Eigen::Index>(t.cols()));
}

void require_same_dims(const Tensor& a, const Tensor& b, const char* op)
{
    if (a.dims() != b.dims()) {
        throw ShapeError(std::string(op) + ": " + a.shape_string() + " vs " + b.shape_string());
    }
}

template <typename F>
Tensor map_values(const Tensor& a, F&& f)
{
    Tensor out(a.dims());
    const double* src = a.data();
    double* dst = out.data();
    for (std::size_t i = 0; i < a.size(); ++i) {
        dst[i] = f(src[i]);
    }
    return out;
}

template <typename F>
Tensor zip_values(const Tensor& a, const Tensor& b, const char* op, F&& f)
{
    require_same_dims(a, b, op);
    Tensor out(a.dims());
    const double* x = a.data();
    const double* y = b.data();
    double* dst = out.data();
    for (std::size_t i = 0; i < a.size(); ++i) {
        dst[i] = f(x[i], y[i]);
    }
    return out;
}

} // namespace

std::size_t element_count(const Dims& dims)
{
    if (dims.empty()) {
        return 0;
    }
    return std::accumulate(dims.begin(), dims.end(), std::size_t{1}, std::multiplies<>());
}

Tensor::Tensor(Dims dims)
    : dims_(std::move(dims))
{
    if (dims_.empty() || dims_.size() > 3) {
        throw ShapeError("tensor rank must be 1..3");
    }
    data_.assign(element_count(dims_), 0.0);
}

Tensor::Tensor(Dims dims, std::vector<double> values)
    : dims_(std::move(dims))
    , data_(std::move(values))
{
    if (dims_.empty() || dims_.size() > 3) {
        throw ShapeError("tensor rank must be 1..3");
    }
    if (element_count(dims_) != data_.size()) {
        throw ShapeError("tensor " + shape_string() + " given " + std::to_string(data_.size()) + " values");
    }
}

Tensor Tensor::zeros(std::size_t rows, std::size_t cols) { return Tensor({rows, cols}); }

Tensor Tensor::ones(std::size_t rows, std::size_t cols) { return filled({rows, cols}, 1.0); }

Tensor Tensor::filled(Dims dims, double value)
{
    Tensor t(std::move(dims));
    std::fill(t.data_.begin(), t.data_.end(), value);
    return t;
}

Tensor Tensor::scalar(double value) { return Tensor({1, 1}, {value}); }

Tensor Tensor::matrix(std::initializer_list<std::initializer_list<double>> rows)
{
    const std::size_t r = rows.size();
    const std::size_t c = r == 0 ? 0 : rows.begin()->size();
    std::vector<double> values;
    values.reserve(r * c);
    for (const auto& row : rows) {
        if (row.size() != c) {
            throw ShapeError("ragged matrix literal");
        }
        values.insert(values.end(), row.begin(), row.end());
    }
    return Tensor({r, c}, std::move(values));
}

Tensor Tensor::row(std::initializer_list<double> values)
{
    return Tensor({1, values.size()}, std::vector<double>(values));
}

Tensor Tensor::identity(std::size_t n)
{
    Tensor t({n, n});
    for (std::size_t i = 0; i < n; ++i) {
        t.at(i, i) = 1.0;
    }
    return t;
}

std::size_t Tensor::rows() const
{
    return dims_.size() == 1 ? 1 : dims_[0];
}

std::size_t Tensor::cols() const
{
    switch (dims_.size()) {
    case 1: return dims_[0];
    case 2: return dims_[1];
    case 3: return dims_[1] * dims_[2];
    default: return 0;
    }
}

Tensor Tensor::reshaped(Dims dims) const
{
    if (element_count(dims) != data_.size()) {
        throw ShapeError("cannot reshape " + shape_string());
    }
    return Tensor(std::move(dims), data_);
}

bool Tensor::all_finite() const
{
    return std::all_of(data_.begin(), data_.end(), [](double v) { return std::isfinite(v); });
}

const Tensor& Tensor::require_finite(std::string_view what) const
{
    if (!all_finite()) {
        throw NumericError("non-finite value in " + std::string(what));
    }
    return *this;
}

bool Tensor::identical(const Tensor& other) const
{
    return dims_ == other.dims_
        && (data_.empty() || std::memcmp(data_.data(), other.data_.data(), data_.size() * sizeof(double)) == 0);
}

std::string Tensor::shape_string() const
{
    std::ostringstream os;
    os << '[';
    for (std::size_t i = 0; i < dims_.size(); ++i) {
        os << (i ? "x" : "") << dims_[i];
    }
    os << ']';
    return os.str();
}

Tensor matmul(const Tensor& a, const Tensor& b)
{
    if (a.cols() != b.rows()) {
        throw ShapeError("matmul: " + a.shape_string() + " * " + b.shape_string());
    }
    Tensor out = Tensor::zeros(a.rows(), b.cols());
    as_matrix(out).noalias() = as_matrix(a) * as_matrix(b);
    return out;
}

Tensor matmul_tn(const Tensor& a, const Tensor& b)
{
    if (a.rows() != b.rows()) {
        throw ShapeError("matmul_tn: " + a.shape_string() + "^T * " + b.shape_string());
    }
    Tensor out = Tensor::zeros(a.cols(), b.cols());
    as_matrix(out).noalias() = as_matrix(a).transpose() * as_matrix(b);
    return out;
}

Tensor matmul_nt(const Tensor& a, const Tensor& b)
{
    if (a.cols() != b.cols()) {
        throw ShapeError("matmul_nt: " + a.shape_string() + " * " + b.shape_string() + "^T");
    }
    Tensor out = Tensor::zeros(a.rows(), b.rows());
    as_matrix(out).noalias() = as_matrix(a) * as_matrix(b).transpose();
    return out;
}

Tensor transpose(const Tensor& a)
{
    Tensor out = Tensor::zeros(a.cols(), a.rows());
    as_matrix(out) = as_matrix(a).transpose();
    return out;
}

Tensor add(const Tensor& a, const Tensor& b)
{
    return zip_values(a, b, "add", [](double x, double y) { return x + y; });
}

Tensor sub(const Tensor& a, const Tensor& b)
{
    return zip_values(a, b, "sub", [](double x, double y) { return x - y; });
}

Tensor hadamard(const Tensor& a, const Tensor& b)
{
    return zip_values(a, b, "hadamard", [](double x, double y) { return x * y; });
}

Tensor scale(const Tensor& a, double factor)
{
    return map_values(a, [factor](double x) { return x * factor; });
}

Tensor add_scalar(const Tensor& a, double value)
{
    return map_values(a, [value](double x) { return x + value; });
}

Tensor add_row(const Tensor& a, const Tensor& bias)
{
    if (bias.size() != a.cols()) {
        throw ShapeError("add_row: " + a.shape_string() + " + " + bias.shape_string());
    }
    Tensor out = a;
    const std::size_t c = a.cols();
    for (std::size_t r = 0; r < a.rows(); ++r) {
        for (std::size_t j = 0; j < c; ++j) {
            out[r * c + j] += bias[j];
        }
    }
    return out;
}

Tensor concat_cols(const Tensor& a, const Tensor& b)
{
    if (a.rows() != b.rows()) {
        throw ShapeError("concat_cols: " + a.shape_string() + " | " + b.shape_string());
    }
    const std::size_t ca = a.cols();
    const std::size_t cb = b.cols();
    Tensor out = Tensor::zeros(a.rows(), ca + cb);
    for (std::size_t r = 0; r < a.rows(); ++r) {
        std::copy_n(a.data() + r * ca, ca, out.data() + r * (ca + cb));
        std::copy_n(b.data() + r * cb, cb, out.data() + r * (ca + cb) + ca);
    }
    return out;
}

Tensor concat_rows(std::span<const Tensor> parts)
{
    if (parts.empty()) {
        throw ShapeError("concat_rows: no parts");
    }
    const std::size_t c = parts.front().cols();
    std::size_t total = 0;
    for (const auto& p : parts) {
        if (p.cols() != c) {
            throw ShapeError("concat_rows: column mismatch");
        }
        total += p.rows();
    }
    Tensor out = Tensor::zeros(total, c);
    double* dst = out.data();
    for (const auto& p : parts) {
        dst = std::copy_n(p.data(), p.size(), dst);
    }
    return out;
}

Tensor slice_cols(const Tensor& a, std::size_t begin, std::size_t end)
{
    if (begin > end || end > a.cols()) {
        throw ShapeError("slice_cols out of range");
    }
    const std::size_t w = end - begin;
    Tensor out = Tensor::zeros(a.rows(), w);
    for (std::size_t r = 0; r < a.rows(); ++r) {
        std::copy_n(a.data() + r * a.cols() + begin, w, out.data() + r * w);
    }
    return out;
}

Tensor slice_rows(const Tensor& a, std::size_t begin, std::size_t end)
{
    if (begin > end || end > a.rows()) {
        throw ShapeError("slice_rows out of range");
    }
    const std::size_t c = a.cols();
    Tensor out = Tensor::zeros(end - begin, c);
    std::copy_n(a.data() + begin * c, (end - begin) * c, out.data());
    return out;
}

Tensor gather_rows(const Tensor& a, std::span<const std::size_t> rows)
{
    const std::size_t c = a.cols();
    Tensor out = Tensor::zeros(rows.size(), c);
    for (std::size_t i = 0; i < rows.size(); ++i) {
        if (rows[i] >= a.rows()) {
            throw ShapeError("gather_rows index out of range");
        }
        std::copy_n(a.data() + rows[i] * c, c, out.data() + i * c);
    }
    return out;
}

Tensor gamma_map(const Tensor& w, const Tensor& v)
{
    if (w.rows() != v.rows()) {
        throw ShapeError("gamma_map: row mismatch " + w.shape_string() + " vs " + v.shape_string());
    }
    const std::size_t n = w.rows();
    const std::size_t dw = w.cols();
    const std::size_t dv = v.cols();
    Tensor out = Tensor::zeros(n, dw * dv);
    for (std::size_t r = 0; r < n; ++r) {
        const double* wr = w.data() + r * dw;
        const double* vr = v.data() + r * dv;
        double* o = out.data() + r * dw * dv;
        for (std::size_t k = 0; k < dw; ++k) {
            for (std::size_t l = 0; l < dv; ++l) {
                o[k * dv + l] = wr[k] * vr[l];
            }
        }
    }
    return out;
}

Tensor softmax_rows(const Tensor& m)
{
    if (m.empty() || m.cols() == 0) {
        throw ShapeError("softmax_rows: empty tensor");
    }
    Tensor out(m.dims());
    const std::size_t c = m.cols();
    for (std::size_t r = 0; r < m.rows(); ++r) {
        const double* src = m.data() + r * c;
        double* dst = out.data() + r * c;
        const double top = *std::max_element(src, src + c);
        double total = 0.0;
        for (std::size_t j = 0; j < c; ++j) {
            dst[j] = std::exp(src[j] - top);
            total += dst[j];
        }
        for (std::size_t j = 0; j < c; ++j) {
            dst[j] /= total;
        }
    }
    return out;
}

bool is_known_activation(std::string_view name)
{
    return name == "sigmoid" || name == "tanh" || name == "relu" || name == "leaky_relu";
}

Tensor activation(std::string_view name, const Tensor& x)
{
    if (name == "sigmoid") {
        return map_values(x, [](double v) { return 1.0 / (1.0 + std::exp(-v)); });
    }
    if (name == "tanh") {
        return map_values(x, [](double v) { return std::tanh(v); });
    }
    if (name == "relu") {
        return map_values(x, [](double v) { return v > 0.0 ? v : 0.0; });
    }
    if (name == "leaky_relu") {
        return map_values(x, [](double v) { return v > 0.0 ? v : 0.01 * v; });
    }
    throw ConfigError("unknown activation '" + std::string(name) + "'");
}

double sum(const Tensor& a)
{
    return std::accumulate(a.values().begin(), a.values().end(), 0.0);
}

double mean(const Tensor& a)
{
    if (a.empty()) {
        throw ShapeError("mean of empty tensor");
    }
    return sum(a) / static_cast<double>(a.size());
}

double max_abs(const Tensor& a)
{
    double m = 0.0;
    for (double v : a.values()) {
        m = std::max(m, std::abs(v));
    }
    return m;
}

double max_abs_diff(const Tensor& a, const Tensor& b)
{
    if (a.size() != b.size()) {
        throw ShapeError("max_abs_diff: " + a.shape_string() + " vs " + b.shape_string());
    }
    double m = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) {
        const double d = std::abs(a[i] - b[i]);
        if (!(d <= m)) {
            m = std::isnan(d) ? std::numeric_limits<double>::infinity() : d;
        }
    }
    return m;
}

} // namespace fedstgd
