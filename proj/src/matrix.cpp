#include "aff/matrix.hpp"

#include <cmath>
#include <numeric>

namespace aff {

Matrix::Matrix(std::size_t rows, std::size_t cols, std::vector<double> data)
    : rows_(rows), cols_(cols), data_(std::move(data)) {
    if (data_.size() != rows_ * cols_) {
        throw DimensionError("matrix data length " + std::to_string(data_.size()) +
                             " does not match " + std::to_string(rows_) + "x" +
                             std::to_string(cols_));
    }
}

Matrix::Matrix(std::initializer_list<std::initializer_list<double>> rows) {
    rows_ = rows.size();
    cols_ = rows_ == 0 ? 0 : rows.begin()->size();
    data_.reserve(rows_ * cols_);
    for (const auto& r : rows) {
        if (r.size() != cols_) {
            throw DimensionError("ragged initializer list");
        }
        data_.insert(data_.end(), r.begin(), r.end());
    }
}

Matrix Matrix::identity(std::size_t n) {
    Matrix m(n, n);
    for (std::size_t i = 0; i < n; ++i) m(i, i) = 1.0;
    return m;
}

Matrix Matrix::row_vector(std::vector<double> values) {
    const std::size_t n = values.size();
    return Matrix(1, n, std::move(values));
}

Matrix Matrix::row(std::size_t r) const {
    Matrix out(1, cols_);
    for (std::size_t c = 0; c < cols_; ++c) out(0, c) = (*this)(r, c);
    return out;
}

void Matrix::set_row(std::size_t r, const Matrix& v) {
    if (v.rows() != 1 || v.cols() != cols_) {
        throw DimensionError("set_row: expected 1x" + std::to_string(cols_) +
                             ", got " + shape_string(v));
    }
    for (std::size_t c = 0; c < cols_; ++c) (*this)(r, c) = v(0, c);
}

bool Matrix::all_finite() const {
    for (double v : data_) {
        if (!std::isfinite(v)) return false;
    }
    return true;
}

Matrix& Matrix::operator+=(const Matrix& o) {
    if (!same_shape(o)) throw DimensionError("+=: shape mismatch " + shape_string(*this) + " vs " + shape_string(o));
    for (std::size_t i = 0; i < data_.size(); ++i) data_[i] += o.data_[i];
    return *this;
}

Matrix& Matrix::operator-=(const Matrix& o) {
    if (!same_shape(o)) throw DimensionError("-=: shape mismatch " + shape_string(*this) + " vs " + shape_string(o));
    for (std::size_t i = 0; i < data_.size(); ++i) data_[i] -= o.data_[i];
    return *this;
}

Matrix& Matrix::operator*=(double s) {
    for (double& v : data_) v *= s;
    return *this;
}

Matrix operator+(Matrix a, const Matrix& b) { a += b; return a; }
Matrix operator-(Matrix a, const Matrix& b) { a -= b; return a; }
Matrix operator*(Matrix a, double s) { a *= s; return a; }
Matrix operator*(double s, Matrix a) { a *= s; return a; }

bool operator==(const Matrix& a, const Matrix& b) {
    return a.rows() == b.rows() && a.cols() == b.cols() && a.values() == b.values();
}

Matrix matmul(const Matrix& a, const Matrix& b) {
    if (a.cols() != b.rows()) {
        throw DimensionError("matmul: " + shape_string(a) + " x " + shape_string(b));
    }
    Matrix out(a.rows(), b.cols());
    const std::size_t inner = a.cols();
    for (std::size_t i = 0; i < a.rows(); ++i) {
        for (std::size_t k = 0; k < inner; ++k) {
            const double aik = a(i, k);
            if (aik == 0.0) continue;
            for (std::size_t j = 0; j < b.cols(); ++j) {
                out(i, j) += aik * b(k, j);
            }
        }
    }
    return out;
}

Matrix transpose(const Matrix& m) {
    Matrix out(m.cols(), m.rows());
    for (std::size_t i = 0; i < m.rows(); ++i)
        for (std::size_t j = 0; j < m.cols(); ++j) out(j, i) = m(i, j);
    return out;
}

Matrix hadamard(const Matrix& a, const Matrix& b) {
    if (!a.same_shape(b)) throw DimensionError("hadamard: shape mismatch");
    Matrix out(a.rows(), a.cols());
    for (std::size_t i = 0; i < a.size(); ++i) out.at(i) = a.at(i) * b.at(i);
    return out;
}

double sum(const Matrix& m) {
    return std::accumulate(m.values().begin(), m.values().end(), 0.0);
}

double dot(const Matrix& a, const Matrix& b) {
    if (!a.same_shape(b)) throw DimensionError("dot: shape mismatch");
    double acc = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) acc += a.at(i) * b.at(i);
    return acc;
}

double norm(const Matrix& m) { return std::sqrt(dot(m, m)); }

Matrix l2_normalize(const Matrix& v, double eps) {
    const double n = norm(v);
    if (!(n > eps)) {
        throw DegenerateInputError("l2_normalize: norm " + std::to_string(n) +
                                   " below " + std::to_string(eps));
    }
    return v * (1.0 / n);
}

Matrix layer_norm(const Matrix& x, const Matrix& gain, const Matrix& bias, double eps) {
    if (gain.rows() != 1 || gain.cols() != x.cols() || bias.rows() != 1 ||
        bias.cols() != x.cols()) {
        throw DimensionError("layer_norm: gain/bias must be 1x" + std::to_string(x.cols()));
    }
    Matrix out(x.rows(), x.cols());
    const double d = static_cast<double>(x.cols());
    for (std::size_t i = 0; i < x.rows(); ++i) {
        double mean = 0.0;
        for (std::size_t j = 0; j < x.cols(); ++j) mean += x(i, j);
        mean /= d;
        double var = 0.0;
        for (std::size_t j = 0; j < x.cols(); ++j) {
            const double c = x(i, j) - mean;
            var += c * c;
        }
        var /= d;
        const double inv = 1.0 / std::sqrt(var + eps);
        for (std::size_t j = 0; j < x.cols(); ++j) {
            out(i, j) = gain(0, j) * ((x(i, j) - mean) * inv) + bias(0, j);
        }
    }
    return out;
}

double gelu_scalar(double x) {
    return 0.5 * x * (1.0 + std::erf(x / std::sqrt(2.0)));
}

double gelu_grad_scalar(double x) {
    static const double inv_sqrt_2pi = 0.3989422804014326779;
    return 0.5 * (1.0 + std::erf(x / std::sqrt(2.0))) +
           x * inv_sqrt_2pi * std::exp(-0.5 * x * x);
}

Matrix gelu(const Matrix& x) {
    Matrix out(x.rows(), x.cols());
    for (std::size_t i = 0; i < x.size(); ++i) out.at(i) = gelu_scalar(x.at(i));
    return out;
}

Matrix softmax_rows(const Matrix& x) {
    Matrix out(x.rows(), x.cols());
    for (std::size_t i = 0; i < x.rows(); ++i) {
        double mx = x(i, 0);
        for (std::size_t j = 1; j < x.cols(); ++j) mx = std::max(mx, x(i, j));
        double denom = 0.0;
        for (std::size_t j = 0; j < x.cols(); ++j) {
            const double e = std::exp(x(i, j) - mx);
            out(i, j) = e;
            denom += e;
        }
        for (std::size_t j = 0; j < x.cols(); ++j) out(i, j) /= denom;
    }
    return out;
}

Matrix permute_rows(const Matrix& m, const std::vector<std::size_t>& perm) {
    if (perm.size() != m.rows()) throw DimensionError("permute_rows: bad permutation length");
    Matrix out(m.rows(), m.cols());
    for (std::size_t i = 0; i < perm.size(); ++i) {
        for (std::size_t j = 0; j < m.cols(); ++j) out(i, j) = m(perm[i], j);
    }
    return out;
}

Matrix vstack(const Matrix& a, const Matrix& b) {
    if (a.empty()) return b;
    if (b.empty()) return a;
    if (a.cols() != b.cols()) throw DimensionError("vstack: column mismatch");
    Matrix out(a.rows() + b.rows(), a.cols());
    for (std::size_t i = 0; i < a.rows(); ++i)
        for (std::size_t j = 0; j < a.cols(); ++j) out(i, j) = a(i, j);
    for (std::size_t i = 0; i < b.rows(); ++i)
        for (std::size_t j = 0; j < b.cols(); ++j) out(a.rows() + i, j) = b(i, j);
    return out;
}

Matrix quantize_to_float(const Matrix& m) {
    Matrix out(m.rows(), m.cols());
    for (std::size_t i = 0; i < m.size(); ++i) {
        out.at(i) = static_cast<double>(static_cast<float>(m.at(i)));
    }
    return out;
}

std::string shape_string(const Matrix& m) {
    return std::to_string(m.rows()) + "x" + std::to_string(m.cols());
}

}  // namespace aff
