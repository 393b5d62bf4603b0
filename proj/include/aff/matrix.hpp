#pragma once

#include <cstddef>
#include <initializer_list>
#include <string>
#include <vector>

#include "aff/errors.hpp"

namespace aff {

// Dense row-major matrix of doubles. Vectors are 1xN matrices by convention.
// All library math runs in double; persistence narrows to float32 (see io).
class Matrix {
public:
    Matrix() = default;
    Matrix(std::size_t rows, std::size_t cols, double fill = 0.0)
        : rows_(rows), cols_(cols), data_(rows * cols, fill) {}
    Matrix(std::size_t rows, std::size_t cols, std::vector<double> data);
    Matrix(std::initializer_list<std::initializer_list<double>> rows);

    static Matrix identity(std::size_t n);
    static Matrix row_vector(std::vector<double> values);

    std::size_t rows() const { return rows_; }
    std::size_t cols() const { return cols_; }
    std::size_t size() const { return data_.size(); }
    bool empty() const { return data_.empty(); }

    double& operator()(std::size_t r, std::size_t c) { return data_[r * cols_ + c]; }
    double operator()(std::size_t r, std::size_t c) const { return data_[r * cols_ + c]; }
    double& at(std::size_t i) { return data_[i]; }
    double at(std::size_t i) const { return data_[i]; }

    double* data() { return data_.data(); }
    const double* data() const { return data_.data(); }
    const std::vector<double>& values() const { return data_; }

    Matrix row(std::size_t r) const;
    void set_row(std::size_t r, const Matrix& v);

    bool same_shape(const Matrix& o) const { return rows_ == o.rows_ && cols_ == o.cols_; }
    bool all_finite() const;

    Matrix& operator+=(const Matrix& o);
    Matrix& operator-=(const Matrix& o);
    Matrix& operator*=(double s);

private:
    std::size_t rows_ = 0;
    std::size_t cols_ = 0;
    std::vector<double> data_;
};

Matrix operator+(Matrix a, const Matrix& b);
Matrix operator-(Matrix a, const Matrix& b);
Matrix operator*(Matrix a, double s);
Matrix operator*(double s, Matrix a);
bool operator==(const Matrix& a, const Matrix& b);

// Standard matrix product; throws DimensionError on a.cols != b.rows.
Matrix matmul(const Matrix& a, const Matrix& b);

Matrix transpose(const Matrix& m);

// Elementwise product of same-shape matrices.
Matrix hadamard(const Matrix& a, const Matrix& b);

// Sum of all entries.
double sum(const Matrix& m);

// Frobenius inner product <a, b>.
double dot(const Matrix& a, const Matrix& b);

// Euclidean norm over all entries.
double norm(const Matrix& m);

// Scales v to unit norm. Throws DegenerateInputError when ||v|| <= eps.
Matrix l2_normalize(const Matrix& v, double eps = 1e-12);

// Row-wise layer normalization with 1/d variance and eps = 1e-5 inside the
// square root, followed by the gain/bias affine. gain and bias are 1 x cols.
Matrix layer_norm(const Matrix& x, const Matrix& gain, const Matrix& bias,
                  double eps = 1e-5);

// Exact-erf GeLU, elementwise: 0.5 * x * (1 + erf(x / sqrt(2))).
Matrix gelu(const Matrix& x);
double gelu_scalar(double x);
double gelu_grad_scalar(double x);

// Row-wise softmax with max-subtraction.
Matrix softmax_rows(const Matrix& x);

// Row permutation: out.row(i) = m.row(perm[i]).
Matrix permute_rows(const Matrix& m, const std::vector<std::size_t>& perm);

// Stacks rows of a on top of rows of b (column counts must match).
Matrix vstack(const Matrix& a, const Matrix& b);

// Narrows every entry to float32 and back; used when values must match the
// on-disk single-precision representation bit for bit.
Matrix quantize_to_float(const Matrix& m);

std::string shape_string(const Matrix& m);

}  // namespace aff
