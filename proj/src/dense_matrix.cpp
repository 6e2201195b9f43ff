#include "vmp/dense_matrix.hpp"

#include <cmath>
#include <cstdlib>
#include <limits>

#include "vmp/errors.hpp"

namespace vmp {

DenseMatrix::DenseMatrix(int rows, int cols)
    : rows_(rows), cols_(cols), data_(static_cast<std::size_t>(rows) * cols, 0.0) {
    if (rows < 0 || cols < 0) {
        throw ArgumentError("DenseMatrix: negative dimension " + shape_str());
    }
}

DenseMatrix::DenseMatrix(int rows, int cols, std::vector<double> data)
    : rows_(rows), cols_(cols), data_(std::move(data)) {
    if (data_.size() != static_cast<std::size_t>(rows) * cols) {
        throw ShapeError("DenseMatrix: data length " + std::to_string(data_.size()) +
                         " does not match shape " + shape_str());
    }
}

DenseMatrix DenseMatrix::identity(int n) {
    DenseMatrix m(n, n);
    for (int i = 0; i < n; ++i) m(i, i) = 1.0;
    return m;
}

DenseMatrix DenseMatrix::from_rows(std::initializer_list<std::initializer_list<double>> rows) {
    const int r = static_cast<int>(rows.size());
    const int c = r > 0 ? static_cast<int>(rows.begin()->size()) : 0;
    DenseMatrix m(r, c);
    int i = 0;
    for (const auto& row : rows) {
        if (static_cast<int>(row.size()) != c) {
            throw ShapeError("DenseMatrix::from_rows: ragged row " + std::to_string(i));
        }
        int j = 0;
        for (double v : row) m(i, j++) = v;
        ++i;
    }
    return m;
}

bool DenseMatrix::all_finite() const {
    for (double v : data_) {
        if (!std::isfinite(v)) return false;
    }
    return true;
}

std::string DenseMatrix::shape_str() const {
    return std::to_string(rows_) + "x" + std::to_string(cols_);
}

DenseMatrix DenseMatrix::row(int r) const {
    DenseMatrix out(1, cols_);
    for (int j = 0; j < cols_; ++j) out(0, j) = (*this)(r, j);
    return out;
}

void DenseMatrix::set_row(int r, const DenseMatrix& v) {
    if (v.rows() != 1 || v.cols() != cols_) {
        throw ShapeError("set_row: expected 1x" + std::to_string(cols_) + ", got " + v.shape_str());
    }
    for (int j = 0; j < cols_; ++j) (*this)(r, j) = v(0, j);
}

void DenseMatrix::fill(double value) {
    for (double& v : data_) v = value;
}

bool operator==(const DenseMatrix& a, const DenseMatrix& b) {
    return a.rows() == b.rows() && a.cols() == b.cols() && a.values() == b.values();
}

DenseMatrix matmul(const DenseMatrix& a, const DenseMatrix& b) {
    if (a.cols() != b.rows()) {
        throw ShapeError("matmul: shape mismatch " + a.shape_str() + " * " + b.shape_str());
    }
    DenseMatrix out(a.rows(), b.cols());
    for (int i = 0; i < a.rows(); ++i) {
        for (int k = 0; k < a.cols(); ++k) {
            const double aik = a(i, k);
            if (aik == 0.0) continue;
            for (int j = 0; j < b.cols(); ++j) {
                out(i, j) += aik * b(k, j);
            }
        }
    }
    return out;
}

DenseMatrix softmax_rows(const DenseMatrix& m) {
    if (!m.all_finite()) {
        throw DomainError("softmax_rows: non-finite input");
    }
    DenseMatrix out(m.rows(), m.cols());
    for (int i = 0; i < m.rows(); ++i) {
        double row_max = -std::numeric_limits<double>::infinity();
        for (int j = 0; j < m.cols(); ++j) row_max = std::max(row_max, m(i, j));
        double denom = 0.0;
        for (int j = 0; j < m.cols(); ++j) {
            const double e = std::exp(m(i, j) - row_max);
            out(i, j) = e;
            denom += e;
        }
        for (int j = 0; j < m.cols(); ++j) out(i, j) /= denom;
    }
    return out;
}

DenseMatrix transpose(const DenseMatrix& m) {
    DenseMatrix out(m.cols(), m.rows());
    for (int i = 0; i < m.rows(); ++i) {
        for (int j = 0; j < m.cols(); ++j) out(j, i) = m(i, j);
    }
    return out;
}

DenseMatrix exp_elementwise(const DenseMatrix& m) {
    DenseMatrix out(m.rows(), m.cols());
    for (std::size_t k = 0; k < m.size(); ++k) out.data()[k] = std::exp(m.data()[k]);
    return out;
}

DenseMatrix hadamard(const DenseMatrix& a, const DenseMatrix& b) {
    if (!a.same_shape(b)) {
        throw ShapeError("hadamard: shape mismatch " + a.shape_str() + " vs " + b.shape_str());
    }
    DenseMatrix out(a.rows(), a.cols());
    for (std::size_t k = 0; k < a.size(); ++k) out.data()[k] = a.data()[k] * b.data()[k];
    return out;
}

DenseMatrix scale(const DenseMatrix& m, double factor) {
    DenseMatrix out(m.rows(), m.cols());
    for (std::size_t k = 0; k < m.size(); ++k) out.data()[k] = m.data()[k] * factor;
    return out;
}

DenseMatrix operator+(const DenseMatrix& a, const DenseMatrix& b) {
    if (!a.same_shape(b)) {
        throw ShapeError("operator+: shape mismatch " + a.shape_str() + " vs " + b.shape_str());
    }
    DenseMatrix out(a.rows(), a.cols());
    for (std::size_t k = 0; k < a.size(); ++k) out.data()[k] = a.data()[k] + b.data()[k];
    return out;
}

DenseMatrix operator-(const DenseMatrix& a, const DenseMatrix& b) {
    if (!a.same_shape(b)) {
        throw ShapeError("operator-: shape mismatch " + a.shape_str() + " vs " + b.shape_str());
    }
    DenseMatrix out(a.rows(), a.cols());
    for (std::size_t k = 0; k < a.size(); ++k) out.data()[k] = a.data()[k] - b.data()[k];
    return out;
}

double sum(const DenseMatrix& m) {
    double s = 0.0;
    for (std::size_t k = 0; k < m.size(); ++k) s += m.data()[k];
    return s;
}

double max_abs(const DenseMatrix& m) {
    double s = 0.0;
    for (std::size_t k = 0; k < m.size(); ++k) s = std::max(s, std::abs(m.data()[k]));
    return s;
}

double max_abs_diff(const DenseMatrix& a, const DenseMatrix& b) {
    if (!a.same_shape(b)) {
        throw ShapeError("max_abs_diff: shape mismatch " + a.shape_str() + " vs " + b.shape_str());
    }
    double s = 0.0;
    for (std::size_t k = 0; k < a.size(); ++k) s = std::max(s, std::abs(a.data()[k] - b.data()[k]));
    return s;
}

double softplus(double x) {
    // log(1 + e^x) without overflow on either tail
    if (x > 0.0) return x + std::log1p(std::exp(-x));
    return std::log1p(std::exp(x));
}

double sigmoid(double x) {
    if (x >= 0.0) return 1.0 / (1.0 + std::exp(-x));
    const double e = std::exp(x);
    return e / (1.0 + e);
}

double silu(double x) { return x * sigmoid(x); }

DenseMatrix silu(const DenseMatrix& m) {
    DenseMatrix out = m;
    for (int r = 0; r < out.rows(); ++r)
        for (int c = 0; c < out.cols(); ++c) out(r, c) = silu(out(r, c));
    return out;
}

DenseMatrix softplus(const DenseMatrix& m) {
    DenseMatrix out = m;
    for (int r = 0; r < out.rows(); ++r)
        for (int c = 0; c < out.cols(); ++c) out(r, c) = softplus(out(r, c));
    return out;
}

}  // namespace vmp
