#pragma once

#include <cstddef>
#include <initializer_list>
#include <string>
#include <vector>

namespace vmp {

/// Row-major dense real64 matrix.
///
/// Row-major storage is fixed project-wide so that binary dumps of the same
/// values compare bit-for-bit across platforms. All numerics in this project
/// run in double precision.
class DenseMatrix {
public:
    DenseMatrix() = default;

    // zero-filled
    DenseMatrix(int rows, int cols);

    DenseMatrix(int rows, int cols, std::vector<double> data);

    static DenseMatrix identity(int n);
    static DenseMatrix from_rows(std::initializer_list<std::initializer_list<double>> rows);

    int rows() const { return rows_; }
    int cols() const { return cols_; }
    std::size_t size() const { return data_.size(); }
    bool empty() const { return data_.empty(); }

    double& operator()(int r, int c) { return data_[static_cast<std::size_t>(r) * cols_ + c]; }
    double operator()(int r, int c) const { return data_[static_cast<std::size_t>(r) * cols_ + c]; }

    double* data() { return data_.data(); }
    const double* data() const { return data_.data(); }
    const std::vector<double>& values() const { return data_; }

    bool all_finite() const;

    // "3x4", used in error messages
    std::string shape_str() const;

    bool same_shape(const DenseMatrix& other) const {
        return rows_ == other.rows_ && cols_ == other.cols_;
    }

    DenseMatrix row(int r) const;  // 1 x cols copy
    void set_row(int r, const DenseMatrix& v);

    void fill(double value);

private:
    int rows_ = 0;
    int cols_ = 0;
    std::vector<double> data_;
};

bool operator==(const DenseMatrix& a, const DenseMatrix& b);

/// Standard matrix product in real64. Throws ShapeError naming both shapes
/// when a.cols != b.rows.
DenseMatrix matmul(const DenseMatrix& a, const DenseMatrix& b);

/// Row-wise softmax with per-row max subtraction. Throws DomainError on
/// non-finite input. Each output row sums to 1 within 1e-12.
DenseMatrix softmax_rows(const DenseMatrix& m);

DenseMatrix transpose(const DenseMatrix& m);
DenseMatrix exp_elementwise(const DenseMatrix& m);
DenseMatrix hadamard(const DenseMatrix& a, const DenseMatrix& b);
DenseMatrix scale(const DenseMatrix& m, double factor);

DenseMatrix operator+(const DenseMatrix& a, const DenseMatrix& b);
DenseMatrix operator-(const DenseMatrix& a, const DenseMatrix& b);

double sum(const DenseMatrix& m);
double max_abs(const DenseMatrix& m);

/// Largest absolute elementwise difference; matrices must share a shape.
double max_abs_diff(const DenseMatrix& a, const DenseMatrix& b);

// Numerically stable scalar helpers shared across modules.
double softplus(double x);
double sigmoid(double x);
double silu(double x);

DenseMatrix silu(const DenseMatrix& m);
DenseMatrix softplus(const DenseMatrix& m);

}  // namespace vmp
