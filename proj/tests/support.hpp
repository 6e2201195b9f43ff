#pragma once

// Shared helpers for the test binaries only. The matrix exponential here is
// an independent check on the library's Taylor implementation: different
// algorithm (diagonal Pade 6/6), different code path.

#include <cmath>
#include <vector>

#include "vmp/dense_matrix.hpp"
#include "vmp/errors.hpp"

namespace vmp::testsupport {

// gauss solve with partial pivoting for a matrix right-hand side
inline DenseMatrix solve_matrix(DenseMatrix m, DenseMatrix rhs) {
    const int n = m.rows();
    for (int col = 0; col < n; ++col) {
        int pivot = col;
        for (int row = col + 1; row < n; ++row)
            if (std::abs(m(row, col)) > std::abs(m(pivot, col))) pivot = row;
        if (m(pivot, col) == 0.0) throw ConditioningError("solve_matrix: singular");
        if (pivot != col)
            for (int cc = 0; cc < n; ++cc) {
                std::swap(m(pivot, cc), m(col, cc));
                std::swap(rhs(pivot, cc), rhs(col, cc));
            }
        for (int row = 0; row < n; ++row) {
            if (row == col) continue;
            const double f = m(row, col) / m(col, col);
            if (f == 0.0) continue;
            for (int cc = 0; cc < n; ++cc) {
                m(row, cc) -= f * m(col, cc);
                rhs(row, cc) -= f * rhs(col, cc);
            }
        }
    }
    for (int row = 0; row < n; ++row)
        for (int cc = 0; cc < n; ++cc) rhs(row, cc) /= m(row, row);
    return rhs;
}

// diagonal Pade 6/6 approximant of exp with scaling and squaring
inline DenseMatrix pade_exp(const DenseMatrix& a) {
    const int n = a.rows();
    int squarings = 0;
    for (double norm = max_abs(a) * n; norm > 0.5; norm *= 0.5) ++squarings;
    const DenseMatrix x = scale(a, std::ldexp(1.0, -squarings));

    static const double coeff[7] = {1.0,        1.0 / 2.0,     5.0 / 44.0, 1.0 / 66.0,
                                    1.0 / 792.0, 1.0 / 15840.0, 1.0 / 665280.0};
    DenseMatrix power = DenseMatrix::identity(n);
    DenseMatrix p(n, n), q(n, n);
    for (int k = 0; k <= 6; ++k) {
        p = p + scale(power, coeff[k]);
        q = q + scale(power, k % 2 == 0 ? coeff[k] : -coeff[k]);
        if (k < 6) power = matmul(power, x);
    }
    DenseMatrix r = solve_matrix(q, p);
    for (int i = 0; i < squarings; ++i) r = matmul(r, r);
    return r;
}

}  // namespace vmp::testsupport
