#pragma once

#include <vector>

#include "vmp/dense_matrix.hpp"
#include "vmp/ssm.hpp"
#include "vmp/tensor_io.hpp"

namespace vmp::oracle {

/// Dense N x N table of per-token-pair coefficients. Entry (i, j) is the
/// length-S vector multiplying token j inside token i's tapped state, one
/// coefficient per state channel, so hidden_i = sum_j entry(i, j) (outer)
/// x_j. Reducing an entry over states against c_i reproduces the scalar
/// token-to-token weight.
class SimilarityMatrix {
public:
    SimilarityMatrix() = default;
    SimilarityMatrix(int n, int state_dim);

    int n() const { return n_; }
    int state_dim() const { return s_; }

    double& at(int i, int j, int k) { return coeff_[index(i, j, k)]; }
    double at(int i, int j, int k) const { return coeff_[index(i, j, k)]; }

    /// Entry (i, j) as an S x 1 column.
    DenseMatrix block(int i, int j) const;
    void set_block(int i, int j, const DenseMatrix& v);

    void add_block(int i, int j, const DenseMatrix& v);

    /// Rank-3 tensor of shape (N, N, S).
    Tensor to_tensor() const;

private:
    std::size_t index(int i, int j, int k) const;
    int n_ = 0;
    int s_ = 0;
    std::vector<double> coeff_;
};

SimilarityMatrix operator+(const SimilarityMatrix& a, const SimilarityMatrix& b);

/// Coefficients of the plain forward recurrence: entry (i, j) is
/// (prod_{k=j+1..i} A_k) b_j for j <= i and zero above the diagonal.
SimilarityMatrix build_forward(const std::vector<ssm::DiscretizedStep>& steps);

/// Coefficients of the reversed-order recurrence: entry (i, j) is
/// (prod_{k=j-1..i, descending} A_k) b_j for j >= i and zero below the
/// diagonal.
SimilarityMatrix build_backward(const std::vector<ssm::DiscretizedStep>& steps);

/// Sum of forward and backward coefficient tables. With masked set the
/// backward table's diagonal is dropped first, so the combined diagonal is
/// exactly the forward one.
SimilarityMatrix build_bidirectional(const std::vector<ssm::DiscretizedStep>& steps_f,
                                     const std::vector<ssm::DiscretizedStep>& steps_b,
                                     bool masked);

/// Forward coefficients with the additive residual path: below the diagonal
/// m_ij = A_i m_{i-1,j} + A_i (the dense mode adds A_i's row sums), the
/// diagonal stays b_j.
SimilarityMatrix build_forward_residual(const std::vector<ssm::DiscretizedStep>& steps);

/// Mirror of build_forward_residual for the reversed order: above the
/// diagonal m_ij = A_i m_{i+1,j} + A_i.
SimilarityMatrix build_backward_residual(const std::vector<ssm::DiscretizedStep>& steps);

/// Per-block operator coefficients: forward residual table plus backward
/// residual table with its diagonal dropped.
SimilarityMatrix build_block(const std::vector<ssm::DiscretizedStep>& steps_f,
                             const std::vector<ssm::DiscretizedStep>& steps_b);

/// Copy with the diagonal entries zeroed.
SimilarityMatrix zero_diagonal(SimilarityMatrix m);

/// hidden_i = sum_j entry(i, j) (outer) x_j for every token.
std::vector<DenseMatrix> apply(const SimilarityMatrix& m, const TokenSequence& x);

/// y_i = c_i (M X)_i with c_i taken from steps; the dense counterpart of a
/// sequential scan's output.
DenseMatrix output(const SimilarityMatrix& m, const std::vector<ssm::DiscretizedStep>& steps,
                   const TokenSequence& x);

/// Two-direction dense output y_i = c_f_i (M_f X)_i + c_b_i (M_b X)_i; the
/// counterpart of combined scans, where each direction keeps its own C.
DenseMatrix output_combined(const SimilarityMatrix& m_f,
                            const std::vector<ssm::DiscretizedStep>& steps_f,
                            const SimilarityMatrix& m_b,
                            const std::vector<ssm::DiscretizedStep>& steps_b,
                            const TokenSequence& x);

/// Minimal single-head self-attention reference.
struct AttentionRef {
    DenseMatrix w_q;  // P x D
    DenseMatrix w_k;  // P x D
    DenseMatrix w_v;  // P x D
};

struct AttentionOutput {
    DenseMatrix y;  // N x P
    DenseMatrix s;  // N x N row-stochastic scores
};

/// S = softmax(Q K^T / sqrt(P)) row-wise, Y = S (X W_V^T).
AttentionOutput self_attention(const AttentionRef& ref, const TokenSequence& x);

/// Row-level structural comparison between a coefficient table (reduced over
/// state channels by mean absolute value) and an attention score matrix.
struct StructureReport {
    int n = 0;
    int scan_upper_nonzeros = 0;            // entries above the diagonal, exact
    int attention_upper_nonzeros = 0;
    std::vector<double> scan_diag_share;    // |row diag| / row total, per row
    std::vector<double> attn_diag_share;
    std::vector<double> scan_history_share; // strictly-below-diagonal row mass
    std::vector<double> attn_history_share;
};

StructureReport compare_structures(const SimilarityMatrix& m, const DenseMatrix& scores);

/// Max-abs gaps between each sequential scan variant and its dense
/// coefficient-table counterpart on one instance. All six should sit at
/// rounding level; worst() is what the equivalence gate thresholds.
struct EquivalenceGaps {
    double forward = 0.0;
    double backward = 0.0;
    double bidirectional = 0.0;
    double bidirectional_masked = 0.0;
    double forward_residual = 0.0;
    double block = 0.0;

    double worst() const;
};

EquivalenceGaps equivalence_gaps(const ssm::SsmParams& params_f, const ssm::SsmParams& params_b,
                                 const TokenSequence& x);

}  // namespace vmp::oracle
