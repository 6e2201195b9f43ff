#pragma once

#include <vector>

#include "vmp/dense_matrix.hpp"
#include "vmp/rng.hpp"

namespace vmp {

/// N tokens of depth D, one row per token.
using TokenSequence = DenseMatrix;

namespace ssm {

/// How the evolution matrix A is stored. Diagonal is the default everywhere
/// (matrix exponential reduces to elementwise exp); the dense mode exists for
/// small state dims and is exercised by tests only. Both modes share the same
/// operation contracts.
enum class AKind { Diagonal, Dense };

/// Continuous parameters of one scan direction plus the selective projections
/// that derive the per-token B, C and timescale from the token itself.
struct SsmParams {
    AKind a_kind = AKind::Diagonal;
    DenseMatrix a;        // S x 1 diagonal entries, or S x S dense
    DenseMatrix w_b;      // S x D, token -> B
    DenseMatrix w_c;      // S x D, token -> C
    DenseMatrix w_delta;  // 1 x D, token -> timescale input
    double delta_bias = 0.0;

    int state_dim() const { return a.rows(); }
    int token_dim() const { return w_b.cols(); }

    // throws ShapeError if the pieces disagree
    void validate() const;
};

/// Per-token discrete parameters after zero-order hold.
struct DiscretizedStep {
    AKind a_kind = AKind::Diagonal;
    DenseMatrix a_bar;  // S x 1 or S x S, exp(delta * A)
    DenseMatrix b_bar;  // S x 1
    DenseMatrix c;      // 1 x S
    double delta = 0.0;
};

/// Branch threshold for the near-singular discretization series, applied to
/// max |delta * A| entrywise.
inline constexpr double kSeriesThreshold = 1e-6;

/// (e^z - 1) / z. The series argument selects the two-term branch 1 + z/2;
/// callers decide the branch once per step from kSeriesThreshold.
double phi1(double z, bool series);

/// Derivative of phi1 as implemented (0.5 on the series branch, the analytic
/// derivative otherwise, evaluated cancellation-free for small z).
double phi1_grad(double z, bool series);

/// Zero-order hold: a_bar = exp(delta A) and
/// b_bar = (delta A)^-1 (exp(delta A) - I) delta b, with the series limit
/// b_bar = delta b + (delta A)(delta b)/2 when max|delta A| < kSeriesThreshold.
/// Throws ConditioningError if delta A is numerically singular outside the
/// series branch.
DiscretizedStep zoh_discretize(AKind kind, const DenseMatrix& a, const DenseMatrix& b,
                               const DenseMatrix& c, double delta);

/// Selective discretization of one token (1 x D row): b = W_B x, c = W_C x,
/// delta = softplus(w_delta . x + delta_bias).
DiscretizedStep discretize(const SsmParams& params, const DenseMatrix& token);

std::vector<DiscretizedStep> discretize_all(const SsmParams& params, const TokenSequence& x);

/// Scan results. hidden[i] is the S x D state the output taps at token i
/// (column d is the state of channel d's scalar-input scan); for a plain
/// single-direction scan y_i = c_i * hidden[i] holds exactly as computed, and
/// for combined scans hidden is the sum of the two directions' tapped states.
struct ScanOutput {
    std::vector<DenseMatrix> hidden;  // N entries, S x D
    DenseMatrix y;                    // N x D
};

/// Full record of one directional scan, kept for the hand-written adjoint.
/// All per-token vectors are indexed by token position regardless of the
/// processing direction.
struct ScanTrace {
    bool reverse = false;
    bool masked = false;
    bool residual = false;
    int n = 0;
    int state_dim = 0;
    int token_dim = 0;
    std::vector<DiscretizedStep> steps;
    std::vector<double> z;                   // pre-softplus timescale input
    std::vector<DenseMatrix> b_raw;          // S x 1 selective B before ZOH
    std::vector<DenseMatrix> hidden;         // S x D recurrence state
    std::vector<DenseMatrix> resid;          // S x D residual accumulator
    std::vector<DenseMatrix> processed_sum;  // 1 x D sum of earlier-processed tokens
    std::vector<DenseMatrix> tap;            // S x D state the output reads
    DenseMatrix y;                           // N x D
};

/// One directional scan over the token sequence.
///   reverse  - process tokens last-to-first (outputs stay position-indexed)
///   masked   - drop the token's own b_bar injection from the output tap,
///              which zeroes the diagonal of this direction's coefficients
///   residual - add the accumulator r_t = A_t (r_{t-1} + ones * sum of
///              earlier-processed tokens) to the tap, so each off-diagonal
///              coefficient m_ij picks up an extra additive A_i per step
ScanTrace scan_with_trace(const SsmParams& params, const TokenSequence& x, bool reverse,
                          bool masked, bool residual);

/// h_t = A_t h_{t-1} + b_bar_t x_t, y_t = c_t h_t over t = 1..N.
ScanOutput scan_forward(const SsmParams& params, const TokenSequence& x);

/// Same recurrence over the reversed order [x_N, ..., x_1], outputs
/// re-indexed back to forward positions.
ScanOutput scan_backward(const SsmParams& params, const TokenSequence& x);

/// Sum of a forward and a backward scan. With masked set, the backward
/// direction's diagonal contribution b_ii x_i is removed before the sum, so
/// the combined coefficient diagonal equals the forward diagonal.
ScanOutput scan_bidirectional(const SsmParams& params_f, const SsmParams& params_b,
                              const TokenSequence& x, bool masked);

/// Forward scan with the residual accumulator: y_t = c_t (h_t + r_t).
ScanOutput scan_forward_residual(const SsmParams& params, const TokenSequence& x);

/// General combiner behind scan_bidirectional and scan_block: forward
/// direction plus masked-optional backward direction, residual-optional on
/// both.
ScanOutput scan_combined(const SsmParams& params_f, const SsmParams& params_b,
                         const TokenSequence& x, bool masked, bool residual);

/// The per-block operator: forward residual scan plus masked backward
/// residual scan, outputs summed per token.
TokenSequence scan_block(const SsmParams& params_f, const SsmParams& params_b,
                         const TokenSequence& x);

/// Dense matrix exponential by scaling-and-squaring with a Taylor series;
/// only small state dims pass through here.
DenseMatrix matrix_exponential(const DenseMatrix& a);

/// Input and parameter gradients of one directional scan.
struct ScanGrads {
    DenseMatrix x;        // N x D
    DenseMatrix a;        // S x 1
    DenseMatrix w_b;      // S x D
    DenseMatrix w_c;      // S x D
    DenseMatrix w_delta;  // 1 x D
    double delta_bias = 0.0;
};

/// Hand-written reverse-mode adjoint of scan_with_trace, diagonal A only.
/// y_bar is the loss gradient at the scan output (N x D). The chain rules
/// through the discretization reuse the exact series-branch decision the
/// forward made, so gradients stay consistent across the branch seam.
ScanGrads scan_adjoint(const SsmParams& params, const TokenSequence& x, const ScanTrace& trace,
                       const DenseMatrix& y_bar);

/// Well-conditioned random instances for property checks and the verify
/// runner. A gets negative (diagonally dominant in dense mode) entries so
/// every scan stays contractive; magnitudes keep outputs O(1).
SsmParams random_params(Rng& rng, int state_dim, int token_dim, AKind kind);
TokenSequence random_tokens(Rng& rng, int n, int token_dim);

}  // namespace ssm
}  // namespace vmp
