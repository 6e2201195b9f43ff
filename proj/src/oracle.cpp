#include "vmp/oracle.hpp"

#include <cmath>
#include <cstdint>
#include <string>

#include "vmp/errors.hpp"

namespace vmp::oracle {

SimilarityMatrix::SimilarityMatrix(int n, int state_dim) : n_(n), s_(state_dim) {
    if (n < 1 || state_dim < 1)
        throw ShapeError("SimilarityMatrix: need n >= 1 and state_dim >= 1, got n=" +
                         std::to_string(n) + " state_dim=" + std::to_string(state_dim));
    coeff_.assign(static_cast<std::size_t>(n) * n * state_dim, 0.0);
}

std::size_t SimilarityMatrix::index(int i, int j, int k) const {
    if (i < 0 || i >= n_ || j < 0 || j >= n_ || k < 0 || k >= s_)
        throw ShapeError("SimilarityMatrix: index (" + std::to_string(i) + ", " +
                         std::to_string(j) + ", " + std::to_string(k) + ") outside " +
                         std::to_string(n_) + " x " + std::to_string(n_) + " x " +
                         std::to_string(s_));
    return (static_cast<std::size_t>(i) * n_ + j) * s_ + k;
}

DenseMatrix SimilarityMatrix::block(int i, int j) const {
    DenseMatrix v(s_, 1);
    for (int k = 0; k < s_; ++k) v(k, 0) = at(i, j, k);
    return v;
}

void SimilarityMatrix::set_block(int i, int j, const DenseMatrix& v) {
    if (v.rows() != s_ || v.cols() != 1)
        throw ShapeError("SimilarityMatrix: block must be " + std::to_string(s_) + " x 1, got " +
                         v.shape_str());
    for (int k = 0; k < s_; ++k) at(i, j, k) = v(k, 0);
}

void SimilarityMatrix::add_block(int i, int j, const DenseMatrix& v) {
    if (v.rows() != s_ || v.cols() != 1)
        throw ShapeError("SimilarityMatrix: block must be " + std::to_string(s_) + " x 1, got " +
                         v.shape_str());
    for (int k = 0; k < s_; ++k) at(i, j, k) += v(k, 0);
}

Tensor SimilarityMatrix::to_tensor() const {
    Tensor t;
    t.dims = {static_cast<std::uint32_t>(n_), static_cast<std::uint32_t>(n_),
              static_cast<std::uint32_t>(s_)};
    t.data = coeff_;
    return t;
}

SimilarityMatrix operator+(const SimilarityMatrix& a, const SimilarityMatrix& b) {
    if (a.n() != b.n() || a.state_dim() != b.state_dim())
        throw ShapeError("SimilarityMatrix: cannot add tables of different shapes");
    SimilarityMatrix out(a.n(), a.state_dim());
    for (int i = 0; i < a.n(); ++i)
        for (int j = 0; j < a.n(); ++j)
            for (int k = 0; k < a.state_dim(); ++k) out.at(i, j, k) = a.at(i, j, k) + b.at(i, j, k);
    return out;
}

namespace {

void check_steps(const std::vector<ssm::DiscretizedStep>& steps) {
    if (steps.empty()) throw ShapeError("similarity build: no steps");
    const int s = steps.front().a_bar.rows();
    for (const auto& st : steps)
        if (st.a_bar.rows() != s || st.b_bar.rows() != s)
            throw ShapeError("similarity build: steps disagree on state_dim");
}

// A_i v, honoring the storage mode
DenseMatrix apply_a(const ssm::DiscretizedStep& step, const DenseMatrix& v) {
    if (step.a_kind == ssm::AKind::Diagonal) {
        DenseMatrix out(v.rows(), 1);
        for (int k = 0; k < v.rows(); ++k) out(k, 0) = step.a_bar(k, 0) * v(k, 0);
        return out;
    }
    return matmul(step.a_bar, v);
}

// additive per-step residual coefficient: A_i as a column (dense: row sums,
// i.e. A_i applied to the all-ones vector)
DenseMatrix resid_term(const ssm::DiscretizedStep& step) {
    if (step.a_kind == ssm::AKind::Diagonal) return step.a_bar;
    const int s = step.a_bar.rows();
    DenseMatrix out(s, 1);
    for (int i = 0; i < s; ++i) {
        double acc = 0.0;
        for (int j = 0; j < s; ++j) acc += step.a_bar(i, j);
        out(i, 0) = acc;
    }
    return out;
}

}  // namespace

SimilarityMatrix build_forward(const std::vector<ssm::DiscretizedStep>& steps) {
    check_steps(steps);
    const int n = static_cast<int>(steps.size());
    SimilarityMatrix m(n, steps.front().a_bar.rows());
    for (int j = 0; j < n; ++j) {
        DenseMatrix v = steps[j].b_bar;
        m.set_block(j, j, v);
        for (int i = j + 1; i < n; ++i) {
            v = apply_a(steps[i], v);
            m.set_block(i, j, v);
        }
    }
    return m;
}

SimilarityMatrix build_backward(const std::vector<ssm::DiscretizedStep>& steps) {
    check_steps(steps);
    const int n = static_cast<int>(steps.size());
    SimilarityMatrix m(n, steps.front().a_bar.rows());
    for (int j = 0; j < n; ++j) {
        DenseMatrix v = steps[j].b_bar;
        m.set_block(j, j, v);
        for (int i = j - 1; i >= 0; --i) {
            v = apply_a(steps[i], v);
            m.set_block(i, j, v);
        }
    }
    return m;
}

SimilarityMatrix build_bidirectional(const std::vector<ssm::DiscretizedStep>& steps_f,
                                     const std::vector<ssm::DiscretizedStep>& steps_b,
                                     bool masked) {
    SimilarityMatrix b = build_backward(steps_b);
    if (masked) b = zero_diagonal(std::move(b));
    return build_forward(steps_f) + b;
}

SimilarityMatrix build_forward_residual(const std::vector<ssm::DiscretizedStep>& steps) {
    check_steps(steps);
    const int n = static_cast<int>(steps.size());
    SimilarityMatrix m(n, steps.front().a_bar.rows());
    for (int j = 0; j < n; ++j) {
        DenseMatrix v = steps[j].b_bar;
        m.set_block(j, j, v);
        for (int i = j + 1; i < n; ++i) {
            v = apply_a(steps[i], v) + resid_term(steps[i]);
            m.set_block(i, j, v);
        }
    }
    return m;
}

SimilarityMatrix build_backward_residual(const std::vector<ssm::DiscretizedStep>& steps) {
    check_steps(steps);
    const int n = static_cast<int>(steps.size());
    SimilarityMatrix m(n, steps.front().a_bar.rows());
    for (int j = 0; j < n; ++j) {
        DenseMatrix v = steps[j].b_bar;
        m.set_block(j, j, v);
        for (int i = j - 1; i >= 0; --i) {
            v = apply_a(steps[i], v) + resid_term(steps[i]);
            m.set_block(i, j, v);
        }
    }
    return m;
}

SimilarityMatrix build_block(const std::vector<ssm::DiscretizedStep>& steps_f,
                             const std::vector<ssm::DiscretizedStep>& steps_b) {
    return build_forward_residual(steps_f) + zero_diagonal(build_backward_residual(steps_b));
}

SimilarityMatrix zero_diagonal(SimilarityMatrix m) {
    for (int i = 0; i < m.n(); ++i)
        for (int k = 0; k < m.state_dim(); ++k) m.at(i, i, k) = 0.0;
    return m;
}

std::vector<DenseMatrix> apply(const SimilarityMatrix& m, const TokenSequence& x) {
    if (x.rows() != m.n())
        throw ShapeError("similarity apply: table is " + std::to_string(m.n()) +
                         " tokens, sequence is " + std::to_string(x.rows()));
    const int n = m.n();
    const int s = m.state_dim();
    const int d = x.cols();
    std::vector<DenseMatrix> hidden(n, DenseMatrix(s, d));
    for (int i = 0; i < n; ++i)
        for (int j = 0; j < n; ++j)
            for (int k = 0; k < s; ++k) {
                const double w = m.at(i, j, k);
                if (w == 0.0) continue;
                for (int dd = 0; dd < d; ++dd) hidden[i](k, dd) += w * x(j, dd);
            }
    return hidden;
}

DenseMatrix output(const SimilarityMatrix& m, const std::vector<ssm::DiscretizedStep>& steps,
                   const TokenSequence& x) {
    if (static_cast<int>(steps.size()) != m.n())
        throw ShapeError("similarity output: step count does not match the table");
    const std::vector<DenseMatrix> hidden = apply(m, x);
    DenseMatrix y(m.n(), x.cols());
    for (int i = 0; i < m.n(); ++i)
        for (int dd = 0; dd < x.cols(); ++dd) {
            double acc = 0.0;
            for (int k = 0; k < m.state_dim(); ++k) acc += steps[i].c(0, k) * hidden[i](k, dd);
            y(i, dd) = acc;
        }
    return y;
}

DenseMatrix output_combined(const SimilarityMatrix& m_f,
                            const std::vector<ssm::DiscretizedStep>& steps_f,
                            const SimilarityMatrix& m_b,
                            const std::vector<ssm::DiscretizedStep>& steps_b,
                            const TokenSequence& x) {
    return output(m_f, steps_f, x) + output(m_b, steps_b, x);
}

AttentionOutput self_attention(const AttentionRef& ref, const TokenSequence& x) {
    if (ref.w_q.cols() != x.cols() || ref.w_k.cols() != x.cols() || ref.w_v.cols() != x.cols())
        throw ShapeError("self_attention: projection depth does not match token depth " +
                         std::to_string(x.cols()));
    if (ref.w_q.rows() != ref.w_k.rows())
        throw ShapeError("self_attention: w_q " + ref.w_q.shape_str() + " and w_k " +
                         ref.w_k.shape_str() + " must project to the same width");
    const DenseMatrix q = matmul(x, transpose(ref.w_q));
    const DenseMatrix k = matmul(x, transpose(ref.w_k));
    const DenseMatrix v = matmul(x, transpose(ref.w_v));
    AttentionOutput out;
    out.s = softmax_rows(scale(matmul(q, transpose(k)), 1.0 / std::sqrt(ref.w_q.rows())));
    out.y = matmul(out.s, v);
    return out;
}

StructureReport compare_structures(const SimilarityMatrix& m, const DenseMatrix& scores) {
    if (scores.rows() != m.n() || scores.cols() != m.n())
        throw ShapeError("compare_structures: score matrix " + scores.shape_str() +
                         " does not match table size " + std::to_string(m.n()));
    const int n = m.n();
    StructureReport rep;
    rep.n = n;
    rep.scan_diag_share.resize(n);
    rep.attn_diag_share.resize(n);
    rep.scan_history_share.resize(n);
    rep.attn_history_share.resize(n);

    // reduce each S-vector entry to a scalar weight by mean |coefficient|
    DenseMatrix w(n, n);
    for (int i = 0; i < n; ++i)
        for (int j = 0; j < n; ++j) {
            double acc = 0.0;
            for (int k = 0; k < m.state_dim(); ++k) acc += std::abs(m.at(i, j, k));
            w(i, j) = acc / m.state_dim();
        }

    for (int i = 0; i < n; ++i)
        for (int j = i + 1; j < n; ++j) {
            if (w(i, j) != 0.0) ++rep.scan_upper_nonzeros;
            if (scores(i, j) != 0.0) ++rep.attention_upper_nonzeros;
        }

    for (int i = 0; i < n; ++i) {
        double w_total = 0.0, w_hist = 0.0, a_total = 0.0, a_hist = 0.0;
        for (int j = 0; j < n; ++j) {
            w_total += w(i, j);
            a_total += std::abs(scores(i, j));
            if (j < i) {
                w_hist += w(i, j);
                a_hist += std::abs(scores(i, j));
            }
        }
        rep.scan_diag_share[i] = w_total > 0.0 ? w(i, i) / w_total : 0.0;
        rep.attn_diag_share[i] = a_total > 0.0 ? std::abs(scores(i, i)) / a_total : 0.0;
        rep.scan_history_share[i] = w_total > 0.0 ? w_hist / w_total : 0.0;
        rep.attn_history_share[i] = a_total > 0.0 ? a_hist / a_total : 0.0;
    }
    return rep;
}

double EquivalenceGaps::worst() const {
    double w = forward;
    for (double g : {backward, bidirectional, bidirectional_masked, forward_residual, block})
        w = std::max(w, g);
    return w;
}

EquivalenceGaps equivalence_gaps(const ssm::SsmParams& params_f, const ssm::SsmParams& params_b,
                                 const TokenSequence& x) {
    const auto steps_f = ssm::discretize_all(params_f, x);
    const auto steps_b = ssm::discretize_all(params_b, x);

    const auto m_fwd = build_forward(steps_f);
    const auto m_bwd = build_backward(steps_b);
    const auto m_fwd_res = build_forward_residual(steps_f);
    const auto m_bwd_res = build_backward_residual(steps_b);

    EquivalenceGaps g;
    g.forward = max_abs_diff(ssm::scan_forward(params_f, x).y, output(m_fwd, steps_f, x));
    g.backward = max_abs_diff(ssm::scan_backward(params_b, x).y, output(m_bwd, steps_b, x));
    g.bidirectional = max_abs_diff(ssm::scan_bidirectional(params_f, params_b, x, false).y,
                                   output_combined(m_fwd, steps_f, m_bwd, steps_b, x));
    g.bidirectional_masked =
        max_abs_diff(ssm::scan_bidirectional(params_f, params_b, x, true).y,
                     output_combined(m_fwd, steps_f, zero_diagonal(m_bwd), steps_b, x));
    g.forward_residual = max_abs_diff(ssm::scan_forward_residual(params_f, x).y,
                                      output(m_fwd_res, steps_f, x));
    g.block = max_abs_diff(ssm::scan_block(params_f, params_b, x),
                           output_combined(m_fwd_res, steps_f, zero_diagonal(m_bwd_res),
                                           steps_b, x));
    return g;
}

}  // namespace vmp::oracle
