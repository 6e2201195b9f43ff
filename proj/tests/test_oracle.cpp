#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <vector>

#include "support.hpp"
#include "vmp/dense_matrix.hpp"
#include "vmp/errors.hpp"
#include "vmp/oracle.hpp"
#include "vmp/rng.hpp"
#include "vmp/ssm.hpp"

using namespace vmp;
using namespace vmp::oracle;
using vmp::ssm::AKind;
using vmp::ssm::DiscretizedStep;

namespace {

// fixed diagonal steps with scalar state: a_bar = a, b_bar = b, c = 1
std::vector<DiscretizedStep> constant_steps(int n, double a, double b) {
    std::vector<DiscretizedStep> steps(n);
    for (auto& st : steps) {
        st.a_kind = AKind::Diagonal;
        st.a_bar = DenseMatrix::from_rows({{a}});
        st.b_bar = DenseMatrix::from_rows({{b}});
        st.c = DenseMatrix::from_rows({{1.0}});
        st.delta = 0.1;
    }
    return steps;
}

}  // namespace

TEST_CASE("every scan variant matches its dense coefficient table") {
    Rng rng(41);
    double worst = 0.0;
    for (int trial = 0; trial < 200; ++trial) {
        const int n = rng.uniform_int(1, 8);
        const int s = rng.uniform_int(1, 4);
        const int d = rng.uniform_int(1, 4);
        const AKind kind = trial % 4 == 0 ? AKind::Dense : AKind::Diagonal;
        const auto pf = ssm::random_params(rng, s, d, kind);
        const auto pb = ssm::random_params(rng, s, d, kind);
        const auto x = ssm::random_tokens(rng, n, d);
        worst = std::max(worst, equivalence_gaps(pf, pb, x).worst());
    }
    CHECK(worst < 1e-8);
}

TEST_CASE("hidden states match the applied coefficient table") {
    Rng rng(42);
    const auto p = ssm::random_params(rng, 3, 4, AKind::Diagonal);
    const auto x = ssm::random_tokens(rng, 6, 4);
    const auto steps = ssm::discretize_all(p, x);
    const auto hidden = apply(build_forward(steps), x);
    const auto out = ssm::scan_forward(p, x);
    for (int i = 0; i < 6; ++i) CHECK(max_abs_diff(hidden[i], out.hidden[i]) < 1e-10);
}

TEST_CASE("forward coefficients live on and below the diagonal only") {
    Rng rng(43);
    for (int trial = 0; trial < 20; ++trial) {
        const int n = rng.uniform_int(2, 8);
        const auto p = ssm::random_params(rng, 3, 3, AKind::Diagonal);
        const auto x = ssm::random_tokens(rng, n, 3);
        const auto steps = ssm::discretize_all(p, x);
        for (const auto& m : {build_forward(steps), build_forward_residual(steps)}) {
            for (int i = 0; i < n; ++i)
                for (int j = i + 1; j < n; ++j)
                    for (int k = 0; k < 3; ++k) CHECK(m.at(i, j, k) == 0.0);
        }
        const auto mb = build_backward(steps);
        for (int i = 0; i < n; ++i)
            for (int j = 0; j < i; ++j)
                for (int k = 0; k < 3; ++k) CHECK(mb.at(i, j, k) == 0.0);
    }
}

TEST_CASE("masking keeps the forward diagonal and the unmasked off-diagonals") {
    Rng rng(44);
    const int n = 6, s = 3;
    const auto pf = ssm::random_params(rng, s, 4, AKind::Diagonal);
    const auto pb = ssm::random_params(rng, s, 4, AKind::Diagonal);
    const auto x = ssm::random_tokens(rng, n, 4);
    const auto steps_f = ssm::discretize_all(pf, x);
    const auto steps_b = ssm::discretize_all(pb, x);

    const auto fwd = build_forward(steps_f);
    const auto bwd = build_backward(steps_b);
    const auto open = build_bidirectional(steps_f, steps_b, false);
    const auto masked = build_bidirectional(steps_f, steps_b, true);

    for (int i = 0; i < n; ++i)
        for (int k = 0; k < s; ++k) {
            // unmasked diagonal stacks both directions, masked keeps forward only
            CHECK(open.at(i, i, k) == fwd.at(i, i, k) + bwd.at(i, i, k));
            CHECK(masked.at(i, i, k) == fwd.at(i, i, k));
        }
    for (int i = 0; i < n; ++i)
        for (int j = 0; j < n; ++j) {
            if (i == j) continue;
            for (int k = 0; k < s; ++k) CHECK(masked.at(i, j, k) == open.at(i, j, k));
        }
}

TEST_CASE("residual coefficients satisfy the additive recurrence exactly") {
    Rng rng(45);
    for (int trial = 0; trial < 100; ++trial) {
        const int n = rng.uniform_int(2, 8);
        const int s = rng.uniform_int(1, 4);
        const AKind kind = trial % 4 == 0 ? AKind::Dense : AKind::Diagonal;
        const auto p = ssm::random_params(rng, s, 3, kind);
        const auto x = ssm::random_tokens(rng, n, 3);
        const auto steps = ssm::discretize_all(p, x);
        const auto m = build_forward_residual(steps);

        for (int j = 0; j < n; ++j) {
            // diagonal stays the plain injection
            for (int k = 0; k < s; ++k) CHECK(m.at(j, j, k) == steps[j].b_bar(k, 0));
            for (int i = j + 1; i < n; ++i) {
                // m_ij = A_i m_(i-1)j + A_i, elementwise per state channel
                for (int k = 0; k < s; ++k) {
                    double expect = 0.0;
                    if (kind == AKind::Diagonal) {
                        expect = steps[i].a_bar(k, 0) * m.at(i - 1, j, k) + steps[i].a_bar(k, 0);
                    } else {
                        for (int kk = 0; kk < s; ++kk)
                            expect += steps[i].a_bar(k, kk) * (m.at(i - 1, j, kk) + 1.0);
                    }
                    CHECK(m.at(i, j, k) == doctest::Approx(expect).epsilon(1e-14));
                }
            }
        }
    }
}

TEST_CASE("backward residual coefficients satisfy the mirrored recurrence") {
    Rng rng(46);
    for (int trial = 0; trial < 40; ++trial) {
        const int n = rng.uniform_int(2, 7);
        const auto p = ssm::random_params(rng, 2, 3, AKind::Diagonal);
        const auto x = ssm::random_tokens(rng, n, 3);
        const auto steps = ssm::discretize_all(p, x);
        const auto m = build_backward_residual(steps);
        for (int j = 0; j < n; ++j) {
            for (int k = 0; k < 2; ++k) CHECK(m.at(j, j, k) == steps[j].b_bar(k, 0));
            for (int i = j - 1; i >= 0; --i)
                for (int k = 0; k < 2; ++k) {
                    const double expect =
                        steps[i].a_bar(k, 0) * m.at(i + 1, j, k) + steps[i].a_bar(k, 0);
                    CHECK(m.at(i, j, k) == doctest::Approx(expect).epsilon(1e-14));
                }
        }
    }
}

TEST_CASE("residual table hand example with constant scalar steps") {
    const double a = 0.5, b = 0.25;
    const auto m = build_forward_residual(constant_steps(3, a, b));
    CHECK(m.at(0, 0, 0) == b);
    CHECK(m.at(1, 0, 0) == a * b + a);
    CHECK(m.at(2, 0, 0) == doctest::Approx(a * (a * b + a) + a).epsilon(1e-15));
    CHECK(m.at(2, 1, 0) == a * b + a);
}

TEST_CASE("identity evolution turns the forward table into a prefix sum") {
    const auto steps = constant_steps(5, 1.0, 0.7);
    const auto plain = build_forward(steps);
    const auto res = build_forward_residual(steps);
    for (int i = 0; i < 5; ++i)
        for (int j = 0; j <= i; ++j) {
            CHECK(plain.at(i, j, 0) == 0.7);
            // each residual step adds exactly one
            CHECK(res.at(i, j, 0) == 0.7 + (i - j));
        }
}

TEST_CASE("constant contraction decays coefficients geometrically") {
    const double c = 0.8, b = 1.3;
    const auto m = build_forward(constant_steps(6, c, b));
    for (int i = 0; i < 6; ++i)
        CHECK(m.at(i, 0, 0) == doctest::Approx(std::pow(c, i) * b).epsilon(1e-13));
}

TEST_CASE("block table is forward residual plus diagonal-free backward residual") {
    Rng rng(47);
    const auto pf = ssm::random_params(rng, 3, 4, AKind::Diagonal);
    const auto pb = ssm::random_params(rng, 3, 4, AKind::Diagonal);
    const auto x = ssm::random_tokens(rng, 5, 4);
    const auto steps_f = ssm::discretize_all(pf, x);
    const auto steps_b = ssm::discretize_all(pb, x);
    const auto lhs = build_block(steps_f, steps_b);
    const auto rhs =
        build_forward_residual(steps_f) + zero_diagonal(build_backward_residual(steps_b));
    for (int i = 0; i < 5; ++i)
        for (int j = 0; j < 5; ++j)
            for (int k = 0; k < 3; ++k) CHECK(lhs.at(i, j, k) == rhs.at(i, j, k));
}

TEST_CASE("similarity matrix accessors and serialization") {
    SimilarityMatrix m(3, 2);
    CHECK(m.n() == 3);
    CHECK(m.state_dim() == 2);
    m.at(1, 2, 0) = 4.0;
    m.set_block(0, 1, DenseMatrix::from_rows({{1.0}, {2.0}}));
    m.add_block(0, 1, DenseMatrix::from_rows({{0.5}, {0.5}}));
    CHECK(m.block(0, 1)(0, 0) == 1.5);
    CHECK(m.block(0, 1)(1, 0) == 2.5);

    const Tensor t = m.to_tensor();
    CHECK(t.dims == std::vector<std::uint32_t>{3, 3, 2});
    CHECK(t.data[(0 * 3 + 1) * 2 + 1] == 2.5);

    CHECK_THROWS_AS(m.at(3, 0, 0), ShapeError);
    CHECK_THROWS_AS(m.set_block(0, 0, DenseMatrix(3, 1)), ShapeError);
    CHECK_THROWS_AS(SimilarityMatrix(0, 1), ShapeError);
    CHECK_THROWS_AS(SimilarityMatrix(2, 2) + SimilarityMatrix(3, 2), ShapeError);
}

TEST_CASE("zero_diagonal only clears the diagonal") {
    const auto steps = constant_steps(4, 0.9, 0.4);
    const auto m = build_backward(steps);
    const auto z = zero_diagonal(m);
    for (int i = 0; i < 4; ++i)
        for (int j = 0; j < 4; ++j)
            CHECK(z.at(i, j, 0) == (i == j ? 0.0 : m.at(i, j, 0)));
}

TEST_CASE("self-attention matches an index-by-index evaluation") {
    Rng rng(48);
    const int n = 5, d = 4, p = 3;
    AttentionRef ref;
    ref.w_q = ssm::random_tokens(rng, p, d);
    ref.w_k = ssm::random_tokens(rng, p, d);
    ref.w_v = ssm::random_tokens(rng, p, d);
    const auto x = ssm::random_tokens(rng, n, d);
    const auto out = self_attention(ref, x);

    // scores by hand: s_ij = exp(q_i . k_j / sqrt(p)) / row sum
    DenseMatrix logits(n, n);
    for (int i = 0; i < n; ++i)
        for (int j = 0; j < n; ++j) {
            double qk = 0.0;
            for (int a = 0; a < p; ++a) {
                double qi = 0.0, kj = 0.0;
                for (int b = 0; b < d; ++b) {
                    qi += ref.w_q(a, b) * x(i, b);
                    kj += ref.w_k(a, b) * x(j, b);
                }
                qk += qi * kj;
            }
            logits(i, j) = qk / std::sqrt(static_cast<double>(p));
        }
    for (int i = 0; i < n; ++i) {
        double denom = 0.0;
        for (int j = 0; j < n; ++j) denom += std::exp(logits(i, j));
        for (int j = 0; j < n; ++j)
            CHECK(out.s(i, j) == doctest::Approx(std::exp(logits(i, j)) / denom).epsilon(1e-12));
    }

    // token-level sum y_i = sum_j s_ij (x_j W_V^T) against the matrix form
    for (int i = 0; i < n; ++i)
        for (int a = 0; a < p; ++a) {
            double acc = 0.0;
            for (int j = 0; j < n; ++j) {
                double vj = 0.0;
                for (int b = 0; b < d; ++b) vj += ref.w_v(a, b) * x(j, b);
                acc += out.s(i, j) * vj;
            }
            CHECK(std::abs(out.y(i, a) - acc) < 1e-12);
        }
}

TEST_CASE("score application commutes with the value projection") {
    Rng rng(49);
    const int n = 6, d = 5;
    AttentionRef ref;
    ref.w_q = ssm::random_tokens(rng, 3, d);
    ref.w_k = ssm::random_tokens(rng, 3, d);
    ref.w_v = ssm::random_tokens(rng, 4, d);
    const auto x = ssm::random_tokens(rng, n, d);
    const auto out = self_attention(ref, x);

    // (S X) W_V^T vs S (X W_V^T)
    const auto lhs = matmul(matmul(out.s, x), transpose(ref.w_v));
    const auto rhs = matmul(out.s, matmul(x, transpose(ref.w_v)));
    CHECK(max_abs_diff(lhs, rhs) < 1e-12);
    CHECK(max_abs_diff(out.y, rhs) < 1e-12);
}

TEST_CASE("attention rows are stochastic and validation fires") {
    Rng rng(50);
    AttentionRef ref;
    ref.w_q = ssm::random_tokens(rng, 2, 3);
    ref.w_k = ssm::random_tokens(rng, 2, 3);
    ref.w_v = ssm::random_tokens(rng, 2, 3);
    const auto x = ssm::random_tokens(rng, 4, 3);
    const auto out = self_attention(ref, x);
    for (int i = 0; i < 4; ++i) {
        double total = 0.0;
        for (int j = 0; j < 4; ++j) {
            CHECK(out.s(i, j) > 0.0);
            total += out.s(i, j);
        }
        CHECK(std::abs(total - 1.0) < 1e-12);
    }

    AttentionRef bad = ref;
    bad.w_k = ssm::random_tokens(rng, 3, 3);
    CHECK_THROWS_AS(self_attention(bad, x), ShapeError);
    bad = ref;
    bad.w_v = ssm::random_tokens(rng, 2, 4);
    CHECK_THROWS_AS(self_attention(bad, x), ShapeError);
}

TEST_CASE("structure comparison separates causal tables from dense attention") {
    Rng rng(51);
    const int n = 6;
    const auto p = ssm::random_params(rng, 3, 4, AKind::Diagonal);
    const auto x = ssm::random_tokens(rng, n, 4);
    const auto m = build_forward(ssm::discretize_all(p, x));

    AttentionRef ref;
    ref.w_q = ssm::random_tokens(rng, 3, 4);
    ref.w_k = ssm::random_tokens(rng, 3, 4);
    ref.w_v = ssm::random_tokens(rng, 3, 4);
    const auto attn = self_attention(ref, x);

    const auto rep = compare_structures(m, attn.s);
    CHECK(rep.n == n);
    CHECK(rep.scan_upper_nonzeros == 0);
    CHECK(rep.attention_upper_nonzeros == n * (n - 1) / 2);
    for (int i = 0; i < n; ++i) {
        CHECK(rep.scan_diag_share[i] >= 0.0);
        CHECK(rep.scan_diag_share[i] <= 1.0);
        // causal rows put everything on history + diagonal
        CHECK(rep.scan_history_share[i] + rep.scan_diag_share[i] == doctest::Approx(1.0));
        // attention rows always leak mass to the future except the last
        if (i < n - 1) CHECK(rep.attn_history_share[i] + rep.attn_diag_share[i] < 1.0);
    }

    CHECK_THROWS_AS(compare_structures(m, DenseMatrix(3, 3)), ShapeError);
}

TEST_CASE("table builders and appliers validate input") {
    CHECK_THROWS_AS(build_forward({}), ShapeError);
    const auto steps = constant_steps(3, 0.5, 0.5);
    const auto m = build_forward(steps);
    CHECK_THROWS_AS(apply(m, TokenSequence(4, 2)), ShapeError);
    CHECK_THROWS_AS(output(m, constant_steps(2, 0.5, 0.5), TokenSequence(3, 2)), ShapeError);
}
