#include "vmp/ssm.hpp"

#include <cmath>
#include <string>
#include <utility>

#include "vmp/errors.hpp"

namespace vmp::ssm {

void SsmParams::validate() const {
    const int s = a.rows();
    if (s < 1) throw ShapeError("ssm: A must have at least one state row, got " + a.shape_str());
    if (a_kind == AKind::Diagonal) {
        if (a.cols() != 1)
            throw ShapeError("ssm: diagonal A must be S x 1, got " + a.shape_str());
    } else {
        if (a.cols() != s)
            throw ShapeError("ssm: dense A must be square, got " + a.shape_str());
    }
    const int d = w_b.cols();
    if (w_b.rows() != s)
        throw ShapeError("ssm: w_b must be " + std::to_string(s) + " x D, got " + w_b.shape_str());
    if (w_c.rows() != s || w_c.cols() != d)
        throw ShapeError("ssm: w_c must match w_b " + w_b.shape_str() + ", got " + w_c.shape_str());
    if (w_delta.rows() != 1 || w_delta.cols() != d)
        throw ShapeError("ssm: w_delta must be 1 x " + std::to_string(d) + ", got " +
                         w_delta.shape_str());
}

double phi1(double z, bool series) {
    if (series) return 1.0 + 0.5 * z;
    if (z == 0.0)
        throw ConditioningError("phi1: zero argument outside the series branch is singular");
    return std::expm1(z) / z;
}

double phi1_grad(double z, bool series) {
    if (series) return 0.5;
    if (std::abs(z) < 1e-3) {
        // leading terms of sum_k k z^(k-1) / (k+1)!, next term below 1e-18
        return 0.5 + z * (1.0 / 3.0 + z * (0.125 + z * (1.0 / 30.0 + z / 144.0)));
    }
    return (std::exp(z) * (z - 1.0) + 1.0) / (z * z);
}

DenseMatrix matrix_exponential(const DenseMatrix& a) {
    if (a.rows() != a.cols())
        throw ShapeError("matrix_exponential: matrix must be square, got " + a.shape_str());
    const int s = a.rows();
    int squarings = 0;
    for (double norm = max_abs(a); norm > 0.5; norm *= 0.5) ++squarings;
    const DenseMatrix scaled = squarings ? scale(a, std::ldexp(1.0, -squarings)) : a;
    DenseMatrix result = DenseMatrix::identity(s);
    DenseMatrix term = DenseMatrix::identity(s);
    for (int k = 1; k <= 40; ++k) {
        term = scale(matmul(term, scaled), 1.0 / k);
        result = result + term;
        if (max_abs(term) < 1e-19 * std::max(1.0, max_abs(result))) break;
    }
    for (int i = 0; i < squarings; ++i) result = matmul(result, result);
    return result;
}

namespace {

// gaussian elimination with partial pivoting; m is S x S, v is S x 1
DenseMatrix solve_linear(DenseMatrix m, DenseMatrix v) {
    const int s = m.rows();
    const double tiny = 1e-12 * std::max(1.0, max_abs(m));
    for (int col = 0; col < s; ++col) {
        int pivot = col;
        for (int row = col + 1; row < s; ++row)
            if (std::abs(m(row, col)) > std::abs(m(pivot, col))) pivot = row;
        if (std::abs(m(pivot, col)) < tiny)
            throw ConditioningError(
                "zoh_discretize: delta * A is numerically singular outside the series branch");
        if (pivot != col) {
            for (int cc = 0; cc < s; ++cc) std::swap(m(pivot, cc), m(col, cc));
            std::swap(v(pivot, 0), v(col, 0));
        }
        for (int row = col + 1; row < s; ++row) {
            const double f = m(row, col) / m(col, col);
            if (f == 0.0) continue;
            for (int cc = col; cc < s; ++cc) m(row, cc) -= f * m(col, cc);
            v(row, 0) -= f * v(col, 0);
        }
    }
    for (int row = s - 1; row >= 0; --row) {
        double acc = v(row, 0);
        for (int cc = row + 1; cc < s; ++cc) acc -= m(row, cc) * v(cc, 0);
        v(row, 0) = acc / m(row, row);
    }
    return v;
}

struct Selective {
    DenseMatrix b_raw;  // S x 1
    DenseMatrix c;      // 1 x S
    double z = 0.0;     // pre-softplus timescale input
};

Selective project(const SsmParams& params, const DenseMatrix& token) {
    Selective sel;
    sel.b_raw = matmul(params.w_b, transpose(token));
    sel.c = matmul(token, transpose(params.w_c));
    sel.z = params.delta_bias;
    for (int j = 0; j < token.cols(); ++j) sel.z += params.w_delta(0, j) * token(0, j);
    return sel;
}

}  // namespace

DiscretizedStep zoh_discretize(AKind kind, const DenseMatrix& a, const DenseMatrix& b,
                               const DenseMatrix& c, double delta) {
    const int s = a.rows();
    if (kind == AKind::Diagonal ? a.cols() != 1 : a.cols() != s)
        throw ShapeError("zoh_discretize: bad A shape " + a.shape_str());
    if (b.rows() != s || b.cols() != 1)
        throw ShapeError("zoh_discretize: B must be " + std::to_string(s) + " x 1, got " +
                         b.shape_str());
    if (c.rows() != 1 || c.cols() != s)
        throw ShapeError("zoh_discretize: C must be 1 x " + std::to_string(s) + ", got " +
                         c.shape_str());
    if (!std::isfinite(delta))
        throw DomainError("zoh_discretize: delta is not finite");

    DiscretizedStep step;
    step.a_kind = kind;
    step.delta = delta;
    step.c = c;
    if (kind == AKind::Diagonal) {
        double norm = 0.0;
        for (int k = 0; k < s; ++k) norm = std::max(norm, std::abs(delta * a(k, 0)));
        const bool series = norm < kSeriesThreshold;
        step.a_bar = DenseMatrix(s, 1);
        step.b_bar = DenseMatrix(s, 1);
        for (int k = 0; k < s; ++k) {
            const double z = delta * a(k, 0);
            step.a_bar(k, 0) = std::exp(z);
            step.b_bar(k, 0) = phi1(z, series) * delta * b(k, 0);
        }
    } else {
        const DenseMatrix za = scale(a, delta);
        const bool series = max_abs(za) < kSeriesThreshold;
        step.a_bar = matrix_exponential(za);
        const DenseMatrix db = scale(b, delta);
        if (series) {
            step.b_bar = db + scale(matmul(za, db), 0.5);
        } else {
            step.b_bar = solve_linear(za, matmul(step.a_bar - DenseMatrix::identity(s), db));
        }
    }
    return step;
}

std::vector<DiscretizedStep> discretize_all(const SsmParams& params, const TokenSequence& x) {
    params.validate();
    if (x.cols() != params.token_dim())
        throw ShapeError("discretize_all: tokens have depth " + std::to_string(x.cols()) +
                         ", parameters expect " + std::to_string(params.token_dim()));
    std::vector<DiscretizedStep> steps;
    steps.reserve(x.rows());
    for (int i = 0; i < x.rows(); ++i) {
        const Selective sel = project(params, x.row(i));
        steps.push_back(zoh_discretize(params.a_kind, params.a, sel.b_raw, sel.c,
                                       softplus(sel.z)));
    }
    return steps;
}

DiscretizedStep discretize(const SsmParams& params, const DenseMatrix& token) {
    params.validate();
    if (token.rows() != 1 || token.cols() != params.token_dim())
        throw ShapeError("discretize: token must be 1 x " + std::to_string(params.token_dim()) +
                         ", got " + token.shape_str());
    const Selective sel = project(params, token);
    return zoh_discretize(params.a_kind, params.a, sel.b_raw, sel.c, softplus(sel.z));
}

ScanTrace scan_with_trace(const SsmParams& params, const TokenSequence& x, bool reverse,
                          bool masked, bool residual) {
    params.validate();
    if (x.cols() != params.token_dim())
        throw ShapeError("scan: tokens have depth " + std::to_string(x.cols()) +
                         ", parameters expect " + std::to_string(params.token_dim()));
    if (x.rows() < 1) throw ShapeError("scan: token sequence is empty");

    const int n = x.rows();
    const int d = x.cols();
    const int s = params.state_dim();
    const bool diag = params.a_kind == AKind::Diagonal;

    ScanTrace tr;
    tr.reverse = reverse;
    tr.masked = masked;
    tr.residual = residual;
    tr.n = n;
    tr.state_dim = s;
    tr.token_dim = d;
    tr.steps.resize(n);
    tr.z.resize(n);
    tr.b_raw.resize(n);
    tr.hidden.assign(n, DenseMatrix());
    if (residual) tr.resid.assign(n, DenseMatrix());
    tr.processed_sum.assign(n, DenseMatrix());
    tr.tap.assign(n, DenseMatrix());
    tr.y = DenseMatrix(n, d);

    DenseMatrix h(s, d);
    DenseMatrix r(s, d);
    DenseMatrix run_sum(1, d);
    for (int k = 0; k < n; ++k) {
        const int pos = reverse ? n - 1 - k : k;
        const DenseMatrix token = x.row(pos);
        const Selective sel = project(params, token);
        const DiscretizedStep step =
            zoh_discretize(params.a_kind, params.a, sel.b_raw, sel.c, softplus(sel.z));

        if (diag) {
            for (int i = 0; i < s; ++i) {
                const double ab = step.a_bar(i, 0);
                const double bb = step.b_bar(i, 0);
                for (int j = 0; j < d; ++j) h(i, j) = ab * h(i, j) + bb * token(0, j);
            }
            if (residual)
                for (int i = 0; i < s; ++i) {
                    const double ab = step.a_bar(i, 0);
                    for (int j = 0; j < d; ++j) r(i, j) = ab * (r(i, j) + run_sum(0, j));
                }
        } else {
            h = matmul(step.a_bar, h);
            for (int i = 0; i < s; ++i)
                for (int j = 0; j < d; ++j) h(i, j) += step.b_bar(i, 0) * token(0, j);
            if (residual) {
                DenseMatrix fed = r;
                for (int i = 0; i < s; ++i)
                    for (int j = 0; j < d; ++j) fed(i, j) += run_sum(0, j);
                r = matmul(step.a_bar, fed);
            }
        }

        DenseMatrix tap = residual ? h + r : h;
        if (masked)
            for (int i = 0; i < s; ++i)
                for (int j = 0; j < d; ++j) tap(i, j) -= step.b_bar(i, 0) * token(0, j);

        for (int j = 0; j < d; ++j) {
            double acc = 0.0;
            for (int i = 0; i < s; ++i) acc += step.c(0, i) * tap(i, j);
            tr.y(pos, j) = acc;
        }

        tr.processed_sum[pos] = run_sum;
        for (int j = 0; j < d; ++j) run_sum(0, j) += token(0, j);

        tr.hidden[pos] = h;
        if (residual) tr.resid[pos] = r;
        tr.tap[pos] = std::move(tap);
        tr.steps[pos] = step;
        tr.z[pos] = sel.z;
        tr.b_raw[pos] = sel.b_raw;
    }
    return tr;
}

namespace {

ScanOutput to_output(ScanTrace&& tr) {
    ScanOutput out;
    out.hidden = std::move(tr.tap);
    out.y = std::move(tr.y);
    return out;
}

}  // namespace

ScanOutput scan_forward(const SsmParams& params, const TokenSequence& x) {
    return to_output(scan_with_trace(params, x, false, false, false));
}

ScanOutput scan_backward(const SsmParams& params, const TokenSequence& x) {
    return to_output(scan_with_trace(params, x, true, false, false));
}

ScanOutput scan_combined(const SsmParams& params_f, const SsmParams& params_b,
                         const TokenSequence& x, bool masked, bool residual) {
    if (params_f.state_dim() != params_b.state_dim() ||
        params_f.token_dim() != params_b.token_dim())
        throw ShapeError("scan_combined: forward and backward parameter shapes disagree");
    ScanTrace fwd = scan_with_trace(params_f, x, false, false, residual);
    ScanTrace bwd = scan_with_trace(params_b, x, true, masked, residual);
    ScanOutput out;
    out.y = fwd.y + bwd.y;
    out.hidden.reserve(x.rows());
    for (int i = 0; i < x.rows(); ++i) out.hidden.push_back(fwd.tap[i] + bwd.tap[i]);
    return out;
}

ScanOutput scan_bidirectional(const SsmParams& params_f, const SsmParams& params_b,
                              const TokenSequence& x, bool masked) {
    return scan_combined(params_f, params_b, x, masked, false);
}

ScanOutput scan_forward_residual(const SsmParams& params, const TokenSequence& x) {
    return to_output(scan_with_trace(params, x, false, false, true));
}

TokenSequence scan_block(const SsmParams& params_f, const SsmParams& params_b,
                         const TokenSequence& x) {
    return scan_combined(params_f, params_b, x, true, true).y;
}

ScanGrads scan_adjoint(const SsmParams& params, const TokenSequence& x, const ScanTrace& trace,
                       const DenseMatrix& y_bar) {
    if (params.a_kind != AKind::Diagonal)
        throw ArgumentError("scan_adjoint: only diagonal A is differentiable");
    params.validate();
    const int n = trace.n;
    const int d = trace.token_dim;
    const int s = trace.state_dim;
    if (x.rows() != n || x.cols() != d)
        throw ShapeError("scan_adjoint: sequence " + x.shape_str() + " does not match the trace");
    if (y_bar.rows() != n || y_bar.cols() != d)
        throw ShapeError("scan_adjoint: y_bar " + y_bar.shape_str() + " does not match the trace");

    ScanGrads g;
    g.x = DenseMatrix(n, d);
    g.a = DenseMatrix(s, 1);
    g.w_b = DenseMatrix(s, d);
    g.w_c = DenseMatrix(s, d);
    g.w_delta = DenseMatrix(1, d);

    // carries from the step processed after this one
    DenseMatrix h_carry(s, d);
    DenseMatrix r_carry(s, d);
    // sum of sigma gradients of later-processed steps; each token's grad
    // picks this up before its own sigma gradient joins, because a token
    // only feeds the running sums of strictly later steps
    DenseMatrix acc_sigma(1, d);

    for (int k = n - 1; k >= 0; --k) {
        const int pos = trace.reverse ? n - 1 - k : k;
        const int prev = k > 0 ? (trace.reverse ? n - k : k - 1) : -1;
        const DiscretizedStep& step = trace.steps[pos];
        const DenseMatrix token = x.row(pos);

        // y_pos = c * tap
        DenseMatrix cbar(1, s);
        DenseMatrix tapbar(s, d);
        for (int i = 0; i < s; ++i) {
            double cacc = 0.0;
            for (int j = 0; j < d; ++j) {
                tapbar(i, j) = step.c(0, i) * y_bar(pos, j);
                cacc += y_bar(pos, j) * trace.tap[pos](i, j);
            }
            cbar(0, i) = cacc;
        }

        DenseMatrix hbar = tapbar + h_carry;
        DenseMatrix bbar(s, 1);

        if (trace.masked) {
            // tap subtracts b_bar (outer) token
            for (int i = 0; i < s; ++i) {
                double acc = 0.0;
                for (int j = 0; j < d; ++j) acc += tapbar(i, j) * token(0, j);
                bbar(i, 0) -= acc;
            }
            for (int j = 0; j < d; ++j) {
                double acc = 0.0;
                for (int i = 0; i < s; ++i) acc += tapbar(i, j) * step.b_bar(i, 0);
                g.x(pos, j) -= acc;
            }
        }

        // h_t = a_bar . h_prev + b_bar (outer) token
        DenseMatrix abar(s, 1);
        const DenseMatrix* hprev = prev >= 0 ? &trace.hidden[prev] : nullptr;
        for (int i = 0; i < s; ++i) {
            double aacc = 0.0, bacc = 0.0;
            for (int j = 0; j < d; ++j) {
                if (hprev) aacc += hbar(i, j) * (*hprev)(i, j);
                bacc += hbar(i, j) * token(0, j);
            }
            abar(i, 0) = aacc;
            bbar(i, 0) += bacc;
        }
        for (int j = 0; j < d; ++j) {
            double acc = 0.0;
            for (int i = 0; i < s; ++i) acc += hbar(i, j) * step.b_bar(i, 0);
            g.x(pos, j) += acc;
        }
        for (int i = 0; i < s; ++i)
            for (int j = 0; j < d; ++j) h_carry(i, j) = step.a_bar(i, 0) * hbar(i, j);

        if (trace.residual) {
            // r_t = a_bar . (r_prev + ones (outer) sigma)
            DenseMatrix rbar = tapbar + r_carry;
            const DenseMatrix& sigma = trace.processed_sum[pos];
            const DenseMatrix* rprev = prev >= 0 ? &trace.resid[prev] : nullptr;
            for (int i = 0; i < s; ++i) {
                double aacc = 0.0;
                for (int j = 0; j < d; ++j) {
                    const double rp = rprev ? (*rprev)(i, j) : 0.0;
                    aacc += rbar(i, j) * (rp + sigma(0, j));
                    r_carry(i, j) = step.a_bar(i, 0) * rbar(i, j);
                }
                abar(i, 0) += aacc;
            }
            for (int j = 0; j < d; ++j) {
                g.x(pos, j) += acc_sigma(0, j);
                double sacc = 0.0;
                for (int i = 0; i < s; ++i) sacc += r_carry(i, j);
                acc_sigma(0, j) += sacc;
            }
        }

        // discretization chain rules, same branch as the forward
        const double delta = step.delta;
        double norm = 0.0;
        for (int i = 0; i < s; ++i) norm = std::max(norm, std::abs(delta * params.a(i, 0)));
        const bool series = norm < kSeriesThreshold;
        double dbar = 0.0;
        DenseMatrix brawbar(s, 1);
        for (int i = 0; i < s; ++i) {
            const double av = params.a(i, 0);
            const double z = delta * av;
            const double expz = step.a_bar(i, 0);
            const double braw = trace.b_raw[pos](i, 0);
            dbar += abar(i, 0) * expz * av;
            g.a(i, 0) += abar(i, 0) * expz * delta;
            const double p1 = phi1(z, series);
            const double p1g = phi1_grad(z, series);
            dbar += bbar(i, 0) * (p1g * av * delta + p1) * braw;
            g.a(i, 0) += bbar(i, 0) * p1g * delta * delta * braw;
            brawbar(i, 0) = bbar(i, 0) * p1 * delta;
        }

        // selective projections
        for (int i = 0; i < s; ++i)
            for (int j = 0; j < d; ++j) {
                g.w_b(i, j) += brawbar(i, 0) * token(0, j);
                g.w_c(i, j) += cbar(0, i) * token(0, j);
            }
        for (int j = 0; j < d; ++j) {
            double acc = 0.0;
            for (int i = 0; i < s; ++i)
                acc += brawbar(i, 0) * params.w_b(i, j) + cbar(0, i) * params.w_c(i, j);
            g.x(pos, j) += acc;
        }

        // delta = softplus(z), z = w_delta . token + bias
        const double zbar = dbar * sigmoid(trace.z[pos]);
        for (int j = 0; j < d; ++j) {
            g.w_delta(0, j) += zbar * token(0, j);
            g.x(pos, j) += zbar * params.w_delta(0, j);
        }
        g.delta_bias += zbar;
    }
    return g;
}

SsmParams random_params(Rng& rng, int state_dim, int token_dim, AKind kind) {
    SsmParams p;
    p.a_kind = kind;
    if (kind == AKind::Diagonal) {
        p.a = DenseMatrix(state_dim, 1);
        for (int k = 0; k < state_dim; ++k) p.a(k, 0) = rng.uniform(-1.5, -0.1);
    } else {
        p.a = DenseMatrix(state_dim, state_dim);
        for (int i = 0; i < state_dim; ++i)
            for (int j = 0; j < state_dim; ++j)
                p.a(i, j) = i == j ? rng.uniform(-1.5, -0.5) : rng.uniform(-0.1, 0.1);
    }
    p.w_b = DenseMatrix(state_dim, token_dim);
    p.w_c = DenseMatrix(state_dim, token_dim);
    p.w_delta = DenseMatrix(1, token_dim);
    for (int i = 0; i < state_dim; ++i)
        for (int j = 0; j < token_dim; ++j) {
            p.w_b(i, j) = rng.uniform(-1.0, 1.0);
            p.w_c(i, j) = rng.uniform(-1.0, 1.0);
        }
    for (int j = 0; j < token_dim; ++j) p.w_delta(0, j) = rng.uniform(-0.5, 0.5);
    p.delta_bias = rng.uniform(-1.0, 1.0);
    return p;
}

TokenSequence random_tokens(Rng& rng, int n, int token_dim) {
    TokenSequence x(n, token_dim);
    for (int i = 0; i < n; ++i)
        for (int j = 0; j < token_dim; ++j) x(i, j) = rng.uniform(-1.0, 1.0);
    return x;
}

}  // namespace vmp::ssm
