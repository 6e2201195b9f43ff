#include "vmp/tape.hpp"

#include <cmath>
#include <string>
#include <utility>

#include "vmp/errors.hpp"
#include "vmp/model.hpp"
#include "vmp/oracle.hpp"

namespace vmp::ad {

namespace {

void require_same_shape(const DenseMatrix& a, const DenseMatrix& b, const char* op) {
    if (!a.same_shape(b)) {
        throw ShapeError(std::string(op) + ": shapes " + a.shape_str() + " and " + b.shape_str() +
                         " differ");
    }
}

// grad buffers accumulate in place; shapes are fixed at node creation
void acc(DenseMatrix& into, const DenseMatrix& g) {
    for (int r = 0; r < into.rows(); ++r) {
        for (int c = 0; c < into.cols(); ++c) into(r, c) += g(r, c);
    }
}

}  // namespace

int Tape::check(Var v) const {
    if (v.id < 0 || v.id >= static_cast<int>(nodes_.size())) {
        throw ArgumentError("tape: variable id " + std::to_string(v.id) + " is not on this tape");
    }
    return v.id;
}

const Tape::Node& Tape::node(Var v) const { return nodes_[check(v)]; }

const DenseMatrix& Tape::value(Var v) const { return node(v).value; }

const DenseMatrix& Tape::grad(Var v) const { return node(v).grad; }

Var Tape::push(DenseMatrix value, std::function<void()> back) {
    DenseMatrix zero(value.rows(), value.cols());
    nodes_.push_back(Node{std::move(value), std::move(zero), std::move(back)});
    return Var{static_cast<int>(nodes_.size()) - 1};
}

Var Tape::leaf(DenseMatrix value) { return push(std::move(value), {}); }

Var Tape::add(Var a, Var b) {
    require_same_shape(value(a), value(b), "add");
    DenseMatrix out = value(a) + value(b);
    return push(std::move(out), [this, a = a.id, b = b.id, out_id = size()] {
        const DenseMatrix& g = nodes_[out_id].grad;
        acc(nodes_[a].grad, g);
        acc(nodes_[b].grad, g);
    });
}

Var Tape::hadamard(Var a, Var b) {
    require_same_shape(value(a), value(b), "hadamard");
    DenseMatrix out = vmp::hadamard(value(a), value(b));
    return push(std::move(out), [this, a = a.id, b = b.id, out_id = size()] {
        const DenseMatrix& g = nodes_[out_id].grad;
        acc(nodes_[a].grad, vmp::hadamard(g, nodes_[b].value));
        acc(nodes_[b].grad, vmp::hadamard(g, nodes_[a].value));
    });
}

Var Tape::scale(Var a, double factor) {
    DenseMatrix out = vmp::scale(value(a), factor);
    return push(std::move(out), [this, a = a.id, factor, out_id = size()] {
        acc(nodes_[a].grad, vmp::scale(nodes_[out_id].grad, factor));
    });
}

Var Tape::matmul(Var a, Var b) {
    DenseMatrix out = vmp::matmul(value(a), value(b));
    return push(std::move(out), [this, a = a.id, b = b.id, out_id = size()] {
        const DenseMatrix& g = nodes_[out_id].grad;
        acc(nodes_[a].grad, vmp::matmul(g, transpose(nodes_[b].value)));
        acc(nodes_[b].grad, vmp::matmul(transpose(nodes_[a].value), g));
    });
}

Var Tape::matmul_nt(Var a, Var b) {
    DenseMatrix out = vmp::matmul(value(a), transpose(value(b)));
    return push(std::move(out), [this, a = a.id, b = b.id, out_id = size()] {
        const DenseMatrix& g = nodes_[out_id].grad;
        acc(nodes_[a].grad, vmp::matmul(g, nodes_[b].value));
        acc(nodes_[b].grad, vmp::matmul(transpose(g), nodes_[a].value));
    });
}

Var Tape::broadcast_add_row(Var x, Var row) {
    const DenseMatrix& xv = value(x);
    const DenseMatrix& rv = value(row);
    if (rv.rows() != 1 || rv.cols() != xv.cols()) {
        throw ShapeError("broadcast_add_row: row is " + rv.shape_str() + ", need 1x" +
                         std::to_string(xv.cols()));
    }
    DenseMatrix out = xv;
    for (int r = 0; r < out.rows(); ++r) {
        for (int c = 0; c < out.cols(); ++c) out(r, c) += rv(0, c);
    }
    return push(std::move(out), [this, x = x.id, row = row.id, out_id = size()] {
        const DenseMatrix& g = nodes_[out_id].grad;
        acc(nodes_[x].grad, g);
        DenseMatrix& rg = nodes_[row].grad;
        for (int r = 0; r < g.rows(); ++r) {
            for (int c = 0; c < g.cols(); ++c) rg(0, c) += g(r, c);
        }
    });
}

Var Tape::concat_rows(Var top, Var bottom) {
    const DenseMatrix& tv = value(top);
    const DenseMatrix& bv = value(bottom);
    if (tv.cols() != bv.cols()) {
        throw ShapeError("concat_rows: column counts " + std::to_string(tv.cols()) + " and " +
                         std::to_string(bv.cols()) + " differ");
    }
    DenseMatrix out(tv.rows() + bv.rows(), tv.cols());
    for (int r = 0; r < tv.rows(); ++r) {
        for (int c = 0; c < tv.cols(); ++c) out(r, c) = tv(r, c);
    }
    for (int r = 0; r < bv.rows(); ++r) {
        for (int c = 0; c < bv.cols(); ++c) out(tv.rows() + r, c) = bv(r, c);
    }
    const int split = tv.rows();
    return push(std::move(out), [this, top = top.id, bottom = bottom.id, split, out_id = size()] {
        const DenseMatrix& g = nodes_[out_id].grad;
        DenseMatrix& tg = nodes_[top].grad;
        DenseMatrix& bg = nodes_[bottom].grad;
        for (int r = 0; r < split; ++r) {
            for (int c = 0; c < g.cols(); ++c) tg(r, c) += g(r, c);
        }
        for (int r = split; r < g.rows(); ++r) {
            for (int c = 0; c < g.cols(); ++c) bg(r - split, c) += g(r, c);
        }
    });
}

Var Tape::slice_row(Var x, int row) {
    const DenseMatrix& xv = value(x);
    if (row < 0 || row >= xv.rows()) {
        throw ArgumentError("slice_row: row " + std::to_string(row) + " out of range for " +
                            xv.shape_str());
    }
    DenseMatrix out = xv.row(row);
    return push(std::move(out), [this, x = x.id, row, out_id = size()] {
        const DenseMatrix& g = nodes_[out_id].grad;
        DenseMatrix& xg = nodes_[x].grad;
        for (int c = 0; c < g.cols(); ++c) xg(row, c) += g(0, c);
    });
}

Var Tape::silu(Var x) {
    DenseMatrix out = vmp::silu(value(x));
    return push(std::move(out), [this, x = x.id, out_id = size()] {
        const DenseMatrix& g = nodes_[out_id].grad;
        const DenseMatrix& xv = nodes_[x].value;
        DenseMatrix& xg = nodes_[x].grad;
        for (int r = 0; r < xv.rows(); ++r) {
            for (int c = 0; c < xv.cols(); ++c) {
                const double s = sigmoid(xv(r, c));
                xg(r, c) += g(r, c) * s * (1.0 + xv(r, c) * (1.0 - s));
            }
        }
    });
}

Var Tape::layernorm_rows(Var x, Var scale) {
    DenseMatrix out = model::layernorm_rows(value(x), value(scale));
    return push(std::move(out), [this, x = x.id, scale = scale.id, out_id = size()] {
        const DenseMatrix& g = nodes_[out_id].grad;
        const DenseMatrix& xv = nodes_[x].value;
        const DenseMatrix& sv = nodes_[scale].value;
        DenseMatrix& xg = nodes_[x].grad;
        DenseMatrix& sg = nodes_[scale].grad;
        const int cols = xv.cols();
        for (int r = 0; r < xv.rows(); ++r) {
            double mean = 0.0;
            for (int c = 0; c < cols; ++c) mean += xv(r, c);
            mean /= cols;
            double var = 0.0;
            for (int c = 0; c < cols; ++c) {
                const double d = xv(r, c) - mean;
                var += d * d;
            }
            var /= cols;
            const double inv = 1.0 / std::sqrt(var + model::kNormEps);
            // gp = grad through the gain, i.e. w.r.t. the normalized row
            double gp_mean = 0.0;
            double gpx_mean = 0.0;
            for (int c = 0; c < cols; ++c) {
                const double xhat = (xv(r, c) - mean) * inv;
                const double gp = g(r, c) * sv(0, c);
                sg(0, c) += g(r, c) * xhat;
                gp_mean += gp;
                gpx_mean += gp * xhat;
            }
            gp_mean /= cols;
            gpx_mean /= cols;
            for (int c = 0; c < cols; ++c) {
                const double xhat = (xv(r, c) - mean) * inv;
                const double gp = g(r, c) * sv(0, c);
                xg(r, c) += inv * (gp - gp_mean - xhat * gpx_mean);
            }
        }
    });
}

Var Tape::causal_depthwise_conv(Var x, Var w, Var b) {
    DenseMatrix out = model::causal_depthwise_conv(value(x), value(w), value(b));
    return push(std::move(out), [this, x = x.id, w = w.id, b = b.id, out_id = size()] {
        const DenseMatrix& g = nodes_[out_id].grad;
        const DenseMatrix& xv = nodes_[x].value;
        const DenseMatrix& wv = nodes_[w].value;
        DenseMatrix& xg = nodes_[x].grad;
        DenseMatrix& wg = nodes_[w].grad;
        DenseMatrix& bg = nodes_[b].grad;
        const int k = wv.cols();
        for (int l = 0; l < xv.rows(); ++l) {
            for (int e = 0; e < xv.cols(); ++e) {
                const double ge = g(l, e);
                bg(0, e) += ge;
                for (int i = 0; i < k; ++i) {
                    const int src = l - (k - 1) + i;
                    if (src < 0) continue;
                    xg(src, e) += wv(e, i) * ge;
                    wg(e, i) += xv(src, e) * ge;
                }
            }
        }
    });
}

Var Tape::positional_add(Var x, Var pos_spatial, Var pos_temporal, std::vector<int> s_index,
                         std::vector<int> t_index) {
    const DenseMatrix& xv = value(x);
    const DenseMatrix& psv = value(pos_spatial);
    const DenseMatrix& ptv = value(pos_temporal);
    if (static_cast<int>(s_index.size()) != xv.rows() ||
        static_cast<int>(t_index.size()) != xv.rows()) {
        throw ArgumentError("positional_add: need one spatial and one temporal index per row");
    }
    if (psv.cols() != xv.cols() || ptv.cols() != xv.cols()) {
        throw ShapeError("positional_add: position tables must match token width " +
                         std::to_string(xv.cols()));
    }
    for (int r = 0; r < xv.rows(); ++r) {
        if (s_index[r] < 0 || s_index[r] >= psv.rows() || t_index[r] < 0 ||
            t_index[r] >= ptv.rows()) {
            throw ArgumentError("positional_add: position index out of range at row " +
                                std::to_string(r));
        }
    }
    DenseMatrix out(xv.rows(), xv.cols());
    for (int r = 0; r < xv.rows(); ++r) {
        for (int c = 0; c < xv.cols(); ++c) {
            out(r, c) = xv(r, c) + psv(s_index[r], c) + ptv(t_index[r], c);
        }
    }
    return push(std::move(out), [this, x = x.id, ps = pos_spatial.id, pt = pos_temporal.id,
                                 s_index = std::move(s_index), t_index = std::move(t_index),
                                 out_id = size()] {
        const DenseMatrix& g = nodes_[out_id].grad;
        DenseMatrix& xg = nodes_[x].grad;
        DenseMatrix& psg = nodes_[ps].grad;
        DenseMatrix& ptg = nodes_[pt].grad;
        for (int r = 0; r < g.rows(); ++r) {
            for (int c = 0; c < g.cols(); ++c) {
                xg(r, c) += g(r, c);
                psg(s_index[r], c) += g(r, c);
                ptg(t_index[r], c) += g(r, c);
            }
        }
    });
}

namespace {

ssm::SsmParams params_from_vars(const Tape& tape, const SsmVars& vars) {
    ssm::SsmParams p;
    p.a_kind = ssm::AKind::Diagonal;
    p.a = tape.value(vars.a);
    p.w_b = tape.value(vars.w_b);
    p.w_c = tape.value(vars.w_c);
    p.w_delta = tape.value(vars.w_delta);
    const DenseMatrix& bias = tape.value(vars.delta_bias);
    if (bias.rows() != 1 || bias.cols() != 1) {
        throw ShapeError("scan: delta_bias leaf must be 1x1, got " + bias.shape_str());
    }
    p.delta_bias = bias(0, 0);
    return p;
}

}  // namespace

Var Tape::scan(Var x, const SsmVars& fwd, const SsmVars& bwd, bool masked, bool residual) {
    ssm::SsmParams pf = params_from_vars(*this, fwd);
    ssm::SsmParams pb = params_from_vars(*this, bwd);
    const DenseMatrix& xv = value(x);
    // the mask drops the self term of the reverse pass only, so each token's
    // diagonal contribution is counted once across the two directions
    ssm::ScanTrace trace_f = ssm::scan_with_trace(pf, xv, false, false, residual);
    ssm::ScanTrace trace_b = ssm::scan_with_trace(pb, xv, true, masked, residual);
    DenseMatrix out = trace_f.y + trace_b.y;
    return push(std::move(out),
                [this, x = x.id, fwd, bwd, pf = std::move(pf), pb = std::move(pb),
                 trace_f = std::move(trace_f), trace_b = std::move(trace_b), out_id = size()] {
                    const DenseMatrix& g = nodes_[out_id].grad;
                    const DenseMatrix& xv = nodes_[x].value;
                    const ssm::ScanGrads gf = ssm::scan_adjoint(pf, xv, trace_f, g);
                    const ssm::ScanGrads gb = ssm::scan_adjoint(pb, xv, trace_b, g);
                    acc(nodes_[x].grad, gf.x);
                    acc(nodes_[x].grad, gb.x);
                    acc(nodes_[fwd.a.id].grad, gf.a);
                    acc(nodes_[fwd.w_b.id].grad, gf.w_b);
                    acc(nodes_[fwd.w_c.id].grad, gf.w_c);
                    acc(nodes_[fwd.w_delta.id].grad, gf.w_delta);
                    nodes_[fwd.delta_bias.id].grad(0, 0) += gf.delta_bias;
                    acc(nodes_[bwd.a.id].grad, gb.a);
                    acc(nodes_[bwd.w_b.id].grad, gb.w_b);
                    acc(nodes_[bwd.w_c.id].grad, gb.w_c);
                    acc(nodes_[bwd.w_delta.id].grad, gb.w_delta);
                    nodes_[bwd.delta_bias.id].grad(0, 0) += gb.delta_bias;
                });
}

Var Tape::self_attention(Var x, Var w_q, Var w_k, Var w_v) {
    oracle::AttentionRef ref{value(w_q), value(w_k), value(w_v)};
    oracle::AttentionOutput fwd = oracle::self_attention(ref, value(x));
    DenseMatrix scores = std::move(fwd.s);
    return push(std::move(fwd.y),
                [this, x = x.id, w_q = w_q.id, w_k = w_k.id, w_v = w_v.id,
                 scores = std::move(scores), out_id = size()] {
                    const DenseMatrix& g = nodes_[out_id].grad;
                    const DenseMatrix& xv = nodes_[x].value;
                    const DenseMatrix& qw = nodes_[w_q].value;
                    const DenseMatrix& kw = nodes_[w_k].value;
                    const DenseMatrix& vw = nodes_[w_v].value;
                    const DenseMatrix q = vmp::matmul(xv, transpose(qw));
                    const DenseMatrix k = vmp::matmul(xv, transpose(kw));
                    const DenseMatrix v = vmp::matmul(xv, transpose(vw));
                    const DenseMatrix vbar = vmp::matmul(transpose(scores), g);
                    const DenseMatrix sbar = vmp::matmul(g, transpose(v));
                    // softmax rows: ebar = s . (sbar - <sbar, s>) per row
                    DenseMatrix ebar(scores.rows(), scores.cols());
                    for (int r = 0; r < scores.rows(); ++r) {
                        double dot = 0.0;
                        for (int c = 0; c < scores.cols(); ++c) dot += sbar(r, c) * scores(r, c);
                        for (int c = 0; c < scores.cols(); ++c) {
                            ebar(r, c) = scores(r, c) * (sbar(r, c) - dot);
                        }
                    }
                    const double inv_sqrt = 1.0 / std::sqrt(static_cast<double>(qw.rows()));
                    const DenseMatrix qbar = vmp::scale(vmp::matmul(ebar, k), inv_sqrt);
                    const DenseMatrix kbar = vmp::scale(vmp::matmul(transpose(ebar), q), inv_sqrt);
                    acc(nodes_[x].grad, vmp::matmul(qbar, qw));
                    acc(nodes_[x].grad, vmp::matmul(kbar, kw));
                    acc(nodes_[x].grad, vmp::matmul(vbar, vw));
                    acc(nodes_[w_q].grad, vmp::matmul(transpose(qbar), xv));
                    acc(nodes_[w_k].grad, vmp::matmul(transpose(kbar), xv));
                    acc(nodes_[w_v].grad, vmp::matmul(transpose(vbar), xv));
                });
}

Var Tape::cross_entropy_with_logits(Var logits, int label) {
    const DenseMatrix& lv = value(logits);
    DenseMatrix out(1, 1);
    out(0, 0) = model::cross_entropy(lv, label);
    return push(std::move(out), [this, logits = logits.id, label, out_id = size()] {
        const double g = nodes_[out_id].grad(0, 0);
        const DenseMatrix& lv = nodes_[logits].value;
        DenseMatrix p = softmax_rows(lv);
        p(0, label) -= 1.0;
        acc(nodes_[logits].grad, vmp::scale(p, g));
    });
}

Var Tape::sum_all(Var x) {
    DenseMatrix out(1, 1);
    out(0, 0) = vmp::sum(value(x));
    return push(std::move(out), [this, x = x.id, out_id = size()] {
        const double g = nodes_[out_id].grad(0, 0);
        DenseMatrix& xg = nodes_[x].grad;
        for (int r = 0; r < xg.rows(); ++r) {
            for (int c = 0; c < xg.cols(); ++c) xg(r, c) += g;
        }
    });
}

void Tape::backward(Var loss) {
    if (swept_) throw ArgumentError("tape: backward may only run once per tape");
    const DenseMatrix& lv = value(loss);
    if (lv.rows() != 1 || lv.cols() != 1) {
        throw ShapeError("tape: backward needs a 1x1 loss, got " + lv.shape_str());
    }
    swept_ = true;
    nodes_[check(loss)].grad(0, 0) = 1.0;
    for (auto it = nodes_.rbegin(); it != nodes_.rend(); ++it) {
        if (it->back) it->back();
    }
}

}  // namespace vmp::ad
