#pragma once

#include <functional>
#include <vector>

#include "vmp/dense_matrix.hpp"
#include "vmp/ssm.hpp"

namespace vmp::ad {

/// Handle into a Tape. Valid only for the tape that produced it.
struct Var {
    int id = -1;
};

/// The five leaves of one scan direction's parameters; delta_bias is 1 x 1.
struct SsmVars {
    Var a;
    Var w_b;
    Var w_c;
    Var w_delta;
    Var delta_bias;
};

/// Single-use reverse-mode tape over DenseMatrix values.
///
/// Every op records its inputs and a hand-written adjoint; backward() runs
/// the adjoints once in reverse creation order. Values are computed eagerly
/// with the same library primitives the plain model forward uses, so taped
/// values match untaped ones bit for bit.
class Tape {
public:
    Tape() = default;
    Tape(const Tape&) = delete;
    Tape& operator=(const Tape&) = delete;

    Var leaf(DenseMatrix value);

    const DenseMatrix& value(Var v) const;
    const DenseMatrix& grad(Var v) const;
    int size() const { return static_cast<int>(nodes_.size()); }

    Var add(Var a, Var b);
    Var hadamard(Var a, Var b);
    Var scale(Var a, double factor);
    Var matmul(Var a, Var b);
    /// a * b^T, the projection idiom used throughout the model
    Var matmul_nt(Var a, Var b);
    /// adds a 1 x C row to every row of x
    Var broadcast_add_row(Var x, Var row);
    Var concat_rows(Var top, Var bottom);
    Var slice_row(Var x, int row);
    Var silu(Var x);
    /// scale-only row layernorm, same epsilon as the model
    Var layernorm_rows(Var x, Var scale);
    Var causal_depthwise_conv(Var x, Var w, Var b);
    /// x plus gathered position rows: row r picks spatial slot s_index[r]
    /// and temporal slot t_index[r]
    Var positional_add(Var x, Var pos_spatial, Var pos_temporal, std::vector<int> s_index,
                       std::vector<int> t_index);
    /// combined two-direction selective scan, diagonal A; masked drops the
    /// reverse pass's self term so it is counted once across directions
    Var scan(Var x, const SsmVars& fwd, const SsmVars& bwd, bool masked, bool residual);
    /// softmax(x Wq^T (x Wk^T)^T / sqrt(P)) (x Wv^T), the dense reference mixer
    Var self_attention(Var x, Var w_q, Var w_k, Var w_v);
    /// -log softmax(logits)[label] as a 1 x 1 node
    Var cross_entropy_with_logits(Var logits, int label);
    Var sum_all(Var x);

    /// Seeds d(loss)/d(loss) = 1 and accumulates gradients into every node.
    /// loss must be 1 x 1; callable once per tape.
    void backward(Var loss);

private:
    struct Node {
        DenseMatrix value;
        DenseMatrix grad;
        std::function<void()> back;  // empty for leaves
    };

    Var push(DenseMatrix value, std::function<void()> back);
    const Node& node(Var v) const;
    DenseMatrix& grad_ref(Var v) { return nodes_[check(v)].grad; }
    int check(Var v) const;

    std::vector<Node> nodes_;
    bool swept_ = false;
};

}  // namespace vmp::ad
