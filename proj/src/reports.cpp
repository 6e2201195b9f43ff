#include "vmp/reports.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <functional>
#include <string>
#include <utility>
#include <vector>

#include "vmp/errors.hpp"
#include "vmp/finite_diff.hpp"
#include "vmp/model_json.hpp"
#include "vmp/rng.hpp"
#include "vmp/tape.hpp"
#include "vmp/tensor_io.hpp"

namespace vmp::reports {

namespace fs = std::filesystem;

std::uint64_t fnv1a64(std::string_view text) {
    std::uint64_t h = 14695981039346656037ull;
    for (const unsigned char c : text) {
        h ^= c;
        h *= 1099511628211ull;
    }
    return h;
}

nlohmann::ordered_json train_config_to_json(const train::TrainConfig& config) {
    return nlohmann::ordered_json{{"model", model::config_to_json(config.model)},
                                  {"task", train::task_name(config.task)},
                                  {"seed", config.seed},
                                  {"steps", config.steps},
                                  {"batch_size", config.batch_size},
                                  {"train_size", config.train_size},
                                  {"val_size", config.val_size},
                                  {"eval_every", config.eval_every},
                                  {"lr", config.lr},
                                  {"weight_decay", config.weight_decay},
                                  {"beta1", config.beta1},
                                  {"beta2", config.beta2},
                                  {"adam_eps", config.adam_eps}};
}

train::TrainConfig train_config_from_json(const nlohmann::json& j) {
    if (!j.is_object()) throw ConfigError("train config must be a JSON object");
    train::TrainConfig c;
    for (const auto& [key, value] : j.items()) {
        try {
            if (key == "model") c.model = model::config_from_json(value);
            else if (key == "task") c.task = train::task_from_name(value.get<std::string>());
            else if (key == "seed") c.seed = value.get<std::uint64_t>();
            else if (key == "steps") c.steps = value.get<int>();
            else if (key == "batch_size") c.batch_size = value.get<int>();
            else if (key == "train_size") c.train_size = value.get<int>();
            else if (key == "val_size") c.val_size = value.get<int>();
            else if (key == "eval_every") c.eval_every = value.get<int>();
            else if (key == "lr") c.lr = value.get<double>();
            else if (key == "weight_decay") c.weight_decay = value.get<double>();
            else if (key == "beta1") c.beta1 = value.get<double>();
            else if (key == "beta2") c.beta2 = value.get<double>();
            else if (key == "adam_eps") c.adam_eps = value.get<double>();
            else throw ConfigError("train config: unknown key '" + key + "'");
        } catch (const nlohmann::json::exception&) {
            throw ConfigError("train config: key '" + key + "' has the wrong type");
        } catch (const ArgumentError& e) {
            throw ConfigError("train config: " + std::string(e.what()));
        }
    }
    return c;
}

std::string config_hash(const train::TrainConfig& config) {
    char buf[17];
    std::snprintf(buf, sizeof(buf), "%016llx",
                  static_cast<unsigned long long>(fnv1a64(train_config_to_json(config).dump())));
    return buf;
}

Check make_check(std::string name, double max_error, double tolerance) {
    Check c;
    c.name = std::move(name);
    c.max_error = max_error;
    c.tolerance = tolerance;
    c.pass = max_error <= tolerance;
    return c;
}

namespace {

std::string format_double(double v) {
    char buf[32];
    std::snprintf(buf, sizeof(buf), "%.17g", v);
    return buf;
}

nlohmann::ordered_json checks_json(const std::vector<Check>& checks) {
    nlohmann::ordered_json arr = nlohmann::ordered_json::array();
    for (const Check& c : checks) {
        arr.push_back({{"name", c.name},
                       {"max_error", c.max_error},
                       {"tolerance", c.tolerance},
                       {"pass", c.pass}});
    }
    return arr;
}

bool all_pass(const std::vector<Check>& checks) {
    return std::all_of(checks.begin(), checks.end(), [](const Check& c) { return c.pass; });
}

DenseMatrix random_matrix(Rng& rng, int rows, int cols, double lo = -1.0, double hi = 1.0) {
    DenseMatrix m(rows, cols);
    for (int r = 0; r < rows; ++r)
        for (int c = 0; c < cols; ++c) m(r, c) = rng.uniform(lo, hi);
    return m;
}

/// residue of the elementwise residual recurrence m_ij = A_i m_{i-1,j} + A_i
/// on a forward residual table (the dense mode reads A_i's row sums)
double residual_law_residue(const oracle::SimilarityMatrix& m,
                            const std::vector<ssm::DiscretizedStep>& steps) {
    double worst = 0.0;
    const int n = m.n();
    const int s = m.state_dim();
    for (int i = 1; i < n; ++i) {
        const ssm::DiscretizedStep& st = steps[static_cast<std::size_t>(i)];
        for (int j = 0; j < i; ++j) {
            for (int k = 0; k < s; ++k) {
                double applied = 0.0;
                double row_sum = 0.0;
                if (st.a_kind == ssm::AKind::Diagonal) {
                    applied = st.a_bar(k, 0) * m.at(i - 1, j, k);
                    row_sum = st.a_bar(k, 0);
                } else {
                    for (int k2 = 0; k2 < s; ++k2) {
                        applied += st.a_bar(k, k2) * m.at(i - 1, j, k2);
                        row_sum += st.a_bar(k, k2);
                    }
                }
                worst = std::max(worst, std::abs(m.at(i, j, k) - (applied + row_sum)));
            }
        }
    }
    return worst;
}

double strict_upper_mass(const oracle::SimilarityMatrix& m) {
    double worst = 0.0;
    for (int i = 0; i < m.n(); ++i)
        for (int j = i + 1; j < m.n(); ++j)
            for (int k = 0; k < m.state_dim(); ++k)
                worst = std::max(worst, std::abs(m.at(i, j, k)));
    return worst;
}

double strict_lower_mass(const oracle::SimilarityMatrix& m) {
    double worst = 0.0;
    for (int i = 0; i < m.n(); ++i)
        for (int j = 0; j < i; ++j)
            for (int k = 0; k < m.state_dim(); ++k)
                worst = std::max(worst, std::abs(m.at(i, j, k)));
    return worst;
}

/// token-indexed self-attention evaluated entry by entry, no matrix calls;
/// the independent counterpart of the library's matrix-form evaluation
DenseMatrix attention_by_summation(const oracle::AttentionRef& ref, const TokenSequence& x) {
    const int n = x.rows();
    const int d = x.cols();
    const int p = ref.w_q.rows();
    const auto dot_proj = [&](const DenseMatrix& w, int token, int out) {
        double acc = 0.0;
        for (int c = 0; c < d; ++c) acc += x(token, c) * w(out, c);
        return acc;
    };
    DenseMatrix y(n, p);
    const double inv_sqrt = 1.0 / std::sqrt(static_cast<double>(p));
    for (int i = 0; i < n; ++i) {
        std::vector<double> weights(static_cast<std::size_t>(n));
        double denom = 0.0;
        for (int j = 0; j < n; ++j) {
            double e = 0.0;
            for (int pp = 0; pp < p; ++pp) e += dot_proj(ref.w_q, i, pp) * dot_proj(ref.w_k, j, pp);
            weights[static_cast<std::size_t>(j)] = std::exp(e * inv_sqrt);
            denom += weights[static_cast<std::size_t>(j)];
        }
        for (int j = 0; j < n; ++j) {
            const double w = weights[static_cast<std::size_t>(j)] / denom;
            for (int pp = 0; pp < p; ++pp) y(i, pp) += w * dot_proj(ref.w_v, j, pp);
        }
    }
    return y;
}

}  // namespace

VerifyReport run_verify(int cases, std::uint64_t seed) {
    if (cases <= 0) throw ArgumentError("run_verify: cases must be positive");
    const Rng root(seed);

    oracle::EquivalenceGaps gaps;
    double residual_law = 0.0;
    double forward_upper = 0.0;
    double backward_lower = 0.0;
    double masked_diag_law = 0.0;
    double masked_offdiag_law = 0.0;
    double single_token = 0.0;
    double tap_identity = 0.0;
    double attention_equation = 0.0;
    double attention_commutation = 0.0;

    for (int i = 0; i < cases; ++i) {
        Rng rng = root.stream(static_cast<std::uint64_t>(i));
        const int n = rng.uniform_int(1, 8);
        const int s = rng.uniform_int(1, 4);
        const int d = rng.uniform_int(1, 4);
        const ssm::AKind kind = i % 4 == 3 ? ssm::AKind::Dense : ssm::AKind::Diagonal;
        const ssm::SsmParams pf = ssm::random_params(rng, s, d, kind);
        const ssm::SsmParams pb = ssm::random_params(rng, s, d, kind);
        const TokenSequence x = ssm::random_tokens(rng, n, d);

        const oracle::EquivalenceGaps g = oracle::equivalence_gaps(pf, pb, x);
        gaps.forward = std::max(gaps.forward, g.forward);
        gaps.backward = std::max(gaps.backward, g.backward);
        gaps.bidirectional = std::max(gaps.bidirectional, g.bidirectional);
        gaps.bidirectional_masked = std::max(gaps.bidirectional_masked, g.bidirectional_masked);
        gaps.forward_residual = std::max(gaps.forward_residual, g.forward_residual);
        gaps.block = std::max(gaps.block, g.block);

        const auto steps_f = ssm::discretize_all(pf, x);
        const auto steps_b = ssm::discretize_all(pb, x);
        residual_law =
            std::max(residual_law, residual_law_residue(oracle::build_forward_residual(steps_f),
                                                        steps_f));
        forward_upper = std::max(forward_upper, strict_upper_mass(oracle::build_forward(steps_f)));
        backward_lower =
            std::max(backward_lower, strict_lower_mass(oracle::build_backward(steps_b)));

        // masked table law: diagonal equals the forward diagonal, everything
        // off the diagonal equals the unmasked table
        const oracle::SimilarityMatrix m_f = oracle::build_forward(steps_f);
        const oracle::SimilarityMatrix m_un = oracle::build_bidirectional(steps_f, steps_b, false);
        const oracle::SimilarityMatrix m_ma = oracle::build_bidirectional(steps_f, steps_b, true);
        for (int a = 0; a < n; ++a)
            for (int b = 0; b < n; ++b)
                for (int k = 0; k < s; ++k) {
                    if (a == b) {
                        masked_diag_law = std::max(
                            masked_diag_law, std::abs(m_ma.at(a, b, k) - m_f.at(a, b, k)));
                    } else {
                        masked_offdiag_law = std::max(
                            masked_offdiag_law, std::abs(m_ma.at(a, b, k) - m_un.at(a, b, k)));
                    }
                }

        // one-token collapse: the masked combination reduces to the forward scan
        const TokenSequence x1 = x.row(0);
        single_token = std::max(
            single_token, max_abs_diff(ssm::scan_bidirectional(pf, pb, x1, true).y,
                                       ssm::scan_forward(pf, x1).y));

        // tap identity y_i = c_i hidden_i on the plain forward scan
        const ssm::ScanOutput fwd = ssm::scan_forward(pf, x);
        for (int t = 0; t < n; ++t) {
            tap_identity = std::max(
                tap_identity,
                max_abs_diff(fwd.y.row(t),
                             matmul(steps_f[static_cast<std::size_t>(t)].c,
                                    fwd.hidden[static_cast<std::size_t>(t)])));
        }

        const int p = rng.uniform_int(1, 4);
        const oracle::AttentionRef ref{random_matrix(rng, p, d), random_matrix(rng, p, d),
                                       random_matrix(rng, p, d)};
        const oracle::AttentionOutput attn = oracle::self_attention(ref, x);
        attention_equation =
            std::max(attention_equation, max_abs_diff(attn.y, attention_by_summation(ref, x)));
        attention_commutation = std::max(
            attention_commutation,
            max_abs_diff(matmul(matmul(attn.s, x), transpose(ref.w_v)),
                         matmul(attn.s, matmul(x, transpose(ref.w_v)))));
    }

    // continuity of the two discretization branches at the decision threshold
    double seam = 0.0;
    for (const double z : {ssm::kSeriesThreshold, -ssm::kSeriesThreshold}) {
        seam = std::max(seam, std::abs(ssm::phi1(z, true) - ssm::phi1(z, false)));
    }

    VerifyReport report;
    report.cases = cases;
    report.seed = seed;
    report.checks = {
        make_check("scan_forward_vs_table", gaps.forward, 1e-8),
        make_check("scan_backward_vs_table", gaps.backward, 1e-8),
        make_check("scan_bidirectional_vs_table", gaps.bidirectional, 1e-8),
        make_check("scan_bidirectional_masked_vs_table", gaps.bidirectional_masked, 1e-8),
        make_check("scan_forward_residual_vs_table", gaps.forward_residual, 1e-8),
        make_check("scan_block_vs_table", gaps.block, 1e-8),
        make_check("residual_recurrence_law", residual_law, 1e-12),
        make_check("forward_table_strictly_causal", forward_upper, 0.0),
        make_check("backward_table_strictly_anticausal", backward_lower, 0.0),
        make_check("masked_diagonal_equals_forward", masked_diag_law, 0.0),
        make_check("masked_offdiagonal_unchanged", masked_offdiag_law, 0.0),
        make_check("single_token_masked_collapse", single_token, 0.0),
        make_check("output_tap_identity", tap_identity, 0.0),
        make_check("attention_matrix_vs_summation", attention_equation, 1e-12),
        make_check("attention_projection_commutation", attention_commutation, 1e-12),
        make_check("discretization_branch_seam", seam, 1e-9),
    };
    report.pass = all_pass(report.checks);
    return report;
}

nlohmann::ordered_json to_json(const VerifyReport& report) {
    return nlohmann::ordered_json{{"cases", report.cases},
                                  {"seed", report.seed},
                                  {"checks", checks_json(report.checks)},
                                  {"pass", report.pass}};
}

namespace {

/// scalar-valued taped computation rebuilt from replaceable inputs, shared by
/// the analytic and finite-difference sides of a gradient check
struct TapeFn {
    std::vector<DenseMatrix> inputs;
    std::function<ad::Var(ad::Tape&, const std::vector<ad::Var>&)> build;

    double run(const std::vector<DenseMatrix>& vals,
               std::vector<std::vector<double>>* grads_out) const {
        ad::Tape tape;
        std::vector<ad::Var> leaves;
        leaves.reserve(vals.size());
        for (const auto& v : vals) leaves.push_back(tape.leaf(v));
        const ad::Var loss = build(tape, leaves);
        const double value = tape.value(loss)(0, 0);
        if (grads_out) {
            tape.backward(loss);
            grads_out->clear();
            for (const ad::Var leaf : leaves) grads_out->push_back(tape.grad(leaf).values());
        }
        return value;
    }
};

double worst_rel_err(const TapeFn& fn, double h = 1e-5) {
    std::vector<std::vector<double>> analytic;
    fn.run(fn.inputs, &analytic);
    double worst = 0.0;
    for (std::size_t i = 0; i < fn.inputs.size(); ++i) {
        const int rows = fn.inputs[i].rows();
        const int cols = fn.inputs[i].cols();
        auto f = [&, i](const std::vector<double>& flat) {
            std::vector<DenseMatrix> vals = fn.inputs;
            vals[i] = DenseMatrix(rows, cols, flat);
            return fn.run(vals, nullptr);
        };
        const std::vector<double> fd = finite_diff_grad(f, fn.inputs[i].values(), h);
        worst = std::max(worst, max_rel_err(analytic[i], fd));
    }
    return worst;
}

ad::Var weighted_sum(ad::Tape& tape, ad::Var out, const DenseMatrix& weights) {
    return tape.sum_all(tape.hadamard(out, tape.leaf(weights)));
}

model::ModelConfig shrunk_config() {
    model::ModelConfig cfg;
    cfg.embed_dim = 8;
    cfg.depth = 2;
    cfg.state_dim = 2;
    cfg.classes = 3;
    cfg.frames = 2;
    cfg.in_channels = 3;
    cfg.height = 8;
    cfg.width = 8;
    cfg.patch_t = 1;
    cfg.patch_h = 4;
    cfg.patch_w = 4;
    return cfg;
}

/// end-to-end gradient agreement of the shrunk classifier: analytic tape
/// gradients of every parameter against central differences on the same loss
double model_gradcheck_rel_err(std::uint64_t seed) {
    const model::ModelConfig cfg = shrunk_config();
    Rng rng(seed);
    model::ModelParams params = model::init_params(cfg, rng);
    // nonzero narrowing projections so gradients flow through the scan path
    for (auto& blk : params.blocks) blk.w_out = random_matrix(rng, cfg.embed_dim, cfg.inner_dim(),
                                                              -0.3, 0.3);
    model::VideoTensor video(cfg.frames, cfg.in_channels, cfg.height, cfg.width);
    for (double& v : video.data) v = rng.uniform(-1.0, 1.0);
    const int label = rng.uniform_int(0, cfg.classes - 1);

    std::vector<double> flat;
    model::for_each_param(params, [&](const model::ParamRef& ref) {
        flat.insert(flat.end(), ref.values, ref.values + ref.count);
    });

    const auto scatter = [&](const std::vector<double>& values) {
        model::ModelParams p = params;
        std::size_t off = 0;
        model::for_each_param(p, [&](const model::ParamRef& ref) {
            std::copy(values.begin() + static_cast<std::ptrdiff_t>(off),
                      values.begin() + static_cast<std::ptrdiff_t>(off + ref.count), ref.values);
            off += ref.count;
        });
        return p;
    };

    ad::Tape tape;
    const train::ModelVars vars = train::make_vars(tape, params);
    const ad::Var loss =
        tape.cross_entropy_with_logits(train::taped_logits(tape, vars, cfg, video), label);
    tape.backward(loss);
    std::vector<double> analytic;
    for (const ad::Var v : vars.ordered) {
        const DenseMatrix& g = tape.grad(v);
        analytic.insert(analytic.end(), g.values().begin(), g.values().end());
    }

    const auto f = [&](const std::vector<double>& values) {
        const model::ModelParams p = scatter(values);
        return model::cross_entropy(model::forward_logits(p, video), label);
    };
    const std::vector<double> fd = finite_diff_grad(f, flat, 1e-5);
    return max_rel_err(analytic, fd);
}

}  // namespace

GradcheckReport run_gradcheck(std::uint64_t seed) {
    const Rng root(seed);
    GradcheckReport report;
    report.seed = seed;

    const auto sweep = [&](const std::string& name, int reps,
                           const std::function<TapeFn(Rng&)>& instance) {
        double worst = 0.0;
        for (int r = 0; r < reps; ++r) {
            Rng rng = root.stream(fnv1a64(name) + static_cast<std::uint64_t>(r));
            worst = std::max(worst, worst_rel_err(instance(rng)));
        }
        report.checks.push_back(make_check(name, worst, 1e-4));
    };

    sweep("add", 3, [](Rng& rng) {
        TapeFn fn;
        const DenseMatrix w = random_matrix(rng, 3, 4);
        fn.inputs = {random_matrix(rng, 3, 4), random_matrix(rng, 3, 4)};
        fn.build = [w](ad::Tape& t, const std::vector<ad::Var>& in) {
            return weighted_sum(t, t.add(in[0], in[1]), w);
        };
        return fn;
    });
    sweep("hadamard", 3, [](Rng& rng) {
        TapeFn fn;
        const DenseMatrix w = random_matrix(rng, 3, 4);
        fn.inputs = {random_matrix(rng, 3, 4), random_matrix(rng, 3, 4)};
        fn.build = [w](ad::Tape& t, const std::vector<ad::Var>& in) {
            return weighted_sum(t, t.hadamard(in[0], in[1]), w);
        };
        return fn;
    });
    sweep("scale", 3, [](Rng& rng) {
        TapeFn fn;
        const DenseMatrix w = random_matrix(rng, 3, 4);
        fn.inputs = {random_matrix(rng, 3, 4)};
        fn.build = [w](ad::Tape& t, const std::vector<ad::Var>& in) {
            return weighted_sum(t, t.scale(in[0], -1.7), w);
        };
        return fn;
    });
    sweep("matmul", 3, [](Rng& rng) {
        TapeFn fn;
        const DenseMatrix w = random_matrix(rng, 3, 5);
        fn.inputs = {random_matrix(rng, 3, 4), random_matrix(rng, 4, 5)};
        fn.build = [w](ad::Tape& t, const std::vector<ad::Var>& in) {
            return weighted_sum(t, t.matmul(in[0], in[1]), w);
        };
        return fn;
    });
    sweep("matmul_nt", 3, [](Rng& rng) {
        TapeFn fn;
        const DenseMatrix w = random_matrix(rng, 3, 5);
        fn.inputs = {random_matrix(rng, 3, 4), random_matrix(rng, 5, 4)};
        fn.build = [w](ad::Tape& t, const std::vector<ad::Var>& in) {
            return weighted_sum(t, t.matmul_nt(in[0], in[1]), w);
        };
        return fn;
    });
    sweep("broadcast_add_row", 3, [](Rng& rng) {
        TapeFn fn;
        const DenseMatrix w = random_matrix(rng, 4, 3);
        fn.inputs = {random_matrix(rng, 4, 3), random_matrix(rng, 1, 3)};
        fn.build = [w](ad::Tape& t, const std::vector<ad::Var>& in) {
            return weighted_sum(t, t.broadcast_add_row(in[0], in[1]), w);
        };
        return fn;
    });
    sweep("concat_rows", 3, [](Rng& rng) {
        TapeFn fn;
        const DenseMatrix w = random_matrix(rng, 5, 3);
        fn.inputs = {random_matrix(rng, 2, 3), random_matrix(rng, 3, 3)};
        fn.build = [w](ad::Tape& t, const std::vector<ad::Var>& in) {
            return weighted_sum(t, t.concat_rows(in[0], in[1]), w);
        };
        return fn;
    });
    sweep("slice_row", 3, [](Rng& rng) {
        TapeFn fn;
        const DenseMatrix w = random_matrix(rng, 1, 4);
        const int row = rng.uniform_int(0, 2);
        fn.inputs = {random_matrix(rng, 3, 4)};
        fn.build = [w, row](ad::Tape& t, const std::vector<ad::Var>& in) {
            return weighted_sum(t, t.slice_row(in[0], row), w);
        };
        return fn;
    });
    sweep("silu", 3, [](Rng& rng) {
        TapeFn fn;
        const DenseMatrix w = random_matrix(rng, 3, 4);
        fn.inputs = {random_matrix(rng, 3, 4, -3.0, 3.0)};
        fn.build = [w](ad::Tape& t, const std::vector<ad::Var>& in) {
            return weighted_sum(t, t.silu(in[0]), w);
        };
        return fn;
    });
    sweep("layernorm_rows", 3, [](Rng& rng) {
        TapeFn fn;
        const DenseMatrix w = random_matrix(rng, 3, 5);
        fn.inputs = {random_matrix(rng, 3, 5, -2.0, 2.0), random_matrix(rng, 1, 5, 0.5, 1.5)};
        fn.build = [w](ad::Tape& t, const std::vector<ad::Var>& in) {
            return weighted_sum(t, t.layernorm_rows(in[0], in[1]), w);
        };
        return fn;
    });
    sweep("causal_depthwise_conv", 3, [](Rng& rng) {
        TapeFn fn;
        const DenseMatrix w = random_matrix(rng, 5, 3);
        fn.inputs = {random_matrix(rng, 5, 3), random_matrix(rng, 3, 2),
                     random_matrix(rng, 1, 3)};
        fn.build = [w](ad::Tape& t, const std::vector<ad::Var>& in) {
            return weighted_sum(t, t.causal_depthwise_conv(in[0], in[1], in[2]), w);
        };
        return fn;
    });
    sweep("positional_add", 3, [](Rng& rng) {
        TapeFn fn;
        const DenseMatrix w = random_matrix(rng, 4, 3);
        std::vector<int> s_idx(4), t_idx(4);
        for (int r = 0; r < 4; ++r) {
            s_idx[r] = rng.uniform_int(0, 2);
            t_idx[r] = rng.uniform_int(0, 1);
        }
        fn.inputs = {random_matrix(rng, 4, 3), random_matrix(rng, 3, 3),
                     random_matrix(rng, 2, 3)};
        fn.build = [w, s_idx, t_idx](ad::Tape& t, const std::vector<ad::Var>& in) {
            return weighted_sum(t, t.positional_add(in[0], in[1], in[2], s_idx, t_idx), w);
        };
        return fn;
    });
    sweep("self_attention", 3, [](Rng& rng) {
        TapeFn fn;
        const DenseMatrix w = random_matrix(rng, 4, 3);
        fn.inputs = {random_matrix(rng, 4, 2), random_matrix(rng, 3, 2),
                     random_matrix(rng, 3, 2), random_matrix(rng, 3, 2)};
        fn.build = [w](ad::Tape& t, const std::vector<ad::Var>& in) {
            return weighted_sum(t, t.self_attention(in[0], in[1], in[2], in[3]), w);
        };
        return fn;
    });
    for (const bool masked : {false, true}) {
        for (const bool residual : {false, true}) {
            std::string name = "scan";
            name += masked ? "_masked" : "_plain";
            name += residual ? "_residual" : "";
            sweep(name, 3, [masked, residual](Rng& rng) {
                TapeFn fn;
                const ssm::SsmParams pf = ssm::random_params(rng, 2, 3, ssm::AKind::Diagonal);
                const ssm::SsmParams pb = ssm::random_params(rng, 2, 3, ssm::AKind::Diagonal);
                DenseMatrix bias_f(1, 1), bias_b(1, 1);
                bias_f(0, 0) = pf.delta_bias;
                bias_b(0, 0) = pb.delta_bias;
                const DenseMatrix w = random_matrix(rng, 4, 3);
                fn.inputs = {ssm::random_tokens(rng, 4, 3), pf.a, pf.w_b, pf.w_c, pf.w_delta,
                             bias_f, pb.a, pb.w_b, pb.w_c, pb.w_delta, bias_b};
                fn.build = [w, masked, residual](ad::Tape& t, const std::vector<ad::Var>& in) {
                    const ad::SsmVars vf{in[1], in[2], in[3], in[4], in[5]};
                    const ad::SsmVars vb{in[6], in[7], in[8], in[9], in[10]};
                    return weighted_sum(t, t.scan(in[0], vf, vb, masked, residual), w);
                };
                return fn;
            });
        }
    }
    sweep("cross_entropy_with_logits", 3, [](Rng& rng) {
        TapeFn fn;
        const int label = rng.uniform_int(0, 3);
        fn.inputs = {random_matrix(rng, 1, 4, -2.0, 2.0)};
        fn.build = [label](ad::Tape& t, const std::vector<ad::Var>& in) {
            return t.cross_entropy_with_logits(in[0], label);
        };
        return fn;
    });
    sweep("sum_all", 3, [](Rng& rng) {
        TapeFn fn;
        fn.inputs = {random_matrix(rng, 3, 4)};
        fn.build = [](ad::Tape& t, const std::vector<ad::Var>& in) { return t.sum_all(in[0]); };
        return fn;
    });

    report.checks.push_back(
        make_check("model_end_to_end", model_gradcheck_rel_err(seed), 1e-4));
    report.pass = all_pass(report.checks);
    return report;
}

nlohmann::ordered_json to_json(const GradcheckReport& report) {
    return nlohmann::ordered_json{{"seed", report.seed},
                                  {"checks", checks_json(report.checks)},
                                  {"pass", report.pass}};
}

StructureRun run_structure(int n, std::uint64_t seed) {
    if (n < 2) throw ArgumentError("run_structure: need at least two tokens");
    Rng rng(seed);
    const int s = 4;
    const int d = 4;
    const ssm::SsmParams params = ssm::random_params(rng, s, d, ssm::AKind::Diagonal);
    const TokenSequence x = ssm::random_tokens(rng, n, d);
    const oracle::AttentionRef ref{random_matrix(rng, d, d), random_matrix(rng, d, d),
                                   random_matrix(rng, d, d)};

    StructureRun run;
    run.seed = seed;
    run.n = n;
    run.structure = oracle::compare_structures(oracle::build_forward(ssm::discretize_all(params, x)),
                                               oracle::self_attention(ref, x).s);
    run.pass = run.structure.scan_upper_nonzeros == 0 &&
               run.structure.attention_upper_nonzeros == n * (n - 1) / 2;
    return run;
}

nlohmann::ordered_json to_json(const StructureRun& run) {
    return nlohmann::ordered_json{
        {"seed", run.seed},
        {"n", run.n},
        {"scan_upper_nonzeros", run.structure.scan_upper_nonzeros},
        {"attention_upper_nonzeros", run.structure.attention_upper_nonzeros},
        {"scan_diag_share", run.structure.scan_diag_share},
        {"attention_diag_share", run.structure.attn_diag_share},
        {"scan_history_share", run.structure.scan_history_share},
        {"attention_history_share", run.structure.attn_history_share},
        {"pass", run.pass}};
}

std::string structure_csv(const StructureRun& run) {
    std::string csv = "position,scan_diag_share,attention_diag_share,scan_history_share,"
                      "attention_history_share\n";
    for (int i = 0; i < run.n; ++i) {
        const auto& st = run.structure;
        csv += std::to_string(i) + "," + format_double(st.scan_diag_share[i]) + "," +
               format_double(st.attn_diag_share[i]) + "," +
               format_double(st.scan_history_share[i]) + "," +
               format_double(st.attn_history_share[i]) + "\n";
    }
    return csv;
}

nlohmann::ordered_json to_json(const train::TrainReport& report,
                               const train::TrainConfig& config) {
    nlohmann::ordered_json history = nlohmann::ordered_json::array();
    for (const train::EvalPoint& p : report.history) {
        history.push_back({{"step", p.step},
                           {"train_loss", p.train_loss},
                           {"train_accuracy", p.train_accuracy},
                           {"val_loss", p.val_loss},
                           {"val_accuracy", p.val_accuracy}});
    }
    return nlohmann::ordered_json{{"seed", report.seed},
                                  {"config_hash", report.config_hash},
                                  {"config", train_config_to_json(config)},
                                  {"final_train_loss", report.final_train_loss},
                                  {"final_val_accuracy", report.final_val_accuracy},
                                  {"wall_seconds", report.wall_seconds},
                                  {"history", history}};
}

std::string history_jsonl(const train::TrainReport& report) {
    std::string out;
    for (const train::EvalPoint& p : report.history) {
        out += nlohmann::ordered_json{{"step", p.step},
                                      {"train_loss", p.train_loss},
                                      {"train_accuracy", p.train_accuracy},
                                      {"val_loss", p.val_loss},
                                      {"val_accuracy", p.val_accuracy}}
                   .dump();
        out += "\n";
    }
    return out;
}

std::string metrics_csv(const train::TrainReport& report) {
    std::string csv = "step,train_loss,train_accuracy,val_loss,val_accuracy\n";
    for (const train::EvalPoint& p : report.history) {
        csv += std::to_string(p.step) + "," + format_double(p.train_loss) + "," +
               format_double(p.train_accuracy) + "," + format_double(p.val_loss) + "," +
               format_double(p.val_accuracy) + "\n";
    }
    return csv;
}

namespace {

std::string variant_label(const train::VariantResult& v) {
    if (v.mask_backward && v.residual_connections) return "masked_backward_plus_residual";
    if (v.mask_backward) return "masked_backward_only";
    if (v.residual_connections) return "residual_only";
    return "baseline";
}

}  // namespace

nlohmann::ordered_json to_json(const train::AblationReport& report,
                               const train::TrainConfig& base) {
    nlohmann::ordered_json variants = nlohmann::ordered_json::array();
    for (const train::VariantResult& v : report.variants) {
        variants.push_back({{"label", variant_label(v)},
                            {"mask_backward", v.mask_backward},
                            {"residual_connections", v.residual_connections},
                            {"mean_accuracy", v.mean_accuracy},
                            {"accuracies", v.accuracies},
                            {"step0_losses", v.step0_losses},
                            {"reference_top1_full_scale", v.reference_top1}});
    }
    train::TrainConfig canonical = base;
    canonical.model.mask_backward = false;
    canonical.model.residual_connections = false;
    return nlohmann::ordered_json{
        {"seeds", report.seeds},
        {"config_hash", report.config_hash},
        {"config", train_config_to_json(canonical)},
        {"reference_note", "reference_top1_full_scale repeats published full-scale results for "
                           "context; they are not reproducible at this scale"},
        {"variants", variants}};
}

std::string ablation_csv(const train::AblationReport& report) {
    std::string csv =
        "label,mask_backward,residual_connections,mean_top1,reference_top1_full_scale\n";
    for (const train::VariantResult& v : report.variants) {
        csv += variant_label(v) + "," + (v.mask_backward ? "on" : "off") + "," +
               (v.residual_connections ? "on" : "off") + "," + format_double(v.mean_accuracy) +
               "," + format_double(v.reference_top1) + "\n";
    }
    return csv;
}

namespace {

void write_case_meta(const fs::path& dir, const ssm::SsmParams& pf, bool masked, bool residual) {
    nlohmann::ordered_json meta{
        {"a_kind", pf.a_kind == ssm::AKind::Diagonal ? "diagonal" : "dense"},
        {"masked", masked},
        {"residual", residual}};
    std::ofstream out(dir / "meta.json");
    if (!out) throw ArgumentError("cannot write " + (dir / "meta.json").string());
    out << meta.dump(2) << "\n";
}

void write_direction(const fs::path& dir, const std::string& prefix, const ssm::SsmParams& p) {
    write_matrix((dir / (prefix + "_a.mpt")).string(), p.a);
    write_matrix((dir / (prefix + "_w_b.mpt")).string(), p.w_b);
    write_matrix((dir / (prefix + "_w_c.mpt")).string(), p.w_c);
    write_matrix((dir / (prefix + "_w_delta.mpt")).string(), p.w_delta);
    DenseMatrix bias(1, 1);
    bias(0, 0) = p.delta_bias;
    write_matrix((dir / (prefix + "_delta_bias.mpt")).string(), bias);
}

ssm::SsmParams read_direction(const fs::path& dir, const std::string& prefix, ssm::AKind kind) {
    ssm::SsmParams p;
    p.a_kind = kind;
    p.a = read_matrix((dir / (prefix + "_a.mpt")).string());
    p.w_b = read_matrix((dir / (prefix + "_w_b.mpt")).string());
    p.w_c = read_matrix((dir / (prefix + "_w_c.mpt")).string());
    p.w_delta = read_matrix((dir / (prefix + "_w_delta.mpt")).string());
    p.delta_bias = read_matrix((dir / (prefix + "_delta_bias.mpt")).string())(0, 0);
    return p;
}

/// expected output through the dense coefficient tables, never the scan
DenseMatrix table_output(const ssm::SsmParams& pf, const ssm::SsmParams& pb,
                         const TokenSequence& x, bool masked, bool residual) {
    const auto steps_f = ssm::discretize_all(pf, x);
    const auto steps_b = ssm::discretize_all(pb, x);
    oracle::SimilarityMatrix m_f =
        residual ? oracle::build_forward_residual(steps_f) : oracle::build_forward(steps_f);
    oracle::SimilarityMatrix m_b =
        residual ? oracle::build_backward_residual(steps_b) : oracle::build_backward(steps_b);
    if (masked) m_b = oracle::zero_diagonal(std::move(m_b));
    return oracle::output_combined(m_f, steps_f, m_b, steps_b, x);
}

}  // namespace

void write_scan_fixtures(const std::string& dir, int cases, std::uint64_t seed) {
    if (cases <= 0) throw ArgumentError("write_scan_fixtures: cases must be positive");
    fs::create_directories(dir);
    const Rng root(seed);
    for (int i = 0; i < cases; ++i) {
        Rng rng = root.stream(static_cast<std::uint64_t>(i));
        const int n = rng.uniform_int(1, 6);
        const int s = rng.uniform_int(1, 4);
        const int d = rng.uniform_int(1, 4);
        const ssm::AKind kind = i % 4 == 3 ? ssm::AKind::Dense : ssm::AKind::Diagonal;
        const ssm::SsmParams pf = ssm::random_params(rng, s, d, kind);
        const ssm::SsmParams pb = ssm::random_params(rng, s, d, kind);
        const TokenSequence x = ssm::random_tokens(rng, n, d);
        const bool masked = rng.uniform_int(0, 1) == 1;
        const bool residual = rng.uniform_int(0, 1) == 1;

        char name[16];
        std::snprintf(name, sizeof(name), "case_%03d", i);
        const fs::path case_dir = fs::path(dir) / name;
        fs::create_directories(case_dir);
        write_matrix((case_dir / "x.mpt").string(), x);
        write_direction(case_dir, "fwd", pf);
        write_direction(case_dir, "bwd", pb);
        write_case_meta(case_dir, pf, masked, residual);
        write_matrix((case_dir / "expected_y.mpt").string(),
                     table_output(pf, pb, x, masked, residual));
    }
}

FixtureResult run_fixture_dir(const std::string& dir, double tolerance) {
    if (!fs::is_directory(dir)) throw ArgumentError("run_fixture_dir: no directory " + dir);
    std::vector<fs::path> case_dirs;
    for (const auto& entry : fs::directory_iterator(dir)) {
        if (entry.is_directory() && entry.path().filename().string().rfind("case_", 0) == 0) {
            case_dirs.push_back(entry.path());
        }
    }
    if (case_dirs.empty()) throw ArgumentError("run_fixture_dir: no case_* directories in " + dir);
    std::sort(case_dirs.begin(), case_dirs.end());

    FixtureResult result;
    for (const fs::path& case_dir : case_dirs) {
        std::ifstream meta_in(case_dir / "meta.json");
        if (!meta_in) throw ArgumentError("missing meta.json in " + case_dir.string());
        nlohmann::json meta;
        meta_in >> meta;
        const std::string kind_name = meta.at("a_kind").get<std::string>();
        const ssm::AKind kind =
            kind_name == "dense" ? ssm::AKind::Dense : ssm::AKind::Diagonal;
        const bool masked = meta.at("masked").get<bool>();
        const bool residual = meta.at("residual").get<bool>();
        const ssm::SsmParams pf = read_direction(case_dir, "fwd", kind);
        const ssm::SsmParams pb = read_direction(case_dir, "bwd", kind);
        const TokenSequence x = read_matrix((case_dir / "x.mpt").string());
        const DenseMatrix expected = read_matrix((case_dir / "expected_y.mpt").string());
        const DenseMatrix got = ssm::scan_combined(pf, pb, x, masked, residual).y;
        result.max_gap = std::max(result.max_gap, max_abs_diff(got, expected));
        ++result.cases;
    }
    result.pass = result.max_gap <= tolerance;
    return result;
}

void write_text_file(const std::string& path, const std::string& text) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw ArgumentError("cannot write " + path);
    out << text;
}

}  // namespace vmp::reports
