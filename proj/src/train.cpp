#include "vmp/train.hpp"

#include <chrono>
#include <cmath>
#include <numbers>
#include <string>
#include <utility>
#include <vector>

#include "vmp/errors.hpp"
#include "vmp/reports.hpp"

namespace vmp::train {

ModelVars make_vars(ad::Tape& tape, const model::ModelParams& params) {
    ModelVars vars;
    const auto put = [&](const DenseMatrix& m) {
        const ad::Var v = tape.leaf(m);
        vars.ordered.push_back(v);
        return v;
    };
    const auto put_scalar = [&](double s) {
        DenseMatrix m(1, 1);
        m(0, 0) = s;
        return put(m);
    };
    // creation order mirrors model::for_each_param so tape gradients and
    // parameter storage can be walked with one shared offset
    vars.patch_w = put(params.patch_w);
    vars.patch_b = put(params.patch_b);
    vars.cls = put(params.cls);
    vars.pos_spatial = put(params.pos_spatial);
    vars.pos_temporal = put(params.pos_temporal);
    for (const auto& blk : params.blocks) {
        BlockVars bv;
        bv.norm_scale = put(blk.norm_scale);
        bv.w_in = put(blk.w_in);
        bv.conv_w = put(blk.conv_w);
        bv.conv_b = put(blk.conv_b);
        for (auto [src, dst] : {std::pair{&blk.fwd, &bv.fwd}, std::pair{&blk.bwd, &bv.bwd}}) {
            dst->a = put(src->a);
            dst->w_b = put(src->w_b);
            dst->w_c = put(src->w_c);
            dst->w_delta = put(src->w_delta);
            dst->delta_bias = put_scalar(src->delta_bias);
        }
        bv.w_out = put(blk.w_out);
        vars.blocks.push_back(bv);
    }
    vars.final_norm_scale = put(params.final_norm_scale);
    vars.head_w = put(params.head_w);
    vars.head_b = put(params.head_b);
    return vars;
}

ad::Var taped_logits(ad::Tape& tape, const ModelVars& vars, const model::ModelConfig& config,
                     const model::VideoTensor& video) {
    if (vars.blocks.size() != static_cast<std::size_t>(config.depth)) {
        throw ShapeError("taped_logits: " + std::to_string(vars.blocks.size()) +
                         " taped blocks for depth " + std::to_string(config.depth));
    }
    const ad::Var rows = tape.leaf(model::video_patch_rows(config, video));
    const ad::Var patches =
        tape.broadcast_add_row(tape.matmul_nt(rows, vars.patch_w), vars.patch_b);
    const int n = config.sequence_length();
    const int ppf = config.patches_per_frame();
    std::vector<int> s_index(n + 1, 0), t_index(n + 1, 0);
    for (int l = 0; l < n; ++l) {
        s_index[l + 1] = l % ppf + 1;
        t_index[l + 1] = l / ppf;
    }
    ad::Var x = tape.positional_add(tape.concat_rows(vars.cls, patches), vars.pos_spatial,
                                    vars.pos_temporal, s_index, t_index);
    for (const BlockVars& blk : vars.blocks) {
        const ad::Var u = tape.layernorm_rows(x, blk.norm_scale);
        const ad::Var widened = tape.matmul_nt(u, blk.w_in);
        const ad::Var mixed =
            tape.silu(tape.causal_depthwise_conv(widened, blk.conv_w, blk.conv_b));
        const ad::Var scanned = tape.scan(mixed, blk.fwd, blk.bwd, config.mask_backward,
                                          config.residual_connections);
        x = tape.add(x, tape.matmul_nt(scanned, blk.w_out));
    }
    const ad::Var pooled = tape.layernorm_rows(tape.slice_row(x, 0), vars.final_norm_scale);
    return tape.broadcast_add_row(tape.matmul_nt(pooled, vars.head_w), vars.head_b);
}

const char* task_name(TaskKind kind) {
    switch (kind) {
        case TaskKind::Interleaved: return "interleaved";
        case TaskKind::PrefixMajority: return "prefix-majority";
        case TaskKind::NoiseControl: return "noise";
    }
    throw ArgumentError("task_name: unknown task kind");
}

TaskKind task_from_name(const std::string& name) {
    if (name == "interleaved") return TaskKind::Interleaved;
    if (name == "prefix-majority") return TaskKind::PrefixMajority;
    if (name == "noise") return TaskKind::NoiseControl;
    throw ArgumentError("unknown task '" + name +
                        "', expected interleaved, prefix-majority, or noise");
}

namespace {

// substream indices far outside the 2*index/2*index+1 sample space
constexpr std::uint64_t kPrototypeStream = 0x8000000000000000ull;

}  // namespace

SyntheticTask::SyntheticTask(TaskKind kind, const model::ModelConfig& geometry,
                             std::uint64_t seed)
    : kind_(kind), geometry_(geometry), seed_(seed) {
    geometry_.validate();
    if (geometry_.classes < 2) {
        throw ConfigError("synthetic tasks emit two classes; the config allows " +
                          std::to_string(geometry_.classes));
    }
    if (kind_ == TaskKind::Interleaved) {
        const int n = geometry_.sequence_length();
        if (n < 2) throw ConfigError("the interleaved task needs at least two patch tokens");
        // one anchor early, one late, distractor patches between them; with
        // more than one output frame this also puts them in different frames
        anchor_a_ = n >= 4 ? 1 : 0;
        anchor_b_ = n - 2 > anchor_a_ ? n - 2 : n - 1;
        Rng proto_rng = Rng(seed_).stream(kPrototypeStream);
        prototype_.resize(geometry_.patch_values());
        for (double& v : prototype_) v = proto_rng.uniform_int(0, 1) * 2 - 1;
    }
}

Sample SyntheticTask::train_sample(std::uint64_t index) const {
    return make(Rng(seed_).stream(2 * index));
}

Sample SyntheticTask::val_sample(std::uint64_t index) const {
    return make(Rng(seed_).stream(2 * index + 1));
}

namespace {

/// overwrite one patch with sign * prototype plus low-amplitude jitter; the
/// column order matches model::video_patch_rows
void write_patch(model::VideoTensor& video, const model::ModelConfig& cfg, int token,
                 const std::vector<double>& prototype, int sign, Rng& rng) {
    const int ppf = cfg.patches_per_frame();
    const int frame_out = token / ppf;
    const int cell = token % ppf;
    const int py = cell / cfg.grid_w();
    const int px = cell % cfg.grid_w();
    std::size_t col = 0;
    for (int ch = 0; ch < cfg.in_channels; ++ch)
        for (int dt = 0; dt < cfg.patch_t; ++dt)
            for (int yy = 0; yy < cfg.patch_h; ++yy)
                for (int xx = 0; xx < cfg.patch_w; ++xx) {
                    video.at(frame_out * cfg.patch_t + dt, ch, py * cfg.patch_h + yy,
                             px * cfg.patch_w + xx) =
                        sign * prototype[col++] + 0.25 * rng.uniform(-1.0, 1.0);
                }
}

}  // namespace

Sample SyntheticTask::make(Rng rng) const {
    Sample s;
    s.label = rng.uniform_int(0, 1);
    s.video = model::VideoTensor(geometry_.frames, geometry_.in_channels, geometry_.height,
                                 geometry_.width);
    for (double& v : s.video.data) v = rng.uniform(-1.0, 1.0);
    switch (kind_) {
        case TaskKind::NoiseControl:
            break;
        case TaskKind::PrefixMajority: {
            // label shifts the mean of every first-output-frame pixel, so the
            // class is readable from the prefix of the token sequence
            const double shift = s.label == 1 ? 0.4 : -0.4;
            for (int t = 0; t < geometry_.patch_t; ++t)
                for (int c = 0; c < geometry_.in_channels; ++c)
                    for (int y = 0; y < geometry_.height; ++y)
                        for (int x = 0; x < geometry_.width; ++x) s.video.at(t, c, y, x) += shift;
            break;
        }
        case TaskKind::Interleaved: {
            // each anchor is +-prototype with equal probability under both
            // labels; only whether the two signs agree carries the class
            const int sign = rng.uniform_int(0, 1) * 2 - 1;
            write_patch(s.video, geometry_, anchor_a_, prototype_, sign, rng);
            write_patch(s.video, geometry_, anchor_b_, prototype_,
                        s.label == 1 ? sign : -sign, rng);
            break;
        }
    }
    return s;
}

void TrainConfig::validate() const {
    model.validate();
    if (model.classes < 2) throw ConfigError("training needs at least two classes");
    if (steps <= 0) throw ConfigError("steps must be positive");
    if (batch_size <= 0 || train_size <= 0 || val_size <= 0)
        throw ConfigError("batch_size, train_size, and val_size must be positive");
    if (eval_every <= 0) throw ConfigError("eval_every must be positive");
    if (!(lr > 0.0)) throw ConfigError("lr must be positive");
    if (weight_decay < 0.0) throw ConfigError("weight_decay must be nonnegative");
    if (!(beta1 >= 0.0 && beta1 < 1.0) || !(beta2 >= 0.0 && beta2 < 1.0))
        throw ConfigError("betas must lie in [0, 1)");
    if (!(adam_eps > 0.0)) throw ConfigError("adam_eps must be positive");
}

std::string config_hash(const TrainConfig& config) { return reports::config_hash(config); }

Metrics evaluate_validation(const model::ModelParams& params, const SyntheticTask& task,
                            int count) {
    if (count <= 0) throw ArgumentError("evaluate_validation: count must be positive");
    Metrics m;
    for (int i = 0; i < count; ++i) {
        const Sample s = task.val_sample(static_cast<std::uint64_t>(i));
        const DenseMatrix logits = model::forward_logits(params, s.video);
        m.loss += model::cross_entropy(logits, s.label);
        m.accuracy += model::argmax_row(logits) == s.label ? 1.0 : 0.0;
    }
    m.loss /= count;
    m.accuracy /= count;
    return m;
}

namespace {

struct BatchResult {
    double loss = 0.0;
    double accuracy = 0.0;
    std::vector<double> grads;  // flat, for_each_param order
};

BatchResult batch_step(const model::ModelParams& params, const TrainConfig& cfg,
                       const SyntheticTask& task, int step) {
    ad::Tape tape;
    const ModelVars vars = make_vars(tape, params);
    ad::Var total{};
    BatchResult out;
    for (int b = 0; b < cfg.batch_size; ++b) {
        const std::uint64_t index =
            (static_cast<std::uint64_t>(step) * cfg.batch_size + b) %
            static_cast<std::uint64_t>(cfg.train_size);
        const Sample s = task.train_sample(index);
        const ad::Var logits = taped_logits(tape, vars, params.config, s.video);
        out.accuracy += model::argmax_row(tape.value(logits)) == s.label ? 1.0 : 0.0;
        const ad::Var ce = tape.cross_entropy_with_logits(logits, s.label);
        total = b == 0 ? ce : tape.add(total, ce);
    }
    const ad::Var loss = tape.scale(total, 1.0 / cfg.batch_size);
    out.loss = tape.value(loss)(0, 0);
    out.accuracy /= cfg.batch_size;
    if (!std::isfinite(out.loss)) {
        throw DomainError("training diverged: non-finite loss at step " + std::to_string(step));
    }
    tape.backward(loss);
    for (const ad::Var v : vars.ordered) {
        const DenseMatrix& g = tape.grad(v);
        out.grads.insert(out.grads.end(), g.values().begin(), g.values().end());
    }
    return out;
}

/// AdamW with decoupled weight decay and cosine learning-rate decay.
class AdamW {
public:
    AdamW(const TrainConfig& cfg, std::size_t count)
        : cfg_(cfg), m_(count, 0.0), v_(count, 0.0) {}

    void apply(model::ModelParams& params, const std::vector<double>& grads) {
        if (grads.size() != m_.size())
            throw ShapeError("optimizer: gradient length " + std::to_string(grads.size()) +
                             " does not match parameter count " + std::to_string(m_.size()));
        ++t_;
        // cosine decay from full lr at the first update toward zero
        const double progress = static_cast<double>(t_ - 1) / cfg_.steps;
        const double lr = cfg_.lr * 0.5 * (1.0 + std::cos(std::numbers::pi * progress));
        const double bc1 = 1.0 - std::pow(cfg_.beta1, t_);
        const double bc2 = 1.0 - std::pow(cfg_.beta2, t_);
        std::size_t off = 0;
        model::for_each_param(params, [&](const model::ParamRef& ref) {
            for (std::size_t k = 0; k < ref.count; ++k) {
                const double g = grads[off + k];
                if (!std::isfinite(g))
                    throw DomainError("training diverged: non-finite gradient in " + ref.name);
                double& m = m_[off + k];
                double& v = v_[off + k];
                m = cfg_.beta1 * m + (1.0 - cfg_.beta1) * g;
                v = cfg_.beta2 * v + (1.0 - cfg_.beta2) * g * g;
                const double update = (m / bc1) / (std::sqrt(v / bc2) + cfg_.adam_eps);
                double& p = ref.values[k];
                p -= lr * update;
                if (ref.decay) p -= lr * cfg_.weight_decay * p;
            }
            off += ref.count;
        });
    }

private:
    TrainConfig cfg_;
    int t_ = 0;
    std::vector<double> m_;
    std::vector<double> v_;
};

}  // namespace

TrainReport train(const TrainConfig& config, model::ModelParams* learned) {
    config.validate();
    const auto started = std::chrono::steady_clock::now();

    Rng root(config.seed);
    Rng init_rng = root.stream(0);
    model::ModelParams params = model::init_params(config.model, init_rng);
    const SyntheticTask task(config.task, config.model, root.stream(1).seed());

    TrainReport report;
    report.seed = config.seed;
    report.config_hash = config_hash(config);

    AdamW opt(config, model::param_count(params));
    double last_loss = 0.0;
    double last_accuracy = 0.0;
    for (int step = 0; step < config.steps; ++step) {
        const BatchResult batch = batch_step(params, config, task, step);
        last_loss = batch.loss;
        last_accuracy = batch.accuracy;
        if (step % config.eval_every == 0) {
            const Metrics val = evaluate_validation(params, task, config.val_size);
            report.history.push_back(
                EvalPoint{step, batch.loss, batch.accuracy, val.loss, val.accuracy});
        }
        opt.apply(params, batch.grads);
    }
    const Metrics final_val = evaluate_validation(params, task, config.val_size);
    report.history.push_back(
        EvalPoint{config.steps, last_loss, last_accuracy, final_val.loss, final_val.accuracy});
    report.final_train_loss = last_loss;
    report.final_val_accuracy = final_val.accuracy;
    report.wall_seconds =
        std::chrono::duration<double>(std::chrono::steady_clock::now() - started).count();
    if (learned) *learned = std::move(params);
    return report;
}

AblationReport ablate(const TrainConfig& base, const std::vector<std::uint64_t>& seeds) {
    if (seeds.empty()) throw ArgumentError("ablate: need at least one seed");
    const auto started = std::chrono::steady_clock::now();

    // row order and reference scores follow the published four-way table
    struct Row {
        bool mask;
        bool residual;
        double reference;
    };
    const Row rows[] = {{false, false, 82.4}, {true, false, 83.6},
                        {false, true, 83.0}, {true, true, 84.0}};

    AblationReport report;
    report.seeds = seeds;
    {
        TrainConfig baseline = base;
        baseline.model.mask_backward = false;
        baseline.model.residual_connections = false;
        report.config_hash = config_hash(baseline);
    }
    for (const Row& row : rows) {
        VariantResult variant;
        variant.mask_backward = row.mask;
        variant.residual_connections = row.residual;
        variant.reference_top1 = row.reference;
        for (const std::uint64_t seed : seeds) {
            TrainConfig cfg = base;
            cfg.seed = seed;
            cfg.model.mask_backward = row.mask;
            cfg.model.residual_connections = row.residual;
            const TrainReport run = train(cfg);
            variant.accuracies.push_back(run.final_val_accuracy);
            variant.step0_losses.push_back(run.history.front().train_loss);
        }
        double mean = 0.0;
        for (const double a : variant.accuracies) mean += a;
        variant.mean_accuracy = mean / static_cast<double>(variant.accuracies.size());
        report.variants.push_back(std::move(variant));
    }
    report.wall_seconds =
        std::chrono::duration<double>(std::chrono::steady_clock::now() - started).count();
    return report;
}

}  // namespace vmp::train
