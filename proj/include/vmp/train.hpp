#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "vmp/model.hpp"
#include "vmp/rng.hpp"
#include "vmp/tape.hpp"

namespace vmp::train {

/// Taped mirror of one block's parameters.
struct BlockVars {
    ad::Var norm_scale;
    ad::Var w_in;
    ad::Var conv_w;
    ad::Var conv_b;
    ad::SsmVars fwd;
    ad::SsmVars bwd;
    ad::Var w_out;
};

/// Taped mirror of ModelParams. `ordered` lists every leaf in the same order
/// model::for_each_param visits them, which is what lets the optimizer walk
/// tape gradients and parameter storage with one shared offset.
struct ModelVars {
    ad::Var patch_w;
    ad::Var patch_b;
    ad::Var cls;
    ad::Var pos_spatial;
    ad::Var pos_temporal;
    std::vector<BlockVars> blocks;
    ad::Var final_norm_scale;
    ad::Var head_w;
    ad::Var head_b;
    std::vector<ad::Var> ordered;
};

ModelVars make_vars(ad::Tape& tape, const model::ModelParams& params);

/// Taped replica of model::forward_logits; values agree bit for bit.
ad::Var taped_logits(ad::Tape& tape, const ModelVars& vars, const model::ModelConfig& config,
                     const model::VideoTensor& video);

enum class TaskKind { Interleaved, PrefixMajority, NoiseControl };

const char* task_name(TaskKind kind);
TaskKind task_from_name(const std::string& name);  // ArgumentError on unknown names

struct Sample {
    model::VideoTensor video;
    int label = 0;
};

/// Deterministic synthetic clip generator. Every sample is a pure function of
/// (task seed, split, index), so runs that share a seed see identical data
/// regardless of evaluation order.
///
/// Interleaved hides the label in whether two anchor patches, placed in
/// different frames with distractor patches between them, carry the same or
/// the opposite sign of one fixed prototype. Each anchor's marginal
/// distribution is sign-symmetric and identical across classes; only the
/// cross-position sign agreement is informative. PrefixMajority shifts every
/// first-frame pixel by a label-dependent mean, so the class can be read off
/// the prefix of the token sequence. NoiseControl has no signal at all.
class SyntheticTask {
public:
    SyntheticTask(TaskKind kind, const model::ModelConfig& geometry, std::uint64_t seed);

    Sample train_sample(std::uint64_t index) const;
    Sample val_sample(std::uint64_t index) const;

    TaskKind kind() const { return kind_; }
    int classes() const { return 2; }
    // anchor token positions (0-based patch index) used by the interleaved task
    int anchor_a() const { return anchor_a_; }
    int anchor_b() const { return anchor_b_; }

private:
    Sample make(Rng rng) const;

    TaskKind kind_;
    model::ModelConfig geometry_;
    std::uint64_t seed_;
    std::vector<double> prototype_;
    int anchor_a_ = 0;
    int anchor_b_ = 0;
};

struct TrainConfig {
    model::ModelConfig model;
    TaskKind task = TaskKind::Interleaved;
    std::uint64_t seed = 1;
    int steps = 200;
    int batch_size = 16;
    int train_size = 256;
    int val_size = 200;
    int eval_every = 50;
    double lr = 1e-3;
    double weight_decay = 0.01;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double adam_eps = 1e-8;

    void validate() const;
};

/// FNV-1a over the canonical JSON dump of every field above; two configs hash
/// equal exactly when every training-relevant setting matches.
std::string config_hash(const TrainConfig& config);

struct EvalPoint {
    int step = 0;
    double train_loss = 0.0;
    double train_accuracy = 0.0;
    double val_loss = 0.0;
    double val_accuracy = 0.0;
};

struct TrainReport {
    std::uint64_t seed = 0;
    std::string config_hash;
    std::vector<EvalPoint> history;  // step 0, every eval_every, and the last step
    double final_train_loss = 0.0;
    double final_val_accuracy = 0.0;
    double wall_seconds = 0.0;  // measured; never part of canonical serializations
};

struct Metrics {
    double loss = 0.0;
    double accuracy = 0.0;
};

Metrics evaluate_validation(const model::ModelParams& params, const SyntheticTask& task,
                            int count);

/// AdamW with decoupled weight decay (applied only where ParamRef.decay) and
/// cosine learning-rate decay over cfg.steps. Deterministic given the seed;
/// throws DomainError if the loss leaves the finite range.
TrainReport train(const TrainConfig& config, model::ModelParams* learned = nullptr);

struct VariantResult {
    bool mask_backward = false;
    bool residual_connections = false;
    double reference_top1 = 0.0;  // published full-scale score, metadata only
    std::vector<double> accuracies;
    std::vector<double> step0_losses;
    double mean_accuracy = 0.0;
};

/// Four-row toggle study: baseline, mask only, residual only, both. Each row
/// reruns the same seeds with identical data order, so rows differ only in
/// the scan path. reference_top1 carries the published full-scale numbers for
/// context; they are not reproducible at this scale.
struct AblationReport {
    std::vector<std::uint64_t> seeds;
    std::vector<VariantResult> variants;
    std::string config_hash;  // hash of the baseline-variant config
    double wall_seconds = 0.0;
};

AblationReport ablate(const TrainConfig& base, const std::vector<std::uint64_t>& seeds);

}  // namespace vmp::train
