#pragma once

#include <cstddef>
#include <functional>
#include <string>
#include <vector>

#include "vmp/dense_matrix.hpp"
#include "vmp/rng.hpp"
#include "vmp/ssm.hpp"

namespace vmp::model {

/// Dense video clip, frames x channels x height x width, row-major.
struct VideoTensor {
    int frames = 0;
    int channels = 0;
    int height = 0;
    int width = 0;
    std::vector<double> data;

    VideoTensor() = default;
    VideoTensor(int t, int c, int h, int w);

    double& at(int t, int c, int y, int x) {
        return data[((static_cast<std::size_t>(t) * channels + c) * height + y) * width + x];
    }
    double at(int t, int c, int y, int x) const {
        return data[((static_cast<std::size_t>(t) * channels + c) * height + y) * width + x];
    }
    std::size_t size() const { return data.size(); }
};

/// Classifier geometry and switches. The clip geometry is fixed at
/// construction time because the positional tables are sized from it.
struct ModelConfig {
    int embed_dim = 192;  // token depth C
    int depth = 24;       // block count K
    int state_dim = 16;   // scan state S
    int classes = 400;
    int frames = 2;
    int in_channels = 3;
    int height = 32;
    int width = 32;
    int patch_t = 1;
    int patch_h = 16;
    int patch_w = 16;
    int conv_kernel = 4;  // causal depthwise token conv width

    // ablation switches for the per-block scan
    bool mask_backward = true;
    bool residual_connections = true;

    int inner_dim() const { return 2 * embed_dim; }
    int frames_out() const { return frames / patch_t; }
    int grid_h() const { return height / patch_h; }
    int grid_w() const { return width / patch_w; }
    int patches_per_frame() const { return grid_h() * grid_w(); }
    int sequence_length() const { return frames_out() * patches_per_frame(); }
    std::size_t patch_values() const {
        return static_cast<std::size_t>(in_channels) * patch_t * patch_h * patch_w;
    }

    // throws ConfigError unless every extent divides evenly and is positive
    void validate() const;
};

/// The three reference sizes; geometry fields keep their defaults and can be
/// adjusted after the call.
ModelConfig tiny_config();
ModelConfig small_config();
ModelConfig middle_config();

/// One residual block: scale-only pre-norm, widening projection, causal
/// depthwise token conv with silu, two-direction scan, narrowing projection,
/// additive skip.
struct BlockParams {
    DenseMatrix norm_scale;  // 1 x C
    DenseMatrix w_in;        // E x C
    DenseMatrix conv_w;      // E x k
    DenseMatrix conv_b;      // 1 x E
    ssm::SsmParams fwd;      // token_dim E
    ssm::SsmParams bwd;
    DenseMatrix w_out;       // C x E
};

struct ModelParams {
    ModelConfig config;
    DenseMatrix patch_w;       // C x patch_values
    DenseMatrix patch_b;       // 1 x C
    DenseMatrix cls;           // 1 x C
    DenseMatrix pos_spatial;   // (patches_per_frame + 1) x C, slot 0 is the cls slot
    DenseMatrix pos_temporal;  // frames_out x C
    std::vector<BlockParams> blocks;
    DenseMatrix final_norm_scale;  // 1 x C
    DenseMatrix head_w;            // classes x C
    DenseMatrix head_b;            // 1 x classes
};

/// Scale-only row layernorm shared by the model and the training graph:
/// y = scale . (x - mean) / sqrt(var + kNormEps) per row.
inline constexpr double kNormEps = 1e-5;
DenseMatrix layernorm_rows(const DenseMatrix& x, const DenseMatrix& norm_scale);

/// Causal depthwise convolution over the token axis: output token l of
/// channel e mixes tokens l-k+1 .. l with kernel w(e, .), missing history
/// reads as zero. Followed nowhere; callers add bias and nonlinearity.
DenseMatrix causal_depthwise_conv(const DenseMatrix& x, const DenseMatrix& w,
                                  const DenseMatrix& b);

/// Uniform fan-in initialization for the weights; the block output
/// projections start at zero so every ablation variant shares its step-0
/// loss, the evolution parameters start negative, and the timescale biases
/// start in softplus^-1([0.01, 0.1]).
ModelParams init_params(const ModelConfig& config, Rng& rng);

/// Flattened patch values, one row per token: frame-major, then grid rows,
/// then grid columns; each row is the patch voxel block in channel, frame
/// offset, y, x order.
DenseMatrix video_patch_rows(const ModelConfig& config, const VideoTensor& video);

/// Linear patch embedding of one clip, sequence_length x C.
TokenSequence patchify(const ModelParams& params, const VideoTensor& video);

/// Class token prepended, then positions: token 0 gets spatial slot 0 and
/// temporal slot 0; patch l = t * patches_per_frame + s gets spatial slot
/// s + 1 and temporal slot t.
TokenSequence embed(const ModelParams& params, const TokenSequence& patches);

/// Full forward pass to class logits (1 x classes).
DenseMatrix forward_logits(const ModelParams& params, const VideoTensor& video);

/// -log softmax(logits)[label].
double cross_entropy(const DenseMatrix& logits, int label);

int argmax_row(const DenseMatrix& logits);

/// One named parameter span. AdamW applies decoupled decay only where decay
/// is set (the weight matrices, not biases, gains, positions, or the scan's
/// evolution and timescale terms).
struct ParamRef {
    std::string name;
    double* values;
    std::size_t count;
    bool decay;
};

/// Visit every trainable tensor in a fixed, documented order. The order is
/// part of the checkpoint and optimizer-state contract.
void for_each_param(ModelParams& params, const std::function<void(const ParamRef&)>& fn);

std::size_t param_count(const ModelParams& params);

/// Checkpoint directory: manifest.json plus one tensor file per parameter.
/// Round-trips bit for bit.
void save_checkpoint(const std::string& dir, const ModelParams& params);
ModelParams load_checkpoint(const std::string& dir);

}  // namespace vmp::model
