#include "vmp/model.hpp"

#include <cmath>
#include <filesystem>
#include <fstream>
#include <string>
#include <utility>

#include <json.hpp>

#include "vmp/errors.hpp"
#include "vmp/model_json.hpp"
#include "vmp/tensor_io.hpp"

namespace vmp::model {

VideoTensor::VideoTensor(int t, int c, int h, int w)
    : frames(t), channels(c), height(h), width(w) {
    if (t < 1 || c < 1 || h < 1 || w < 1)
        throw ShapeError("VideoTensor: all extents must be positive");
    data.assign(static_cast<std::size_t>(t) * c * h * w, 0.0);
}

void ModelConfig::validate() const {
    const auto positive = [](int v, const char* name) {
        if (v < 1) throw ConfigError(std::string("config: ") + name + " must be positive");
    };
    positive(embed_dim, "embed_dim");
    positive(depth, "depth");
    positive(state_dim, "state_dim");
    positive(frames, "frames");
    positive(in_channels, "in_channels");
    positive(height, "height");
    positive(width, "width");
    positive(patch_t, "patch_t");
    positive(patch_h, "patch_h");
    positive(patch_w, "patch_w");
    positive(conv_kernel, "conv_kernel");
    if (classes < 2) throw ConfigError("config: need at least two classes");
    if (frames % patch_t != 0)
        throw ConfigError("config: patch_t must divide frames");
    if (height % patch_h != 0)
        throw ConfigError("config: patch_h must divide height");
    if (width % patch_w != 0)
        throw ConfigError("config: patch_w must divide width");
}

ModelConfig tiny_config() {
    ModelConfig c;
    c.embed_dim = 192;
    c.depth = 24;
    c.state_dim = 16;
    return c;
}

ModelConfig small_config() {
    ModelConfig c;
    c.embed_dim = 384;
    c.depth = 24;
    c.state_dim = 16;
    return c;
}

ModelConfig middle_config() {
    ModelConfig c;
    c.embed_dim = 576;
    c.depth = 32;
    c.state_dim = 16;
    return c;
}

DenseMatrix layernorm_rows(const DenseMatrix& x, const DenseMatrix& norm_scale) {
    if (norm_scale.rows() != 1 || norm_scale.cols() != x.cols())
        throw ShapeError("layernorm_rows: scale must be 1 x " + std::to_string(x.cols()) +
                         ", got " + norm_scale.shape_str());
    DenseMatrix out(x.rows(), x.cols());
    const int c = x.cols();
    for (int r = 0; r < x.rows(); ++r) {
        double mean = 0.0;
        for (int j = 0; j < c; ++j) mean += x(r, j);
        mean /= c;
        double var = 0.0;
        for (int j = 0; j < c; ++j) {
            const double d = x(r, j) - mean;
            var += d * d;
        }
        var /= c;
        const double inv = 1.0 / std::sqrt(var + kNormEps);
        for (int j = 0; j < c; ++j) out(r, j) = norm_scale(0, j) * (x(r, j) - mean) * inv;
    }
    return out;
}

DenseMatrix causal_depthwise_conv(const DenseMatrix& x, const DenseMatrix& w,
                                  const DenseMatrix& b) {
    if (w.rows() != x.cols())
        throw ShapeError("causal_depthwise_conv: kernel rows " + w.shape_str() +
                         " must match channels " + std::to_string(x.cols()));
    if (b.rows() != 1 || b.cols() != x.cols())
        throw ShapeError("causal_depthwise_conv: bias must be 1 x " + std::to_string(x.cols()));
    const int k = w.cols();
    DenseMatrix out(x.rows(), x.cols());
    for (int l = 0; l < x.rows(); ++l)
        for (int e = 0; e < x.cols(); ++e) {
            double acc = b(0, e);
            for (int i = 0; i < k; ++i) {
                const int src = l - (k - 1) + i;
                if (src >= 0) acc += w(e, i) * x(src, e);
            }
            out(l, e) = acc;
        }
    return out;
}

namespace {

// allocates every tensor with its config shape, values zero
ModelParams zero_params(const ModelConfig& config) {
    config.validate();
    ModelParams p;
    p.config = config;
    const int c = config.embed_dim;
    const int e = config.inner_dim();
    const int s = config.state_dim;
    p.patch_w = DenseMatrix(c, static_cast<int>(config.patch_values()));
    p.patch_b = DenseMatrix(1, c);
    p.cls = DenseMatrix(1, c);
    p.pos_spatial = DenseMatrix(config.patches_per_frame() + 1, c);
    p.pos_temporal = DenseMatrix(config.frames_out(), c);
    p.blocks.resize(config.depth);
    for (auto& blk : p.blocks) {
        blk.norm_scale = DenseMatrix(1, c);
        blk.w_in = DenseMatrix(e, c);
        blk.conv_w = DenseMatrix(e, config.conv_kernel);
        blk.conv_b = DenseMatrix(1, e);
        for (ssm::SsmParams* dir : {&blk.fwd, &blk.bwd}) {
            dir->a_kind = ssm::AKind::Diagonal;
            dir->a = DenseMatrix(s, 1);
            dir->w_b = DenseMatrix(s, e);
            dir->w_c = DenseMatrix(s, e);
            dir->w_delta = DenseMatrix(1, e);
            dir->delta_bias = 0.0;
        }
        blk.w_out = DenseMatrix(c, e);
    }
    p.final_norm_scale = DenseMatrix(1, c);
    p.head_w = DenseMatrix(config.classes, c);
    p.head_b = DenseMatrix(1, config.classes);
    return p;
}

void fill_uniform(DenseMatrix& m, Rng& rng, double bound) {
    for (int r = 0; r < m.rows(); ++r)
        for (int c = 0; c < m.cols(); ++c) m(r, c) = rng.uniform(-bound, bound);
}

double softplus_inverse(double y) { return std::log(std::expm1(y)); }

}  // namespace

ModelParams init_params(const ModelConfig& config, Rng& rng) {
    ModelParams p = zero_params(config);
    const int c = config.embed_dim;
    const int e = config.inner_dim();

    fill_uniform(p.patch_w, rng, 1.0 / std::sqrt(static_cast<double>(config.patch_values())));
    fill_uniform(p.cls, rng, 0.02);
    fill_uniform(p.pos_spatial, rng, 0.02);
    fill_uniform(p.pos_temporal, rng, 0.02);

    const double lo_bias = softplus_inverse(0.01);
    const double hi_bias = softplus_inverse(0.1);
    for (auto& blk : p.blocks) {
        blk.norm_scale.fill(1.0);
        fill_uniform(blk.w_in, rng, 1.0 / std::sqrt(static_cast<double>(c)));
        fill_uniform(blk.conv_w, rng, 1.0 / std::sqrt(static_cast<double>(config.conv_kernel)));
        for (ssm::SsmParams* dir : {&blk.fwd, &blk.bwd}) {
            for (int k = 0; k < config.state_dim; ++k) dir->a(k, 0) = rng.uniform(-1.0, -0.1);
            fill_uniform(dir->w_b, rng, 1.0 / std::sqrt(static_cast<double>(e)));
            fill_uniform(dir->w_c, rng, 1.0 / std::sqrt(static_cast<double>(e)));
            fill_uniform(dir->w_delta, rng, 1.0 / std::sqrt(static_cast<double>(e)));
            dir->delta_bias = rng.uniform(lo_bias, hi_bias);
        }
        // starts at zero so the skip path carries the signal and every
        // ablation variant of a freshly built model shares its first loss
        blk.w_out.fill(0.0);
    }
    p.final_norm_scale.fill(1.0);
    fill_uniform(p.head_w, rng, 1.0 / std::sqrt(static_cast<double>(c)));
    return p;
}

DenseMatrix video_patch_rows(const ModelConfig& config, const VideoTensor& video) {
    config.validate();
    if (video.frames != config.frames || video.channels != config.in_channels ||
        video.height != config.height || video.width != config.width)
        throw ShapeError("video_patch_rows: clip " + std::to_string(video.frames) + "x" +
                         std::to_string(video.channels) + "x" + std::to_string(video.height) +
                         "x" + std::to_string(video.width) + " does not match the config");

    DenseMatrix rows(config.sequence_length(), static_cast<int>(config.patch_values()));
    int row = 0;
    for (int t = 0; t < config.frames_out(); ++t)
        for (int py = 0; py < config.grid_h(); ++py)
            for (int px = 0; px < config.grid_w(); ++px) {
                int col = 0;
                for (int ch = 0; ch < config.in_channels; ++ch)
                    for (int dt = 0; dt < config.patch_t; ++dt)
                        for (int yy = 0; yy < config.patch_h; ++yy)
                            for (int xx = 0; xx < config.patch_w; ++xx)
                                rows(row, col++) =
                                    video.at(t * config.patch_t + dt, ch,
                                             py * config.patch_h + yy, px * config.patch_w + xx);
                ++row;
            }
    return rows;
}

TokenSequence patchify(const ModelParams& params, const VideoTensor& video) {
    const DenseMatrix rows = video_patch_rows(params.config, video);
    DenseMatrix tokens = matmul(rows, transpose(params.patch_w));
    for (int l = 0; l < tokens.rows(); ++l)
        for (int j = 0; j < tokens.cols(); ++j) tokens(l, j) += params.patch_b(0, j);
    return tokens;
}

TokenSequence embed(const ModelParams& params, const TokenSequence& patches) {
    const ModelConfig& cfg = params.config;
    if (patches.rows() != cfg.sequence_length() || patches.cols() != cfg.embed_dim)
        throw ShapeError("embed: patch tokens " + patches.shape_str() + " do not match config");
    TokenSequence x(patches.rows() + 1, cfg.embed_dim);
    for (int j = 0; j < cfg.embed_dim; ++j)
        x(0, j) = params.cls(0, j) + params.pos_spatial(0, j) + params.pos_temporal(0, j);
    for (int l = 0; l < patches.rows(); ++l) {
        const int t = l / cfg.patches_per_frame();
        const int slot = l % cfg.patches_per_frame();
        for (int j = 0; j < cfg.embed_dim; ++j)
            x(l + 1, j) = patches(l, j) + params.pos_spatial(slot + 1, j) +
                          params.pos_temporal(t, j);
    }
    return x;
}

DenseMatrix forward_logits(const ModelParams& params, const VideoTensor& video) {
    const ModelConfig& cfg = params.config;
    TokenSequence x = embed(params, patchify(params, video));
    for (const auto& blk : params.blocks) {
        const DenseMatrix u = layernorm_rows(x, blk.norm_scale);
        const DenseMatrix v = matmul(u, transpose(blk.w_in));
        const DenseMatrix mixed = silu(causal_depthwise_conv(v, blk.conv_w, blk.conv_b));
        const DenseMatrix scanned = ssm::scan_combined(blk.fwd, blk.bwd, mixed,
                                                       cfg.mask_backward,
                                                       cfg.residual_connections)
                                        .y;
        x = x + matmul(scanned, transpose(blk.w_out));
    }
    const DenseMatrix pooled = layernorm_rows(x.row(0), params.final_norm_scale);
    DenseMatrix logits = matmul(pooled, transpose(params.head_w));
    for (int j = 0; j < logits.cols(); ++j) logits(0, j) += params.head_b(0, j);
    return logits;
}

double cross_entropy(const DenseMatrix& logits, int label) {
    if (logits.rows() != 1) throw ShapeError("cross_entropy: logits must be a single row");
    if (label < 0 || label >= logits.cols())
        throw ArgumentError("cross_entropy: label " + std::to_string(label) + " out of range");
    if (!logits.all_finite()) throw DomainError("cross_entropy: non-finite logits");
    double top = logits(0, 0);
    for (int j = 1; j < logits.cols(); ++j) top = std::max(top, logits(0, j));
    double lse = 0.0;
    for (int j = 0; j < logits.cols(); ++j) lse += std::exp(logits(0, j) - top);
    return top + std::log(lse) - logits(0, label);
}

int argmax_row(const DenseMatrix& logits) {
    if (logits.rows() != 1 || logits.cols() < 1)
        throw ShapeError("argmax_row: need a single non-empty row");
    int best = 0;
    for (int j = 1; j < logits.cols(); ++j)
        if (logits(0, j) > logits(0, best)) best = j;
    return best;
}

void for_each_param(ModelParams& params, const std::function<void(const ParamRef&)>& fn) {
    const auto visit = [&](const std::string& name, DenseMatrix& m, bool decay) {
        fn(ParamRef{name, m.data(), m.size(), decay});
    };
    visit("patch_w", params.patch_w, true);
    visit("patch_b", params.patch_b, false);
    visit("cls", params.cls, false);
    visit("pos_spatial", params.pos_spatial, false);
    visit("pos_temporal", params.pos_temporal, false);
    for (std::size_t k = 0; k < params.blocks.size(); ++k) {
        auto& blk = params.blocks[k];
        const std::string base = "blocks." + std::to_string(k) + ".";
        visit(base + "norm_scale", blk.norm_scale, false);
        visit(base + "w_in", blk.w_in, true);
        visit(base + "conv_w", blk.conv_w, true);
        visit(base + "conv_b", blk.conv_b, false);
        for (auto [dir, tag] : {std::pair{&blk.fwd, "fwd."}, std::pair{&blk.bwd, "bwd."}}) {
            visit(base + tag + "a", dir->a, false);
            visit(base + tag + "w_b", dir->w_b, true);
            visit(base + tag + "w_c", dir->w_c, true);
            visit(base + tag + "w_delta", dir->w_delta, true);
            fn(ParamRef{base + tag + "delta_bias", &dir->delta_bias, 1, false});
        }
        visit(base + "w_out", blk.w_out, true);
    }
    visit("final_norm_scale", params.final_norm_scale, false);
    visit("head_w", params.head_w, true);
    visit("head_b", params.head_b, false);
}

std::size_t param_count(const ModelParams& params) {
    std::size_t n = 0;
    for_each_param(const_cast<ModelParams&>(params),
                   [&](const ParamRef& ref) { n += ref.count; });
    return n;
}

namespace {

std::string tensor_file_name(const std::string& param_name) {
    std::string s = param_name;
    for (char& c : s)
        if (c == '.') c = '_';
    return s + ".mpt";
}

}  // namespace

nlohmann::ordered_json config_to_json(const ModelConfig& c) {
    return nlohmann::ordered_json{{"embed_dim", c.embed_dim},
                                  {"depth", c.depth},
                                  {"state_dim", c.state_dim},
                                  {"classes", c.classes},
                                  {"frames", c.frames},
                                  {"in_channels", c.in_channels},
                                  {"height", c.height},
                                  {"width", c.width},
                                  {"patch_t", c.patch_t},
                                  {"patch_h", c.patch_h},
                                  {"patch_w", c.patch_w},
                                  {"conv_kernel", c.conv_kernel},
                                  {"mask_backward", c.mask_backward},
                                  {"residual_connections", c.residual_connections}};
}

ModelConfig config_from_json(const nlohmann::json& j) {
    if (!j.is_object()) throw ConfigError("model config must be a JSON object");
    ModelConfig c;
    for (const auto& [key, value] : j.items()) {
        try {
            if (key == "embed_dim") c.embed_dim = value.get<int>();
            else if (key == "depth") c.depth = value.get<int>();
            else if (key == "state_dim") c.state_dim = value.get<int>();
            else if (key == "classes") c.classes = value.get<int>();
            else if (key == "frames") c.frames = value.get<int>();
            else if (key == "in_channels") c.in_channels = value.get<int>();
            else if (key == "height") c.height = value.get<int>();
            else if (key == "width") c.width = value.get<int>();
            else if (key == "patch_t") c.patch_t = value.get<int>();
            else if (key == "patch_h") c.patch_h = value.get<int>();
            else if (key == "patch_w") c.patch_w = value.get<int>();
            else if (key == "conv_kernel") c.conv_kernel = value.get<int>();
            else if (key == "mask_backward") c.mask_backward = value.get<bool>();
            else if (key == "residual_connections") c.residual_connections = value.get<bool>();
            else throw ConfigError("model config: unknown key '" + key + "'");
        } catch (const nlohmann::json::exception&) {
            throw ConfigError("model config: key '" + key + "' has the wrong type");
        }
    }
    return c;
}

void save_checkpoint(const std::string& dir, const ModelParams& params) {
    namespace fs = std::filesystem;
    fs::create_directories(dir);

    nlohmann::ordered_json manifest;
    manifest["format"] = 1;
    manifest["config"] = config_to_json(params.config);
    manifest["tensors"] = nlohmann::ordered_json::array();

    for_each_param(const_cast<ModelParams&>(params), [&](const ParamRef& ref) {
        Tensor t;
        t.dims = {static_cast<std::uint32_t>(ref.count)};
        t.data.assign(ref.values, ref.values + ref.count);
        const std::string file = tensor_file_name(ref.name);
        write_tensor((fs::path(dir) / file).string(), t);
        manifest["tensors"].push_back({{"name", ref.name}, {"file", file}, {"count", ref.count}});
    });

    std::ofstream out(fs::path(dir) / "manifest.json");
    if (!out) throw ArgumentError("save_checkpoint: cannot write manifest in " + dir);
    out << manifest.dump(2) << "\n";
}

ModelParams load_checkpoint(const std::string& dir) {
    namespace fs = std::filesystem;
    std::ifstream in(fs::path(dir) / "manifest.json");
    if (!in) throw ArgumentError("load_checkpoint: no manifest.json in " + dir);
    nlohmann::json manifest;
    try {
        in >> manifest;
    } catch (const nlohmann::json::exception& e) {
        throw ConfigError(std::string("load_checkpoint: bad manifest: ") + e.what());
    }
    if (manifest.value("format", 0) != 1)
        throw ConfigError("load_checkpoint: unsupported checkpoint format");

    ModelParams params = zero_params(config_from_json(manifest.at("config")));
    for_each_param(params, [&](const ParamRef& ref) {
        const Tensor t = read_tensor((fs::path(dir) / tensor_file_name(ref.name)).string());
        if (t.data.size() != ref.count)
            throw ShapeError("load_checkpoint: " + ref.name + " holds " +
                             std::to_string(t.data.size()) + " values, expected " +
                             std::to_string(ref.count));
        std::copy(t.data.begin(), t.data.end(), ref.values);
    });
    return params;
}

}  // namespace vmp::model
