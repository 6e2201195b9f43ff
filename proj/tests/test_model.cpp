#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <cstdio>
#include <filesystem>
#include <string>

#include "vmp/dense_matrix.hpp"
#include "vmp/errors.hpp"
#include "vmp/model.hpp"
#include "vmp/rng.hpp"

using namespace vmp;
using namespace vmp::model;

namespace {

// small enough to keep every test fast, large enough to exercise all paths
ModelConfig toy_config() {
    ModelConfig cfg;
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

VideoTensor random_video(Rng& rng, const ModelConfig& cfg) {
    VideoTensor v(cfg.frames, cfg.in_channels, cfg.height, cfg.width);
    for (auto& x : v.data) x = rng.uniform(-1.0, 1.0);
    return v;
}

// the zero-started output projections hide permutation effects; give them
// real values when a test needs the scan path to reach the logits
void wake_blocks(ModelParams& p, Rng& rng) {
    for (auto& blk : p.blocks)
        for (int r = 0; r < blk.w_out.rows(); ++r)
            for (int c = 0; c < blk.w_out.cols(); ++c) blk.w_out(r, c) = rng.uniform(-0.2, 0.2);
}

}  // namespace

TEST_CASE("token count follows the patch grid") {
    ModelConfig cfg = toy_config();
    CHECK(cfg.sequence_length() == 2 * 2 * 2);  // 2 frames, 2x2 grid
    cfg.height = 32;
    cfg.width = 32;
    cfg.patch_h = 16;
    cfg.patch_w = 16;
    CHECK(cfg.sequence_length() == 8);
    CHECK(cfg.patches_per_frame() == 4);

    Rng rng(60);
    cfg = toy_config();
    const auto p = init_params(cfg, rng);
    const auto v = random_video(rng, cfg);
    const auto tokens = patchify(p, v);
    CHECK(tokens.rows() == cfg.sequence_length());
    CHECK(tokens.cols() == cfg.embed_dim);
    const auto x = embed(p, tokens);
    CHECK(x.rows() == cfg.sequence_length() + 1);
}

TEST_CASE("config validation rejects non-dividing patches") {
    ModelConfig cfg = toy_config();
    cfg.patch_h = 3;
    CHECK_THROWS_AS(cfg.validate(), ConfigError);
    cfg = toy_config();
    cfg.frames = 3;
    cfg.patch_t = 2;
    CHECK_THROWS_AS(cfg.validate(), ConfigError);
    cfg = toy_config();
    cfg.classes = 1;
    CHECK_THROWS_AS(cfg.validate(), ConfigError);
    cfg = toy_config();
    cfg.embed_dim = 0;
    CHECK_THROWS_AS(cfg.validate(), ConfigError);
}

TEST_CASE("patch rows flatten voxels in channel, frame, row, column order") {
    ModelConfig cfg;
    cfg.embed_dim = 4;
    cfg.depth = 1;
    cfg.state_dim = 2;
    cfg.classes = 2;
    cfg.frames = 1;
    cfg.in_channels = 1;
    cfg.height = 4;
    cfg.width = 4;
    cfg.patch_t = 1;
    cfg.patch_h = 2;
    cfg.patch_w = 2;

    VideoTensor v(1, 1, 4, 4);
    for (int y = 0; y < 4; ++y)
        for (int x = 0; x < 4; ++x) v.at(0, 0, y, x) = 10.0 * y + x;

    const auto rows = video_patch_rows(cfg, v);
    REQUIRE(rows.rows() == 4);
    REQUIRE(rows.cols() == 4);
    // token 0 is the top-left patch, scanned row by row
    CHECK(rows(0, 0) == 0.0);
    CHECK(rows(0, 1) == 1.0);
    CHECK(rows(0, 2) == 10.0);
    CHECK(rows(0, 3) == 11.0);
    // token 1 sits to its right
    CHECK(rows(1, 0) == 2.0);
    // token 2 starts the second grid row
    CHECK(rows(2, 0) == 20.0);
}

TEST_CASE("a single lit voxel reaches exactly one patch token") {
    Rng rng(61);
    const ModelConfig cfg = toy_config();
    const auto p = init_params(cfg, rng);

    VideoTensor dark(cfg.frames, cfg.in_channels, cfg.height, cfg.width);
    const auto base = patchify(p, dark);
    VideoTensor lit = dark;
    lit.at(1, 2, 5, 6) = 1.0;  // frame 1, grid cell (1, 1) -> token 4 + 2*2 - 1
    const auto bumped = patchify(p, lit);

    int changed = 0;
    for (int l = 0; l < base.rows(); ++l)
        if (max_abs_diff(base.row(l), bumped.row(l)) > 0.0) {
            ++changed;
            CHECK(l == 1 * 4 + 1 * 2 + 1);
        }
    CHECK(changed == 1);
}

TEST_CASE("zero video patch tokens collapse to the bias") {
    Rng rng(62);
    const ModelConfig cfg = toy_config();
    auto p = init_params(cfg, rng);
    for (int j = 0; j < cfg.embed_dim; ++j) p.patch_b(0, j) = rng.uniform(-1.0, 1.0);
    const auto tokens = patchify(p, VideoTensor(cfg.frames, cfg.in_channels, cfg.height,
                                                cfg.width));
    for (int l = 0; l < tokens.rows(); ++l)
        CHECK(max_abs_diff(tokens.row(l), p.patch_b) == 0.0);
}

TEST_CASE("embedding broadcasts spatial positions over frames and temporal over slots") {
    Rng rng(63);
    const ModelConfig cfg = toy_config();
    const auto p = init_params(cfg, rng);
    const TokenSequence zero_patches(cfg.sequence_length(), cfg.embed_dim);
    const auto x = embed(p, zero_patches);

    const int per = cfg.patches_per_frame();
    // same spatial slot, consecutive frames: difference is the temporal pair
    for (int slot = 0; slot < per; ++slot)
        for (int j = 0; j < cfg.embed_dim; ++j)
            CHECK(x(1 + slot, j) - x(1 + per + slot, j) ==
                  doctest::Approx(p.pos_temporal(0, j) - p.pos_temporal(1, j)).epsilon(1e-15));
    // same frame, different slots: difference is the spatial pair
    for (int j = 0; j < cfg.embed_dim; ++j)
        CHECK(x(1, j) - x(2, j) ==
              doctest::Approx(p.pos_spatial(1, j) - p.pos_spatial(2, j)).epsilon(1e-15));
    // class token row
    for (int j = 0; j < cfg.embed_dim; ++j)
        CHECK(x(0, j) == p.cls(0, j) + p.pos_spatial(0, j) + p.pos_temporal(0, j));
}

TEST_CASE("layernorm normalizes rows and honors the scale") {
    auto scale = DenseMatrix::from_rows({{1.0, 1.0, 1.0}});
    const auto x = DenseMatrix::from_rows({{1.0, 2.0, 3.0}, {5.0, 5.0, 5.0}});
    const auto y = layernorm_rows(x, scale);
    // constant rows normalize to zero
    for (int j = 0; j < 3; ++j) CHECK(y(1, j) == 0.0);
    // mean 2, variance 2/3
    const double inv = 1.0 / std::sqrt(2.0 / 3.0 + kNormEps);
    CHECK(y(0, 0) == doctest::Approx(-inv).epsilon(1e-12));
    CHECK(y(0, 1) == 0.0);
    CHECK(y(0, 2) == doctest::Approx(inv).epsilon(1e-12));

    scale(0, 2) = -2.0;
    const auto y2 = layernorm_rows(x, scale);
    CHECK(y2(0, 2) == doctest::Approx(-2.0 * inv).epsilon(1e-12));

    CHECK_THROWS_AS(layernorm_rows(x, DenseMatrix(1, 4)), ShapeError);
}

TEST_CASE("causal depthwise conv mixes only the past") {
    // kernel [w0 w1]: out_l = w0 x_(l-1) + w1 x_l + b
    const auto x = DenseMatrix::from_rows({{1.0}, {2.0}, {4.0}});
    const auto w = DenseMatrix::from_rows({{10.0, 1.0}});
    const auto b = DenseMatrix::from_rows({{0.5}});
    const auto y = causal_depthwise_conv(x, w, b);
    CHECK(y(0, 0) == 1.5);         // no history
    CHECK(y(1, 0) == 12.5);        // 10*1 + 2 + 0.5
    CHECK(y(2, 0) == 24.5);        // 10*2 + 4 + 0.5

    // future perturbation never leaks backward
    auto x2 = x;
    x2(2, 0) = 100.0;
    const auto y2 = causal_depthwise_conv(x2, w, b);
    CHECK(y2(0, 0) == y(0, 0));
    CHECK(y2(1, 0) == y(1, 0));

    CHECK_THROWS_AS(causal_depthwise_conv(x, DenseMatrix(2, 2), b), ShapeError);
}

TEST_CASE("presets carry the documented widths and depths") {
    CHECK(tiny_config().embed_dim == 192);
    CHECK(tiny_config().depth == 24);
    CHECK(small_config().embed_dim == 384);
    CHECK(small_config().depth == 24);
    CHECK(middle_config().embed_dim == 576);
    CHECK(middle_config().depth == 32);
    for (const auto& cfg : {tiny_config(), small_config(), middle_config()}) {
        CHECK(cfg.state_dim == 16);
        CHECK(cfg.inner_dim() == 2 * cfg.embed_dim);
        cfg.validate();
    }
}

TEST_CASE("tiny preset forward produces finite logits") {
    Rng rng(64);
    ModelConfig cfg = tiny_config();
    cfg.classes = 5;  // keep the head small for the test
    const auto p = init_params(cfg, rng);
    CHECK(param_count(p) > 100000);
    const auto v = random_video(rng, cfg);
    const auto logits = forward_logits(p, v);
    CHECK(logits.rows() == 1);
    CHECK(logits.cols() == 5);
    CHECK(logits.all_finite());
}

TEST_CASE("forward stays finite across a hundred seeds") {
    const ModelConfig cfg = toy_config();
    for (std::uint64_t seed = 1; seed <= 100; ++seed) {
        Rng rng(seed);
        auto p = init_params(cfg, rng);
        wake_blocks(p, rng);
        const auto logits = forward_logits(p, random_video(rng, cfg));
        CHECK(logits.all_finite());
    }
}

TEST_CASE("logits react to patch permutations once the scan path is live") {
    Rng rng(65);
    const ModelConfig cfg = toy_config();
    auto p = init_params(cfg, rng);
    wake_blocks(p, rng);

    auto v = random_video(rng, cfg);
    const auto base = forward_logits(p, v);

    // swap two spatial patches inside frame 0: tokens change order only
    VideoTensor swapped = v;
    for (int c = 0; c < cfg.in_channels; ++c)
        for (int y = 0; y < cfg.patch_h; ++y)
            for (int x = 0; x < cfg.patch_w; ++x) {
                std::swap(swapped.at(0, c, y, x),
                          swapped.at(0, c, y + cfg.patch_h, x + cfg.patch_w));
            }
    const auto permuted = forward_logits(p, swapped);
    CHECK(max_abs_diff(base, permuted) > 1e-12);
}

TEST_CASE("ablation switches change the output and switch back bit for bit") {
    Rng rng(66);
    ModelConfig cfg = toy_config();
    auto p = init_params(cfg, rng);
    wake_blocks(p, rng);
    const auto v = random_video(rng, cfg);

    DenseMatrix outputs[2][2];
    for (int mask = 0; mask < 2; ++mask)
        for (int res = 0; res < 2; ++res) {
            p.config.mask_backward = mask == 1;
            p.config.residual_connections = res == 1;
            outputs[mask][res] = forward_logits(p, v);
        }
    // the four variants genuinely differ
    CHECK(max_abs_diff(outputs[0][0], outputs[1][0]) > 0.0);
    CHECK(max_abs_diff(outputs[0][0], outputs[0][1]) > 0.0);
    CHECK(max_abs_diff(outputs[1][0], outputs[1][1]) > 0.0);

    // flipping a switch back reproduces the earlier bits exactly
    p.config.mask_backward = true;
    p.config.residual_connections = true;
    CHECK(max_abs_diff(forward_logits(p, v), outputs[1][1]) == 0.0);
    p.config.mask_backward = false;
    p.config.residual_connections = false;
    CHECK(max_abs_diff(forward_logits(p, v), outputs[0][0]) == 0.0);
}

TEST_CASE("cross entropy hand values") {
    CHECK(cross_entropy(DenseMatrix::from_rows({{0.0, 0.0}}), 0) ==
          doctest::Approx(std::log(2.0)).epsilon(1e-14));
    CHECK(cross_entropy(DenseMatrix::from_rows({{0.0, 0.0, 0.0, 0.0}}), 2) ==
          doctest::Approx(std::log(4.0)).epsilon(1e-14));
    CHECK(cross_entropy(DenseMatrix::from_rows({{50.0, 0.0}}), 0) ==
          doctest::Approx(0.0).epsilon(1e-12));
    // stability at large magnitudes
    CHECK(std::isfinite(cross_entropy(DenseMatrix::from_rows({{1000.0, -1000.0}}), 1)));
    CHECK_THROWS_AS(cross_entropy(DenseMatrix::from_rows({{0.0, 0.0}}), 2), ArgumentError);
    CHECK_THROWS_AS(cross_entropy(DenseMatrix(2, 2), 0), ShapeError);

    CHECK(argmax_row(DenseMatrix::from_rows({{0.1, 3.0, -1.0}})) == 1);
}

TEST_CASE("parameter visitor order is stable and spans everything once") {
    Rng rng(67);
    auto p = init_params(toy_config(), rng);
    std::vector<std::string> names;
    std::size_t total = 0;
    for_each_param(p, [&](const ParamRef& ref) {
        names.push_back(ref.name);
        total += ref.count;
    });
    CHECK(total == param_count(p));
    CHECK(names.front() == "patch_w");
    CHECK(names.back() == "head_b");
    // every name unique
    auto sorted = names;
    std::sort(sorted.begin(), sorted.end());
    CHECK(std::adjacent_find(sorted.begin(), sorted.end()) == sorted.end());
    // decay only on weight matrices
    for_each_param(p, [&](const ParamRef& ref) {
        const bool is_weight = ref.name == "patch_w" || ref.name == "head_w" ||
                               ref.name.find("w_in") != std::string::npos ||
                               ref.name.find("w_out") != std::string::npos ||
                               ref.name.find("conv_w") != std::string::npos ||
                               ref.name.find(".w_b") != std::string::npos ||
                               ref.name.find(".w_c") != std::string::npos ||
                               ref.name.find("w_delta") != std::string::npos;
        CHECK(ref.decay == is_weight);
    });
}

TEST_CASE("initialization leaves the scan contractive and the skips silent") {
    Rng rng(68);
    const auto p = init_params(toy_config(), rng);
    for (const auto& blk : p.blocks) {
        CHECK(max_abs(blk.w_out) == 0.0);
        for (const auto* dir : {&blk.fwd, &blk.bwd}) {
            for (int k = 0; k < dir->a.rows(); ++k) CHECK(dir->a(k, 0) < 0.0);
            const double delta0 = softplus(dir->delta_bias);
            CHECK(delta0 >= 0.0099);
            CHECK(delta0 <= 0.1001);
        }
        for (int j = 0; j < blk.norm_scale.cols(); ++j) CHECK(blk.norm_scale(0, j) == 1.0);
    }
}

TEST_CASE("checkpoints round-trip bit for bit") {
    Rng rng(69);
    ModelConfig cfg = toy_config();
    cfg.mask_backward = false;  // a non-default flag must survive the trip
    auto p = init_params(cfg, rng);
    wake_blocks(p, rng);

    const std::string dir = "vmp_test_checkpoint";
    save_checkpoint(dir, p);
    auto q = load_checkpoint(dir);

    CHECK(q.config.mask_backward == false);
    CHECK(q.config.embed_dim == cfg.embed_dim);

    std::vector<double> pv, qv;
    for_each_param(p, [&](const ParamRef& r) { pv.insert(pv.end(), r.values, r.values + r.count); });
    for_each_param(q, [&](const ParamRef& r) { qv.insert(qv.end(), r.values, r.values + r.count); });
    REQUIRE(pv.size() == qv.size());
    for (std::size_t i = 0; i < pv.size(); ++i) CHECK(pv[i] == qv[i]);

    const auto v = random_video(rng, cfg);
    CHECK(max_abs_diff(forward_logits(p, v), forward_logits(q, v)) == 0.0);

    std::filesystem::remove_all(dir);
    CHECK_THROWS_AS(load_checkpoint(dir), ArgumentError);
}
