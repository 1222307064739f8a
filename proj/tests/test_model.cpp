#include <catch2/catch_amalgamated.hpp>

#include <cmath>
#include <limits>
#include <set>
#include <string>
#include <vector>

#include "andt/model.hpp"
#include "andt/model_grad.hpp"

using namespace andt;

namespace {

// smallest config that exercises every block: 4 tokens, 2 heads, 2 decoder stages
ModelConfig tiny_config() {
    ModelConfig c;
    c.T = 2;
    c.C = 1;
    c.H = 8;
    c.W = 8;
    c.t = 2;
    c.h = 4;
    c.w = 4;
    c.K = 8;
    c.L = 1;
    c.heads = 2;
    c.mlp_size = 16;
    c.fc_hidden = 16;
    c.decoder_base = 2;
    c.decoder_c0 = 8;
    c.decoder_channels = {8, 8};
    return c;
}

TubeletGrid make_grid(std::size_t T, std::size_t C, std::size_t H, std::size_t W,
                      std::size_t t, std::size_t h, std::size_t w) {
    ModelConfig c;
    c.T = T;
    c.C = C;
    c.H = H;
    c.W = W;
    c.t = t;
    c.h = h;
    c.w = w;
    return TubeletGrid::from(c);
}

template <typename S>
Tensor<S> random_clip(const ModelConfig& config, std::uint64_t seed) {
    Rng rng(seed);
    Tensor<S> clip({config.T, config.C, config.H, config.W});
    for (std::size_t i = 0; i < clip.numel(); ++i)
        clip[i] = static_cast<S>(rng.uniform(0.0, 1.0));
    return clip;
}

}  // namespace

TEST_CASE("default config matches the published architecture") {
    const ModelConfig c;
    c.validate();
    REQUIRE(c.T == 6);
    REQUIRE(c.C == 3);
    REQUIRE(c.H == 256);
    REQUIRE(c.W == 256);
    REQUIRE(c.t == 2);
    REQUIRE(c.h == 16);
    REQUIRE(c.w == 16);
    REQUIRE(c.L == 2);
    REQUIRE(c.heads == 6);
    REQUIRE(c.mlp_size == 4096);
    REQUIRE(c.decoder_base == 8);
    REQUIRE(c.decoder_c0 == 512);
    REQUIRE(c.decoder_channels == std::vector<std::size_t>{256, 128, 64, 32, 32});
    REQUIRE((c.decoder_base << c.decoder_channels.size()) == c.H);

    const TubeletGrid grid = TubeletGrid::from(c);
    REQUIRE(grid.N == 3 * 16 * 16);
    REQUIRE(grid.token_dim == 2 * 16 * 16 * 3);
}

TEST_CASE("config validation rejects inconsistent geometry") {
    ModelConfig c = tiny_config();
    c.validate();

    ModelConfig bad = c;
    bad.t = 4;  // does not divide T=2
    REQUIRE_THROWS_AS(bad.validate(), ConfigError);
    bad = c;
    bad.heads = 3;  // does not divide K=8
    REQUIRE_THROWS_AS(bad.validate(), ConfigError);
    bad = c;
    bad.decoder_channels = {8};  // 2 * 2^1 = 4 != 8
    REQUIRE_THROWS_AS(bad.validate(), ConfigError);
    bad = c;
    bad.output_frames = 3;  // neither 1 nor T
    REQUIRE_THROWS_AS(bad.validate(), ConfigError);
    bad = c;
    bad.dropout = 0.1;
    REQUIRE_THROWS_AS(bad.validate(), ConfigError);
    bad = c;
    bad.C = 2;
    REQUIRE_THROWS_AS(bad.validate(), ConfigError);
}

TEST_CASE("tokenize round-trips every divisor grid of a 6x3x32x32 clip") {
    Rng rng(42);
    Tensor<float> clip({6, 3, 32, 32});
    for (std::size_t i = 0; i < clip.numel(); ++i)
        clip[i] = static_cast<float>(rng.uniform(0.0, 1.0));

    const std::size_t t_divs[] = {1, 2, 3, 6};
    const std::size_t s_divs[] = {1, 2, 4, 8, 16, 32};
    for (const std::size_t t : t_divs)
        for (const std::size_t h : s_divs)
            for (const std::size_t w : s_divs) {
                const TubeletGrid grid = make_grid(6, 3, 32, 32, t, h, w);
                CAPTURE(t, h, w);
                REQUIRE(grid.N == (6 / t) * (32 / h) * (32 / w));
                REQUIRE(grid.token_dim == t * h * w * 3);

                const Tensor<float> tokens = tubelet_tokenize(clip, grid);
                REQUIRE(tokens.shape() == Shape{grid.N, grid.token_dim});
                REQUIRE(tokens.numel() == clip.numel());
                REQUIRE(tubelet_untokenize(tokens, grid, clip.shape()) == clip);
            }
}

TEST_CASE("tokenize flattens time, row, column, channel in that order") {
    // one tubelet covering the whole 2x2x2x2 clip
    Tensor<double> clip({2, 2, 2, 2});
    for (std::size_t t = 0; t < 2; ++t)
        for (std::size_t c = 0; c < 2; ++c)
            for (std::size_t y = 0; y < 2; ++y)
                for (std::size_t x = 0; x < 2; ++x)
                    clip[((t * 2 + c) * 2 + y) * 2 + x] =
                        1000.0 * t + 100.0 * c + 10.0 * y + x;

    const TubeletGrid grid = make_grid(2, 2, 2, 2, 2, 2, 2);
    REQUIRE(grid.N == 1);
    const Tensor<double> tokens = tubelet_tokenize(clip, grid);
    const std::vector<double> expected = {0, 100, 1, 101, 10, 110, 11, 111,
                                          1000, 1100, 1001, 1101, 1010, 1110, 1011, 1111};
    for (std::size_t i = 0; i < expected.size(); ++i) REQUIRE(tokens[i] == expected[i]);
}

TEST_CASE("tokens are ordered temporal-major then row-major") {
    // 1x1x1 tubelets: token i is exactly one pixel
    Tensor<double> clip({2, 1, 2, 2});
    for (std::size_t i = 0; i < clip.numel(); ++i) clip[i] = static_cast<double>(i);
    const TubeletGrid grid = make_grid(2, 1, 2, 2, 1, 1, 1);
    REQUIRE(grid.N == 8);
    const Tensor<double> tokens = tubelet_tokenize(clip, grid);
    // frame 0 pixels row-major first, then frame 1
    for (std::size_t i = 0; i < 8; ++i) REQUIRE(tokens[i] == static_cast<double>(i));
}

TEST_CASE("tokenize rejects mismatched grids") {
    Tensor<float> clip({2, 1, 4, 4});
    TubeletGrid grid = make_grid(2, 1, 4, 4, 2, 2, 2);
    REQUIRE_THROWS_AS(tubelet_tokenize(Tensor<float>({4, 4}), grid), ShapeError);
    grid.n_h = 3;  // does not divide H=4
    REQUIRE_THROWS_AS(tubelet_tokenize(clip, grid), ShapeError);

    const TubeletGrid good = make_grid(2, 1, 4, 4, 2, 2, 2);
    const Tensor<float> tokens = tubelet_tokenize(clip, good);
    REQUIRE_THROWS_AS(tubelet_untokenize(tokens, good, Shape{2, 1, 4, 8}), ShapeError);
    REQUIRE_THROWS_AS(tubelet_untokenize(Tensor<float>({3, 8}), good, clip.shape()),
                      ShapeError);
}

TEST_CASE("embedding matches the hand-computed fixture") {
    ModelParams<double> p;
    p.embed = Tensor<double>({3, 2}, {0.2, -0.4, 0.1, 0.3, -0.5, 0.6});
    p.cls = Tensor<double>({1, 2}, {0.7, -0.1});
    p.pos = Tensor<double>({2, 2}, {0.01, 0.02, 0.03, 0.04});
    const Tensor<double> tokens({1, 3}, {1.5, -2.0, 0.5});

    const Tensor<double> z0 = embed_sequence(tokens, p);
    REQUIRE(z0.shape() == Shape{2, 2});
    REQUIRE(z0[0] == Catch::Approx(0.71).margin(1e-15));
    REQUIRE(z0[1] == Catch::Approx(-0.08).margin(1e-15));
    REQUIRE(z0[2] == Catch::Approx(-0.12).margin(1e-15));
    REQUIRE(z0[3] == Catch::Approx(-0.86).margin(1e-15));

    // position table must be sized for N+1 rows
    ModelParams<double> short_pos = p;
    short_pos.pos = Tensor<double>({1, 2});
    REQUIRE_THROWS_AS(embed_sequence(tokens, short_pos), ShapeError);
    REQUIRE_THROWS_AS(embed_sequence(Tensor<double>({1, 4}), p), ShapeError);
}

TEST_CASE("encoder with zero mixing weights is the identity on z") {
    const ModelConfig config = tiny_config();
    ModelParams<double> params = init_params<double>(config, 1);
    for_each_param(params, [](const std::string& name, Tensor<double>& t) {
        if (name.find(".w") != std::string::npos || name.find("mlp_") != std::string::npos)
            t = Tensor<double>(t.shape());
    });

    const Tensor<double> clip = random_clip<double>(config, 2);
    const TubeletGrid grid = TubeletGrid::from(config);
    const Tensor<double> z0 = embed_sequence(tubelet_tokenize(clip, grid), params);
    const EncoderTrace<double> trace = encoder_forward(z0, params, config);

    REQUIRE(trace.z.size() == config.L + 1);
    REQUIRE(trace.z.back() == z0);

    // p is the final norm of the class-token row
    Tensor<double> row0({1, config.K});
    std::copy_n(z0.data(), config.K, row0.data());
    const Tensor<double> expected =
        layer_norm(row0, params.final_ln_gamma, params.final_ln_beta, config.ln_eps);
    REQUIRE(trace.p.shape() == Shape{config.K});
    for (std::size_t i = 0; i < config.K; ++i) REQUIRE(trace.p[i] == expected[i]);
}

TEST_CASE("encoder with zero layers reduces to the final norm") {
    ModelConfig config = tiny_config();
    config.L = 0;
    ModelParams<double> params = init_params<double>(config, 3);
    const Tensor<double> clip = random_clip<double>(config, 4);
    const Tensor<double> z0 =
        embed_sequence(tubelet_tokenize(clip, TubeletGrid::from(config)), params);
    const EncoderTrace<double> trace = encoder_forward(z0, params, config);
    REQUIRE(trace.z.size() == 1);
    REQUIRE(trace.p.shape() == Shape{config.K});
}

TEST_CASE("encoder feature ignores token order when positions are zeroed") {
    const ModelConfig config = tiny_config();
    ModelParams<double> params = init_params<double>(config, 5);
    params.pos = Tensor<double>(params.pos.shape());

    Rng rng(6);
    const TubeletGrid grid = TubeletGrid::from(config);
    Tensor<double> tokens({grid.N, grid.token_dim});
    for (std::size_t i = 0; i < tokens.numel(); ++i) tokens[i] = rng.uniform(-1.0, 1.0);

    Tensor<double> reversed(tokens.shape());
    for (std::size_t i = 0; i < grid.N; ++i)
        std::copy_n(tokens.data() + i * grid.token_dim, grid.token_dim,
                    reversed.data() + (grid.N - 1 - i) * grid.token_dim);

    const Tensor<double> p1 =
        encoder_forward(embed_sequence(tokens, params), params, config).p;
    const Tensor<double> p2 =
        encoder_forward(embed_sequence(reversed, params), params, config).p;
    REQUIRE(max_abs_diff(p1, p2) < 1e-9);
}

TEST_CASE("encoder reports the layer that produced non-finite values") {
    ModelConfig config = tiny_config();
    config.L = 2;
    ModelParams<double> params = init_params<double>(config, 7);
    params.layers[1].mlp_b2[0] = std::numeric_limits<double>::quiet_NaN();

    const Tensor<double> clip = random_clip<double>(config, 8);
    const Tensor<double> z0 =
        embed_sequence(tubelet_tokenize(clip, TubeletGrid::from(config)), params);
    try {
        encoder_forward(z0, params, config);
        FAIL("expected NumericError");
    } catch (const NumericError& e) {
        REQUIRE(std::string(e.what()).find("layer 1") != std::string::npos);
    }
}

TEST_CASE("decoder doubles the base grid once per stage") {
    const ModelConfig config = tiny_config();
    const ModelParams<float> params = init_params<float>(config, 9);
    Rng rng(10);
    Tensor<float> p({config.K});
    for (std::size_t i = 0; i < p.numel(); ++i) p[i] = static_cast<float>(rng.normal(0.0, 1.0));

    const DecoderTrace<float> trace =
        decoder_forward(p, params, config, BatchNormMode::kInfer);
    REQUIRE(trace.stages.size() == 2);
    REQUIRE(trace.stages[0].input.shape() == Shape{8, 2, 2});
    REQUIRE(trace.stages[0].upsampled.shape() == Shape{8, 4, 4});
    REQUIRE(trace.stages[1].upsampled.shape() == Shape{8, 8, 8});
    REQUIRE(trace.output.shape() == Shape{1, 1, 8, 8});
    for (std::size_t i = 0; i < trace.output.numel(); ++i) {
        REQUIRE(trace.output[i] > 0.0f);
        REQUIRE(trace.output[i] < 1.0f);
    }
}

TEST_CASE("all-zero parameters yield a flat sigmoid(bias) image") {
    const ModelConfig config = tiny_config();
    ModelParams<double> params = zero_params_like(init_params<double>(config, 11));
    const Tensor<double> p({config.K});

    const DecoderTrace<double> flat =
        decoder_forward(p, params, config, BatchNormMode::kInfer);
    for (std::size_t i = 0; i < flat.output.numel(); ++i) REQUIRE(flat.output[i] == 0.5);

    params.head_b[0] = 1.0;
    const DecoderTrace<double> biased =
        decoder_forward(p, params, config, BatchNormMode::kInfer);
    const double expected = 1.0 / (1.0 + std::exp(-1.0));
    for (std::size_t i = 0; i < biased.output.numel(); ++i)
        REQUIRE(biased.output[i] == Catch::Approx(expected).margin(1e-15));
}

TEST_CASE("predict_next_frame is deterministic and in range") {
    const ModelConfig config = tiny_config();
    const ModelParams<float> params = init_params<float>(config, 12);
    const Tensor<float> clip = random_clip<float>(config, 13);

    const Tensor<float> frame = predict_next_frame(clip, params, config);
    REQUIRE(frame.shape() == Shape{config.C, config.H, config.W});
    REQUIRE(frame == predict_next_frame(clip, params, config));
    for (std::size_t i = 0; i < frame.numel(); ++i) {
        REQUIRE(frame[i] > 0.0f);
        REQUIRE(frame[i] < 1.0f);
    }

    ModelConfig recon = config;
    recon.output_frames = recon.T;
    REQUIRE_THROWS_AS(predict_next_frame(clip, init_params<float>(recon, 12), recon),
                      ConfigError);
}

TEST_CASE("whole-clip reconstruction widens the head") {
    ModelConfig config = tiny_config();
    config.output_frames = config.T;
    config.validate();
    const ModelParams<float> params = init_params<float>(config, 14);
    REQUIRE(params.head_w.extent(0) == config.C * config.T);

    const Tensor<float> clip = random_clip<float>(config, 15);
    const ModelTrace<float> trace =
        model_forward(clip, params, config, BatchNormMode::kInfer);
    REQUIRE(trace.decoder.output.shape() == Shape{config.T, config.C, config.H, config.W});
}

TEST_CASE("parameter initialization is seeded and shaped") {
    const ModelConfig config = tiny_config();
    const ModelParams<double> a = init_params<double>(config, 21);
    const ModelParams<double> b = init_params<double>(config, 21);
    const ModelParams<double> c = init_params<double>(config, 22);

    bool all_equal = true, any_diff_seed = false;
    for_each_param(a, [&](const std::string& name, const Tensor<double>& t) {
        const Tensor<double>* tb = nullptr;
        const Tensor<double>* tc = nullptr;
        for_each_param(b, [&](const std::string& n, const Tensor<double>& u) {
            if (n == name) tb = &u;
        });
        for_each_param(c, [&](const std::string& n, const Tensor<double>& u) {
            if (n == name) tc = &u;
        });
        REQUIRE(tb != nullptr);
        REQUIRE(tc != nullptr);
        if (!(t == *tb)) all_equal = false;
        if (!(t == *tc)) any_diff_seed = true;
    });
    REQUIRE(all_equal);
    REQUIRE(any_diff_seed);

    // norm scales start at one, shifts and biases at zero, running stats at (0,1)
    for (std::size_t i = 0; i < config.K; ++i) {
        REQUIRE(a.layers[0].ln1_gamma[i] == 1.0);
        REQUIRE(a.layers[0].ln1_beta[i] == 0.0);
        REQUIRE(a.final_ln_gamma[i] == 1.0);
    }
    for (const auto& stage : a.stages)
        for (std::size_t i = 0; i < stage.bn_gamma.numel(); ++i) {
            REQUIRE(stage.bn_gamma[i] == 1.0);
            REQUIRE(stage.bn_beta[i] == 0.0);
            REQUIRE(stage.bn_running_mean[i] == 0.0);
            REQUIRE(stage.bn_running_var[i] == 1.0);
        }
    REQUIRE(sum(a.fc1_b) == 0.0);
    REQUIRE(sum(a.head_b) == 0.0);
}

TEST_CASE("projection weights sample near the target spread") {
    // large enough embedding for a stable sample standard deviation
    ModelConfig config;
    config.T = 4;
    config.C = 1;
    config.H = 32;
    config.W = 32;
    config.t = 4;
    config.h = 8;
    config.w = 8;
    config.K = 64;
    config.L = 1;
    config.heads = 2;
    config.mlp_size = 16;
    config.fc_hidden = 8;
    config.decoder_base = 8;
    config.decoder_c0 = 8;
    config.decoder_channels = {8, 8};
    config.validate();

    const ModelParams<double> params = init_params<double>(config, 31);
    REQUIRE(params.embed.numel() >= 10000);
    double mean = 0.0;
    for (std::size_t i = 0; i < params.embed.numel(); ++i) mean += params.embed[i];
    mean /= static_cast<double>(params.embed.numel());
    double var = 0.0;
    for (std::size_t i = 0; i < params.embed.numel(); ++i) {
        const double d = params.embed[i] - mean;
        var += d * d;
    }
    var /= static_cast<double>(params.embed.numel());
    const double sd = std::sqrt(var);
    REQUIRE(sd > 0.02 * 0.8);
    REQUIRE(sd < 0.02 * 1.2);
    // clipped at two spreads
    REQUIRE(max_abs(params.embed) <= 0.04 + 1e-12);
}

TEST_CASE("parameter traversal order is stable and complete") {
    const ModelConfig config = tiny_config();
    ModelParams<float> params = init_params<float>(config, 41);

    std::vector<std::string> names;
    for_each_param(params, [&](const std::string& name, Tensor<float>&) {
        names.push_back(name);
    });
    REQUIRE(names.size() == 3 + 12 * config.L + 2 + 4 + 3 * params.stages.size() + 2);
    REQUIRE(names.front() == "embed");
    REQUIRE(names.back() == "head_b");
    REQUIRE(std::set<std::string>(names.begin(), names.end()).size() == names.size());
    REQUIRE(std::find(names.begin(), names.end(), "layer0.wq") != names.end());
    REQUIRE(std::find(names.begin(), names.end(), "stage1.conv_w") != names.end());

    std::vector<std::string> buffers;
    for_each_buffer(params, [&](const std::string& name, Tensor<float>&) {
        buffers.push_back(name);
    });
    REQUIRE(buffers == std::vector<std::string>{"stage0.bn_running_mean",
                                                "stage0.bn_running_var",
                                                "stage1.bn_running_mean",
                                                "stage1.bn_running_var"});

    const ModelParams<float> zeros = zero_params_like(params);
    for_each_param(zeros, [&](const std::string&, const Tensor<float>& t) {
        REQUIRE(max_abs(t) == 0.0f);
    });
}

TEST_CASE("training-mode forward updates batch-norm running statistics") {
    const ModelConfig config = tiny_config();
    const ModelParams<double> params = init_params<double>(config, 51);
    const Tensor<double> clip = random_clip<double>(config, 52);

    const ModelTrace<double> trace =
        model_forward(clip, params, config, BatchNormMode::kTrain);
    bool moved = false;
    for (std::size_t s = 0; s < trace.decoder.stages.size(); ++s) {
        const auto& bn = trace.decoder.stages[s].bn;
        if (!(bn.new_running_mean == params.stages[s].bn_running_mean)) moved = true;
    }
    REQUIRE(moved);

    // inference mode leaves them untouched
    const ModelTrace<double> still =
        model_forward(clip, params, config, BatchNormMode::kInfer);
    for (std::size_t s = 0; s < still.decoder.stages.size(); ++s) {
        REQUIRE(still.decoder.stages[s].bn.new_running_mean ==
                params.stages[s].bn_running_mean);
        REQUIRE(still.decoder.stages[s].bn.new_running_var ==
                params.stages[s].bn_running_var);
    }
}

TEST_CASE("model gradients match finite differences on the tiny model") {
    const ModelConfig config = tiny_config();
    const ModelGradCheckReport report = model_finite_diff_check(config, 61, 1e-3, 1e-6);
    for (const auto& group : report.groups) {
        CAPTURE(group.name, group.max_rel_error);
        REQUIRE(group.max_rel_error <= 1e-3);
    }
    REQUIRE(report.pass);
    REQUIRE(report.groups.size() == 3 + 12 * config.L + 2 + 4 + 3 * 2 + 2);
}

TEST_CASE("model_backward rejects mismatched targets") {
    const ModelConfig config = tiny_config();
    const ModelParams<double> params = init_params<double>(config, 71);
    const Tensor<double> clip = random_clip<double>(config, 72);

    // a bare [C x H x W] target is accepted for single-frame prediction
    Tensor<double> target({config.C, config.H, config.W});
    const ModelGradients<double> grads = model_backward(clip, target, params, config);
    REQUIRE(grads.loss > 0.0);
    REQUIRE(std::isfinite(grads.loss));

    REQUIRE_THROWS_AS(
        model_backward(clip, Tensor<double>({config.C, config.H, config.W / 2}), params,
                       config),
        ShapeError);
}
