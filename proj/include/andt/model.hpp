#pragma once

#include <algorithm>
#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "andt/ops.hpp"
#include "andt/tensor.hpp"

// The video prediction network: clips are cut into non-overlapping
// spatio-temporal blocks ("tubelets"), linearly embedded with a class token
// and a learned position table, run through a pre-norm Transformer encoder,
// and the class-token feature is expanded by a convolutional decoder back
// into one predicted frame (or T reconstructed frames).

namespace andt {

enum class MlpActivation { kGelu, kRelu };

struct ModelConfig {
    std::size_t T = 6;                  // input frames per clip
    std::size_t C = 3, H = 256, W = 256;
    std::size_t t = 2, h = 16, w = 16;  // tubelet extents
    std::size_t K = 768;                // embedding width
    std::size_t L = 2;                  // encoder layers
    std::size_t heads = 6;
    std::size_t mlp_size = 4096;
    MlpActivation mlp_activation = MlpActivation::kGelu;
    double dropout = 0.0;               // reserved; only 0 is implemented
    std::size_t fc_hidden = 2048;       // width between the two expansion FCs
    std::size_t decoder_base = 8;       // decoder starts from base x base
    std::size_t decoder_c0 = 512;       // channels at the base grid
    std::vector<std::size_t> decoder_channels = {256, 128, 64, 32, 32};
    std::size_t output_frames = 1;      // T when reconstructing whole clips
    double ln_eps = 1e-6;
    double bn_eps = 1e-5;
    double bn_momentum = 0.1;

    void validate() const {
        const auto fail = [](const std::string& msg) { throw ConfigError("model config: " + msg); };
        if (T == 0 || C == 0 || H == 0 || W == 0) fail("frame geometry must be positive");
        if (C != 1 && C != 3) fail("C must be 1 or 3");
        if (t == 0 || T % t != 0) fail("t must divide T");
        if (h == 0 || H % h != 0) fail("h must divide H");
        if (w == 0 || W % w != 0) fail("w must divide W");
        if (K == 0 || heads == 0 || K % heads != 0) fail("heads must divide K");
        if (mlp_size == 0 || fc_hidden == 0) fail("mlp_size and fc_hidden must be positive");
        if (dropout != 0.0) fail("dropout is reserved and must be 0");
        if (decoder_channels.empty()) fail("decoder needs at least one stage");
        std::size_t out = decoder_base;
        for (std::size_t i = 0; i < decoder_channels.size(); ++i) {
            if (decoder_channels[i] == 0) fail("decoder channel widths must be positive");
            out *= 2;
        }
        if (out != H || out != W)
            fail("decoder base " + std::to_string(decoder_base) + " with " +
                 std::to_string(decoder_channels.size()) + " upsampling stages yields " +
                 std::to_string(out) + "x" + std::to_string(out) + ", config frame is " +
                 std::to_string(H) + "x" + std::to_string(W));
        if (output_frames != 1 && output_frames != T) fail("output_frames must be 1 or T");
        if (ln_eps < 0.0 || bn_eps < 0.0) fail("eps must be >= 0");
        if (bn_momentum < 0.0 || bn_momentum > 1.0) fail("bn_momentum must be in [0,1]");
    }
};

struct TubeletGrid {
    std::size_t n_t = 0, n_h = 0, n_w = 0;
    std::size_t N = 0;          // n_t * n_h * n_w tokens
    std::size_t token_dim = 0;  // t * h * w * C

    static TubeletGrid from(const ModelConfig& config) {
        TubeletGrid g;
        g.n_t = config.T / config.t;
        g.n_h = config.H / config.h;
        g.n_w = config.W / config.w;
        g.N = g.n_t * g.n_h * g.n_w;
        g.token_dim = config.t * config.h * config.w * config.C;
        return g;
    }
};

template <typename S>
struct EncoderLayerParams {
    Tensor<S> ln1_gamma, ln1_beta;
    Tensor<S> wq, wk, wv, wo;
    Tensor<S> ln2_gamma, ln2_beta;
    Tensor<S> mlp_w1, mlp_b1;  // K -> mlp_size
    Tensor<S> mlp_w2, mlp_b2;  // mlp_size -> K
};

template <typename S>
struct DecoderStageParams {
    Tensor<S> conv_w;  // [width x prev_width x 3 x 3], bias-free (batch norm follows)
    Tensor<S> bn_gamma, bn_beta;
    Tensor<S> bn_running_mean, bn_running_var;  // buffers, not trained
};

template <typename S>
struct ModelParams {
    Tensor<S> embed;  // [token_dim x K]
    Tensor<S> cls;    // [1 x K]
    Tensor<S> pos;    // [(N+1) x K]
    std::vector<EncoderLayerParams<S>> layers;
    Tensor<S> final_ln_gamma, final_ln_beta;
    Tensor<S> fc1_w, fc1_b;  // K -> fc_hidden
    Tensor<S> fc2_w, fc2_b;  // fc_hidden -> base*base*c0
    std::vector<DecoderStageParams<S>> stages;
    Tensor<S> head_w, head_b;  // 1x1 conv to C*output_frames channels
};

/// Visits every trainable tensor in a stable, documented order; `fn` gets
/// (name, tensor). The same order backs gradients, optimizer state, and
/// checkpoints.
template <typename P, typename F>
void for_each_param(P& params, F&& fn) {
    fn("embed", params.embed);
    fn("cls", params.cls);
    fn("pos", params.pos);
    for (std::size_t l = 0; l < params.layers.size(); ++l) {
        auto& layer = params.layers[l];
        const std::string prefix = "layer" + std::to_string(l) + ".";
        fn(prefix + "ln1_gamma", layer.ln1_gamma);
        fn(prefix + "ln1_beta", layer.ln1_beta);
        fn(prefix + "wq", layer.wq);
        fn(prefix + "wk", layer.wk);
        fn(prefix + "wv", layer.wv);
        fn(prefix + "wo", layer.wo);
        fn(prefix + "ln2_gamma", layer.ln2_gamma);
        fn(prefix + "ln2_beta", layer.ln2_beta);
        fn(prefix + "mlp_w1", layer.mlp_w1);
        fn(prefix + "mlp_b1", layer.mlp_b1);
        fn(prefix + "mlp_w2", layer.mlp_w2);
        fn(prefix + "mlp_b2", layer.mlp_b2);
    }
    fn("final_ln_gamma", params.final_ln_gamma);
    fn("final_ln_beta", params.final_ln_beta);
    fn("fc1_w", params.fc1_w);
    fn("fc1_b", params.fc1_b);
    fn("fc2_w", params.fc2_w);
    fn("fc2_b", params.fc2_b);
    for (std::size_t s = 0; s < params.stages.size(); ++s) {
        auto& stage = params.stages[s];
        const std::string prefix = "stage" + std::to_string(s) + ".";
        fn(prefix + "conv_w", stage.conv_w);
        fn(prefix + "bn_gamma", stage.bn_gamma);
        fn(prefix + "bn_beta", stage.bn_beta);
    }
    fn("head_w", params.head_w);
    fn("head_b", params.head_b);
}

/// Non-trained state: batch-norm running statistics.
template <typename P, typename F>
void for_each_buffer(P& params, F&& fn) {
    for (std::size_t s = 0; s < params.stages.size(); ++s) {
        auto& stage = params.stages[s];
        const std::string prefix = "stage" + std::to_string(s) + ".";
        fn(prefix + "bn_running_mean", stage.bn_running_mean);
        fn(prefix + "bn_running_var", stage.bn_running_var);
    }
}

/// Parameter skeleton with fresh defaults: weights zero, norm scales and
/// running variances one. The single authority for parameter shapes.
template <typename S>
ModelParams<S> make_params(const ModelConfig& config) {
    config.validate();
    const TubeletGrid grid = TubeletGrid::from(config);
    ModelParams<S> p;
    p.embed = Tensor<S>({grid.token_dim, config.K});
    p.cls = Tensor<S>({1, config.K});
    p.pos = Tensor<S>({grid.N + 1, config.K});
    for (std::size_t l = 0; l < config.L; ++l) {
        EncoderLayerParams<S> layer;
        layer.ln1_gamma = Tensor<S>::full({config.K}, S(1));
        layer.ln1_beta = Tensor<S>({config.K});
        layer.wq = Tensor<S>({config.K, config.K});
        layer.wk = Tensor<S>({config.K, config.K});
        layer.wv = Tensor<S>({config.K, config.K});
        layer.wo = Tensor<S>({config.K, config.K});
        layer.ln2_gamma = Tensor<S>::full({config.K}, S(1));
        layer.ln2_beta = Tensor<S>({config.K});
        layer.mlp_w1 = Tensor<S>({config.K, config.mlp_size});
        layer.mlp_b1 = Tensor<S>({config.mlp_size});
        layer.mlp_w2 = Tensor<S>({config.mlp_size, config.K});
        layer.mlp_b2 = Tensor<S>({config.K});
        p.layers.push_back(std::move(layer));
    }
    p.final_ln_gamma = Tensor<S>::full({config.K}, S(1));
    p.final_ln_beta = Tensor<S>({config.K});

    const std::size_t flat = config.decoder_base * config.decoder_base * config.decoder_c0;
    p.fc1_w = Tensor<S>({config.K, config.fc_hidden});
    p.fc1_b = Tensor<S>({config.fc_hidden});
    p.fc2_w = Tensor<S>({config.fc_hidden, flat});
    p.fc2_b = Tensor<S>({flat});

    std::size_t prev = config.decoder_c0;
    for (const std::size_t width : config.decoder_channels) {
        DecoderStageParams<S> stage;
        stage.conv_w = Tensor<S>({width, prev, 3, 3});
        stage.bn_gamma = Tensor<S>::full({width}, S(1));
        stage.bn_beta = Tensor<S>({width});
        stage.bn_running_mean = Tensor<S>({width});
        stage.bn_running_var = Tensor<S>::full({width}, S(1));
        p.stages.push_back(std::move(stage));
        prev = width;
    }
    const std::size_t out_channels = config.C * config.output_frames;
    p.head_w = Tensor<S>({out_channels, prev, 1, 1});
    p.head_b = Tensor<S>({out_channels});
    return p;
}

template <typename S>
ModelParams<S> init_params(const ModelConfig& config, std::uint64_t seed) {
    ModelParams<S> p = make_params<S>(config);
    Rng rng(seed);
    const double std_dev = 0.02;
    const auto fill = [&](Tensor<S>& t) {
        for (std::size_t i = 0; i < t.numel(); ++i)
            t[i] = static_cast<S>(rng.truncated_normal(0.0, std_dev));
    };
    fill(p.embed);
    fill(p.cls);
    fill(p.pos);
    for (auto& layer : p.layers) {
        fill(layer.wq);
        fill(layer.wk);
        fill(layer.wv);
        fill(layer.wo);
        fill(layer.mlp_w1);
        fill(layer.mlp_w2);
    }
    fill(p.fc1_w);
    fill(p.fc2_w);
    for (auto& stage : p.stages) fill(stage.conv_w);
    fill(p.head_w);
    return p;
}

/// Same tensor layout as `params`, zero-filled. Used for gradients and
/// optimizer moments.
template <typename S>
ModelParams<S> zero_params_like(const ModelParams<S>& params) {
    ModelParams<S> z = params;
    for_each_param(z, [](const std::string&, Tensor<S>& t) { t = Tensor<S>(t.shape()); });
    for_each_buffer(z, [](const std::string&, Tensor<S>& t) { t = Tensor<S>(t.shape()); });
    return z;
}

// ---------------------------------------------------------------------------
// tokenization

/// Cuts [T x C x H x W] into non-overlapping t x h x w x C blocks. Tokens are
/// ordered temporal-major, then row-major over the spatial grid; within a
/// token the flattening order is time, row, column, channel.
template <typename S>
Tensor<S> tubelet_tokenize(const Tensor<S>& clip, const TubeletGrid& grid) {
    if (clip.ndim() != 4) throw ShapeError("tokenize: want [T x C x H x W]");
    const std::size_t T = clip.extent(0), C = clip.extent(1), H = clip.extent(2),
                      W = clip.extent(3);
    if (grid.n_t == 0 || grid.n_h == 0 || grid.n_w == 0 || T % grid.n_t != 0 ||
        H % grid.n_h != 0 || W % grid.n_w != 0)
        throw ShapeError("tokenize: grid does not divide clip " + shape_str(clip.shape()));
    const std::size_t t = T / grid.n_t, h = H / grid.n_h, w = W / grid.n_w;
    if (grid.token_dim != t * h * w * C)
        throw ShapeError("tokenize: token_dim " + std::to_string(grid.token_dim) +
                         " inconsistent with clip " + shape_str(clip.shape()));

    Tensor<S> tokens({grid.N, grid.token_dim});
    for (std::size_t bt = 0; bt < grid.n_t; ++bt)
        for (std::size_t bh = 0; bh < grid.n_h; ++bh)
            for (std::size_t bw = 0; bw < grid.n_w; ++bw) {
                S* token = tokens.data() + ((bt * grid.n_h + bh) * grid.n_w + bw) * grid.token_dim;
                std::size_t idx = 0;
                for (std::size_t dt = 0; dt < t; ++dt)
                    for (std::size_t dy = 0; dy < h; ++dy)
                        for (std::size_t dx = 0; dx < w; ++dx)
                            for (std::size_t c = 0; c < C; ++c)
                                token[idx++] = clip[((bt * t + dt) * C + c) * H * W +
                                                    (bh * h + dy) * W + (bw * w + dx)];
            }
    return tokens;
}

template <typename S>
Tensor<S> tubelet_untokenize(const Tensor<S>& tokens, const TubeletGrid& grid,
                             const Shape& clip_shape) {
    if (clip_shape.size() != 4) throw ShapeError("untokenize: clip shape must be 4-d");
    if (tokens.ndim() != 2 || tokens.extent(0) != grid.N || tokens.extent(1) != grid.token_dim)
        throw ShapeError("untokenize: tokens " + shape_str(tokens.shape()) +
                         " do not match grid (N=" + std::to_string(grid.N) +
                         ", token_dim=" + std::to_string(grid.token_dim) + ")");
    const std::size_t T = clip_shape[0], C = clip_shape[1], H = clip_shape[2], W = clip_shape[3];
    if (T * C * H * W != grid.N * grid.token_dim || T % grid.n_t != 0 || H % grid.n_h != 0 ||
        W % grid.n_w != 0)
        throw ShapeError("untokenize: clip shape " + shape_str(clip_shape) +
                         " inconsistent with grid");
    const std::size_t t = T / grid.n_t, h = H / grid.n_h, w = W / grid.n_w;

    Tensor<S> clip(clip_shape);
    for (std::size_t bt = 0; bt < grid.n_t; ++bt)
        for (std::size_t bh = 0; bh < grid.n_h; ++bh)
            for (std::size_t bw = 0; bw < grid.n_w; ++bw) {
                const S* token =
                    tokens.data() + ((bt * grid.n_h + bh) * grid.n_w + bw) * grid.token_dim;
                std::size_t idx = 0;
                for (std::size_t dt = 0; dt < t; ++dt)
                    for (std::size_t dy = 0; dy < h; ++dy)
                        for (std::size_t dx = 0; dx < w; ++dx)
                            for (std::size_t c = 0; c < C; ++c)
                                clip[((bt * t + dt) * C + c) * H * W + (bh * h + dy) * W +
                                     (bw * w + dx)] = token[idx++];
            }
    return clip;
}

// ---------------------------------------------------------------------------
// embedding

/// z_0: row 0 is the class token, row i is token i-1 projected, plus the
/// position table.
template <typename S>
Tensor<S> embed_sequence(const Tensor<S>& tokens, const ModelParams<S>& params) {
    if (tokens.ndim() != 2 || tokens.extent(1) != params.embed.extent(0))
        throw ShapeError("embed: tokens " + shape_str(tokens.shape()) +
                         " vs projection " + shape_str(params.embed.shape()));
    const std::size_t N = tokens.extent(0), K = params.embed.extent(1);
    if (params.pos.extent(0) != N + 1 || params.pos.extent(1) != K)
        throw ShapeError("embed: position table " + shape_str(params.pos.shape()) +
                         " wants [" + std::to_string(N + 1) + "x" + std::to_string(K) + "]");
    Tensor<S> projected = matmul(tokens, params.embed);
    Tensor<S> z0({N + 1, K});
    for (std::size_t j = 0; j < K; ++j) z0[j] = params.cls[j] + params.pos[j];
    for (std::size_t i = 0; i < N; ++i)
        for (std::size_t j = 0; j < K; ++j)
            z0[(i + 1) * K + j] = projected[i * K + j] + params.pos[(i + 1) * K + j];
    return z0;
}

// ---------------------------------------------------------------------------
// encoder

template <typename S>
struct EncoderTrace {
    std::vector<Tensor<S>> z;        // z_0 .. z_L
    std::vector<Tensor<S>> z_prime;  // post-attention residual per layer
    Tensor<S> p;                     // [K], final feature
    // caches for the backward pass
    std::vector<Tensor<S>> ln1_out, ln2_out, mlp_pre;
    std::vector<AttentionTrace<S>> attn;
};

template <typename S>
Tensor<S> apply_mlp_activation(const Tensor<S>& x, MlpActivation act) {
    return act == MlpActivation::kGelu ? gelu(x) : relu(x);
}

template <typename S>
Tensor<S> mlp_activation_backward(const Tensor<S>& x, const Tensor<S>& dy, MlpActivation act) {
    return act == MlpActivation::kGelu ? gelu_backward(x, dy) : relu_backward(x, dy);
}

template <typename S>
EncoderTrace<S> encoder_forward(const Tensor<S>& z0, const ModelParams<S>& params,
                                const ModelConfig& config) {
    if (params.layers.size() != config.L)
        throw ConfigError("encoder: params have " + std::to_string(params.layers.size()) +
                          " layers, config wants " + std::to_string(config.L));
    EncoderTrace<S> trace;
    trace.z.push_back(z0);
    for (std::size_t l = 0; l < config.L; ++l) {
        const auto& layer = params.layers[l];
        const Tensor<S>& zin = trace.z.back();

        Tensor<S> ln1 = layer_norm(zin, layer.ln1_gamma, layer.ln1_beta, config.ln_eps);
        AttentionTrace<S> attn_trace;
        Tensor<S> attn_out = multi_head_attention(ln1, layer.wq, layer.wk, layer.wv, layer.wo,
                                                  config.heads, &attn_trace);
        Tensor<S> zp = add(attn_out, zin);

        Tensor<S> ln2 = layer_norm(zp, layer.ln2_gamma, layer.ln2_beta, config.ln_eps);
        Tensor<S> pre = linear(ln2, layer.mlp_w1, layer.mlp_b1);
        Tensor<S> hidden = apply_mlp_activation(pre, config.mlp_activation);
        Tensor<S> mlp_out = linear(hidden, layer.mlp_w2, layer.mlp_b2);
        Tensor<S> zl = add(mlp_out, zp);

        if (!zl.all_finite() || !zp.all_finite())
            throw NumericError("encoder layer " + std::to_string(l) +
                               " produced non-finite activations");

        trace.ln1_out.push_back(std::move(ln1));
        trace.attn.push_back(std::move(attn_trace));
        trace.z_prime.push_back(std::move(zp));
        trace.ln2_out.push_back(std::move(ln2));
        trace.mlp_pre.push_back(std::move(pre));
        trace.z.push_back(std::move(zl));
    }
    // class-token row through the final norm
    const Tensor<S>& zl = trace.z.back();
    const std::size_t K = zl.extent(1);
    Tensor<S> row0({1, K});
    std::copy_n(zl.data(), K, row0.data());
    Tensor<S> p = layer_norm(row0, params.final_ln_gamma, params.final_ln_beta, config.ln_eps);
    trace.p = p.with_shape({K});
    return trace;
}

// ---------------------------------------------------------------------------
// decoder

template <typename S>
struct DecoderStageTrace {
    Tensor<S> input;      // [C x H x W] before upsampling
    Tensor<S> upsampled;
    Tensor<S> conv_out;   // pre-norm
    BatchNormResult<S> bn;
};

template <typename S>
struct DecoderTrace {
    Tensor<S> fc1_pre, fc1_act;  // [1 x fc_hidden]
    Tensor<S> flat;              // [1 x base*base*c0]
    std::vector<DecoderStageTrace<S>> stages;
    Tensor<S> head_pre;          // [C*output_frames x H x W], pre-sigmoid
    Tensor<S> output;            // [output_frames x C x H x W], in [0,1]
};

template <typename S>
DecoderTrace<S> decoder_forward(const Tensor<S>& p, const ModelParams<S>& params,
                                const ModelConfig& config, BatchNormMode mode) {
    if (p.numel() != config.K) throw ShapeError("decoder: feature length != K");
    if (params.stages.size() != config.decoder_channels.size())
        throw ConfigError("decoder: params have " + std::to_string(params.stages.size()) +
                          " stages, config wants " +
                          std::to_string(config.decoder_channels.size()));
    DecoderTrace<S> trace;

    Tensor<S> row = p;
    row = row.with_shape({1, config.K});
    trace.fc1_pre = linear(row, params.fc1_w, params.fc1_b);
    trace.fc1_act = relu(trace.fc1_pre);
    trace.flat = linear(trace.fc1_act, params.fc2_w, params.fc2_b);

    Tensor<S> x = trace.flat.with_shape(
        {config.decoder_c0, config.decoder_base, config.decoder_base});
    for (std::size_t s = 0; s < params.stages.size(); ++s) {
        const auto& stage = params.stages[s];
        DecoderStageTrace<S> st;
        st.input = x;
        st.upsampled = upsample_nn_2x(st.input);
        st.conv_out = conv2d(st.upsampled, stage.conv_w, 1, 1);
        Tensor<S> batched = st.conv_out;
        batched = batched.with_shape({1, st.conv_out.extent(0), st.conv_out.extent(1),
                                      st.conv_out.extent(2)});
        st.bn = batch_norm(batched, stage.bn_gamma, stage.bn_beta, stage.bn_running_mean,
                           stage.bn_running_var, mode, config.bn_eps, config.bn_momentum);
        Tensor<S> activated = relu(st.bn.y);
        x = activated.with_shape(st.conv_out.shape());
        trace.stages.push_back(std::move(st));
    }

    Tensor<S> head = conv2d(x, params.head_w, 1, 0);
    trace.head_pre = add_channel_bias(head, params.head_b);
    Tensor<S> squashed = sigmoid(trace.head_pre);
    trace.output =
        squashed.with_shape({config.output_frames, config.C, config.H, config.W});
    return trace;
}

// ---------------------------------------------------------------------------
// full forward

template <typename S>
struct ModelTrace {
    Tensor<S> tokens;
    Tensor<S> z0;
    EncoderTrace<S> encoder;
    DecoderTrace<S> decoder;
};

template <typename S>
ModelTrace<S> model_forward(const Tensor<S>& clip, const ModelParams<S>& params,
                            const ModelConfig& config, BatchNormMode mode) {
    const TubeletGrid grid = TubeletGrid::from(config);
    ModelTrace<S> trace;
    trace.tokens = tubelet_tokenize(clip, grid);
    trace.z0 = embed_sequence(trace.tokens, params);
    trace.encoder = encoder_forward(trace.z0, params, config);
    trace.decoder = decoder_forward(trace.encoder.p, params, config, mode);
    return trace;
}

/// Inference-mode single-frame prediction: [C x H x W] in [0,1].
template <typename S>
Tensor<S> predict_next_frame(const Tensor<S>& clip, const ModelParams<S>& params,
                             const ModelConfig& config) {
    if (config.output_frames != 1)
        throw ConfigError("predict_next_frame: config emits " +
                          std::to_string(config.output_frames) + " frames, want 1");
    ModelTrace<S> trace = model_forward(clip, params, config, BatchNormMode::kInfer);
    return trace.decoder.output.with_shape({config.C, config.H, config.W});
}

}  // namespace andt
