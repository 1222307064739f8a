#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <string>
#include <vector>

#include "andt/model.hpp"
#include "andt/ops.hpp"
#include "andt/tensor.hpp"

// Reverse-mode gradients for the full model. Each block here undoes one
// forward block from model.hpp using the per-op vector-Jacobian rules in
// ops.hpp; the caches in the forward traces keep the backward pass free of
// redundant recomputation except for cheap elementwise activations.

namespace andt {

template <typename S>
struct ModelGradients {
    double loss = 0.0;
    ModelParams<S> grads;  // gradient in every trainable slot, buffers zero
    ModelTrace<S> trace;   // forward trace; decoder stages carry updated running stats
};

template <typename S>
ModelGradients<S> model_backward(const Tensor<S>& clip, const Tensor<S>& target,
                                 const ModelParams<S>& params, const ModelConfig& config) {
    ModelGradients<S> result;
    result.trace = model_forward(clip, params, config, BatchNormMode::kTrain);
    result.grads = zero_params_like(params);
    const ModelTrace<S>& trace = result.trace;
    ModelParams<S>& g = result.grads;

    Tensor<S> shaped_target = target;
    if (target.shape() != trace.decoder.output.shape()) {
        if (target.numel() != trace.decoder.output.numel())
            throw ShapeError("target " + shape_str(target.shape()) + " vs model output " +
                             shape_str(trace.decoder.output.shape()));
        shaped_target = shaped_target.with_shape(trace.decoder.output.shape());
    }
    result.loss = mean_squared_error(trace.decoder.output, shaped_target);
    Tensor<S> doutput = mean_squared_error_backward(trace.decoder.output, shaped_target, 1.0);

    // ---- decoder ----
    const DecoderTrace<S>& dec = trace.decoder;
    Tensor<S> squashed = dec.output;
    squashed = squashed.with_shape(dec.head_pre.shape());
    Tensor<S> dhead_pre = sigmoid_backward(squashed, doutput.with_shape(dec.head_pre.shape()));
    g.head_b = channel_bias_backward(dhead_pre);

    const DecoderStageTrace<S>& last = dec.stages.back();
    Tensor<S> last_act = relu(last.bn.y).with_shape(last.conv_out.shape());
    Tensor<S> dstage_out;  // gradient w.r.t. a stage's activated output
    conv2d_backward(last_act, params.head_w, 1, 0, dhead_pre, dstage_out, g.head_w);

    for (std::size_t s = dec.stages.size(); s-- > 0;) {
        const DecoderStageTrace<S>& st = dec.stages[s];
        const DecoderStageParams<S>& sp = params.stages[s];
        Tensor<S> dbn_y = relu_backward(st.bn.y, dstage_out.with_shape(st.bn.y.shape()));
        Tensor<S> batched = st.conv_out;
        batched = batched.with_shape(st.bn.y.shape());
        BatchNormGrads<S> bn_grads =
            batch_norm_backward(batched, sp.bn_gamma, st.bn.batch_mean, st.bn.batch_var,
                                BatchNormMode::kTrain, config.bn_eps, dbn_y);
        g.stages[s].bn_gamma = std::move(bn_grads.dgamma);
        g.stages[s].bn_beta = std::move(bn_grads.dbeta);
        Tensor<S> dconv_out = bn_grads.dx.with_shape(st.conv_out.shape());
        Tensor<S> dupsampled;
        conv2d_backward(st.upsampled, sp.conv_w, 1, 1, dconv_out, dupsampled,
                        g.stages[s].conv_w);
        dstage_out = upsample_nn_2x_backward(dupsampled);
    }

    Tensor<S> dflat = dstage_out.with_shape(dec.flat.shape());
    Tensor<S> dfc1_act;
    linear_backward(dec.fc1_act, params.fc2_w, dflat, dfc1_act, g.fc2_w, g.fc2_b);
    Tensor<S> dfc1_pre = relu_backward(dec.fc1_pre, dfc1_act);
    Tensor<S> p_row = trace.encoder.p;
    p_row = p_row.with_shape({1, config.K});
    Tensor<S> dp_row;
    linear_backward(p_row, params.fc1_w, dfc1_pre, dp_row, g.fc1_w, g.fc1_b);

    // ---- final layer norm over the class-token row ----
    const EncoderTrace<S>& enc = trace.encoder;
    const Tensor<S>& zL = enc.z.back();
    const std::size_t K = config.K, rows = zL.extent(0);
    Tensor<S> row0({1, K});
    std::copy_n(zL.data(), K, row0.data());
    Tensor<S> drow0;
    layer_norm_backward(row0, params.final_ln_gamma, config.ln_eps, dp_row, drow0,
                        g.final_ln_gamma, g.final_ln_beta);
    Tensor<S> dz({rows, K});
    std::copy_n(drow0.data(), K, dz.data());

    // ---- encoder layers, in reverse ----
    for (std::size_t l = config.L; l-- > 0;) {
        const EncoderLayerParams<S>& layer = params.layers[l];
        EncoderLayerParams<S>& lg = g.layers[l];
        const Tensor<S>& zin = enc.z[l];
        const Tensor<S>& zp = enc.z_prime[l];

        Tensor<S> hidden = apply_mlp_activation(enc.mlp_pre[l], config.mlp_activation);
        Tensor<S> dhidden;
        linear_backward(hidden, layer.mlp_w2, dz, dhidden, lg.mlp_w2, lg.mlp_b2);
        Tensor<S> dpre = mlp_activation_backward(enc.mlp_pre[l], dhidden, config.mlp_activation);
        Tensor<S> dln2;
        linear_backward(enc.ln2_out[l], layer.mlp_w1, dpre, dln2, lg.mlp_w1, lg.mlp_b1);
        Tensor<S> dzp_mlp;
        layer_norm_backward(zp, layer.ln2_gamma, config.ln_eps, dln2, dzp_mlp, lg.ln2_gamma,
                            lg.ln2_beta);
        Tensor<S> dzp = add(dz, dzp_mlp);

        AttentionGrads<S> attn_grads = multi_head_attention_backward(
            enc.ln1_out[l], layer.wq, layer.wk, layer.wv, layer.wo, enc.attn[l], dzp);
        lg.wq = std::move(attn_grads.dwq);
        lg.wk = std::move(attn_grads.dwk);
        lg.wv = std::move(attn_grads.dwv);
        lg.wo = std::move(attn_grads.dwo);
        Tensor<S> dzin_attn;
        layer_norm_backward(zin, layer.ln1_gamma, config.ln_eps, attn_grads.dz, dzin_attn,
                            lg.ln1_gamma, lg.ln1_beta);
        dz = add(dzp, dzin_attn);
    }

    // ---- embedding ----
    // dz is now the gradient of z_0. Row 0 feeds the class token, the rest
    // feed the projected tubelets; the position table sees every row.
    g.pos = dz;
    for (std::size_t j = 0; j < K; ++j) g.cls[j] = dz[j];
    const std::size_t N = rows - 1;
    Tensor<S> dprojected({N, K});
    std::copy_n(dz.data() + K, N * K, dprojected.data());
    Tensor<S> dtokens;
    matmul_backward(trace.tokens, params.embed, dprojected, dtokens, g.embed);
    return result;
}

// ---------------------------------------------------------------------------
// whole-model finite-difference verification

struct ModelGradCheckGroup {
    std::string name;
    double max_rel_error = 0.0;
};

struct ModelGradCheckReport {
    double max_rel_error = 0.0;
    bool pass = false;
    std::vector<ModelGradCheckGroup> groups;
};

/// Central-difference check of model_backward against the training-mode
/// forward loss, parameter group by parameter group. `max_probes_per_group`
/// limits how many elements of each tensor are probed (0 = all of them),
/// sampling deterministically from `seed`. The step is small because the
/// decoder's relu kinks poison wider difference quotients; in double
/// precision 1e-6 still leaves ~6 clean digits.
inline ModelGradCheckReport model_finite_diff_check(const ModelConfig& config,
                                                    std::uint64_t seed,
                                                    double tolerance = 1e-3,
                                                    double step = 1e-6,
                                                    std::size_t max_probes_per_group = 0) {
    config.validate();
    ModelParams<double> params = init_params<double>(config, seed);
    Rng rng(seed + 1);
    Tensor<double> clip({config.T, config.C, config.H, config.W});
    for (std::size_t i = 0; i < clip.numel(); ++i) clip[i] = rng.uniform(0.0, 1.0);
    Tensor<double> target({config.output_frames, config.C, config.H, config.W});
    for (std::size_t i = 0; i < target.numel(); ++i) target[i] = rng.uniform(0.0, 1.0);

    ModelGradients<double> analytic = model_backward(clip, target, params, config);
    const auto loss_at = [&](const ModelParams<double>& perturbed) {
        ModelTrace<double> trace =
            model_forward(clip, perturbed, config, BatchNormMode::kTrain);
        Tensor<double> shaped = target;
        shaped = shaped.with_shape(trace.decoder.output.shape());
        return mean_squared_error(trace.decoder.output, shaped);
    };

    ModelGradCheckReport report;
    std::vector<const Tensor<double>*> grad_by_group;
    std::vector<std::string> names;
    for_each_param(analytic.grads, [&](const std::string& name, Tensor<double>& tensor) {
        names.push_back(name);
        grad_by_group.push_back(&tensor);
    });

    ModelParams<double> work = params;
    std::vector<Tensor<double>*> work_tensors;
    for_each_param(work, [&](const std::string&, Tensor<double>& tensor) {
        work_tensors.push_back(&tensor);
    });

    for (std::size_t group = 0; group < names.size(); ++group) {
        Tensor<double>& tensor = *work_tensors[group];
        const Tensor<double>& grad = *grad_by_group[group];
        std::vector<std::size_t> probes;
        if (max_probes_per_group == 0 || tensor.numel() <= max_probes_per_group) {
            probes.resize(tensor.numel());
            for (std::size_t i = 0; i < probes.size(); ++i) probes[i] = i;
        } else {
            for (std::size_t i = 0; i < max_probes_per_group; ++i)
                probes.push_back(rng.integer(tensor.numel()));
        }
        ModelGradCheckGroup entry;
        entry.name = names[group];
        for (const std::size_t i : probes) {
            const double saved = tensor[i];
            tensor[i] = saved + step;
            const double up = loss_at(work);
            tensor[i] = saved - step;
            const double down = loss_at(work);
            tensor[i] = saved;
            const double numeric = (up - down) / (2.0 * step);
            const double a = grad[i];
            const double rel =
                std::abs(a - numeric) / std::max({std::abs(a), std::abs(numeric), 1e-3});
            entry.max_rel_error = std::max(entry.max_rel_error, rel);
        }
        report.max_rel_error = std::max(report.max_rel_error, entry.max_rel_error);
        report.groups.push_back(std::move(entry));
    }
    report.pass = report.max_rel_error <= tolerance;
    return report;
}

}  // namespace andt
