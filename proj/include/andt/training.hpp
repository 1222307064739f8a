#pragma once

#include <chrono>
#include <cmath>
#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "andt/data.hpp"
#include "andt/model.hpp"
#include "andt/model_grad.hpp"
#include "andt/tensor.hpp"

// Objective, optimizer, and the training loop. Everything is seeded and
// sequential, so a rerun with the same inputs reproduces parameters bit for
// bit.

namespace andt {

enum class TrainMode { kPrediction1, kReconstruction1, kReconstruction6 };

inline const char* train_mode_name(TrainMode mode) {
    switch (mode) {
        case TrainMode::kPrediction1: return "prediction-1";
        case TrainMode::kReconstruction1: return "reconstruction-1";
        case TrainMode::kReconstruction6: return "reconstruction-6";
    }
    return "?";
}

inline TrainMode parse_train_mode(const std::string& name) {
    if (name == "prediction-1") return TrainMode::kPrediction1;
    if (name == "reconstruction-1") return TrainMode::kReconstruction1;
    if (name == "reconstruction-6") return TrainMode::kReconstruction6;
    throw ConfigError("unknown mode '" + name +
                      "' (want prediction-1, reconstruction-1, or reconstruction-6)");
}

struct TrainConfig {
    TrainMode mode = TrainMode::kPrediction1;
    double learning_rate = 2e-4;
    std::size_t batch_size = 4;
    std::size_t epochs = 1;
    std::uint64_t seed = 0;
    std::string precision = "f32";
    double clip_norm = 0.0;  // 0 disables gradient clipping
    std::size_t window_stride = 1;

    void validate() const {
        if (!(learning_rate > 0.0)) throw ConfigError("learning rate must be > 0");
        if (epochs < 1) throw ConfigError("epochs must be >= 1");
        if (batch_size < 1) throw ConfigError("batch size must be >= 1");
        if (window_stride < 1) throw ConfigError("window stride must be >= 1");
        if (precision != "f32" && precision != "f64")
            throw ConfigError("precision must be f32 or f64, got '" + precision + "'");
        if (clip_norm < 0.0) throw ConfigError("clip norm must be >= 0");
    }
};

/// Frames the model must emit for a mode; ModelConfig.output_frames has to
/// agree before training or scoring.
inline std::size_t mode_output_frames(TrainMode mode, std::size_t T) {
    return mode == TrainMode::kReconstruction6 ? T : 1;
}

inline void check_mode_config(TrainMode mode, const ModelConfig& config) {
    if (config.output_frames != mode_output_frames(mode, config.T))
        throw ConfigError(std::string("mode ") + train_mode_name(mode) + " needs " +
                          std::to_string(mode_output_frames(mode, config.T)) +
                          " output frames, model config emits " +
                          std::to_string(config.output_frames));
    if (mode == TrainMode::kReconstruction1 && config.T != 1)
        throw ConfigError("reconstruction-1 runs with a single input frame; set T = 1");
}

/// Mean over elements of the squared intensity difference.
template <typename S>
double prediction_loss(const Tensor<S>& pred, const Tensor<S>& target) {
    return mean_squared_error(pred, target);
}

/// Pairs a sliding window with its loss target for a training mode:
/// prediction predicts the frame after the window; the reconstruction
/// ablations re-emit the input itself (one frame or all T of them).
template <typename S>
std::pair<Tensor<S>, Tensor<S>> build_target(const ClipWindow<S>& window, TrainMode mode,
                                             const ModelConfig& config) {
    check_mode_config(mode, config);
    switch (mode) {
        case TrainMode::kPrediction1:
            return {window.clip, window.target};
        case TrainMode::kReconstruction1: {
            Tensor<S> frame = window.clip;
            frame = frame.with_shape({window.clip.extent(1), window.clip.extent(2),
                                      window.clip.extent(3)});
            return {window.clip, std::move(frame)};
        }
        case TrainMode::kReconstruction6:
            return {window.clip, window.clip};
    }
    throw ConfigError("invalid mode");
}

// ---------------------------------------------------------------------------
// optimizer

template <typename S>
struct AdamState {
    ModelParams<S> m, v;
    std::uint64_t step = 0;

    static AdamState init(const ModelParams<S>& params) {
        AdamState state;
        state.m = zero_params_like(params);
        state.v = zero_params_like(params);
        return state;
    }
};

/// Bias-corrected adaptive-moment step, computed in double per element.
template <typename S>
void adam_update(ModelParams<S>& params, const ModelParams<S>& grads, AdamState<S>& state,
                 double lr, double beta1 = 0.9, double beta2 = 0.999, double eps = 1e-8) {
    ++state.step;
    const double bc1 = 1.0 - std::pow(beta1, static_cast<double>(state.step));
    const double bc2 = 1.0 - std::pow(beta2, static_cast<double>(state.step));

    std::vector<Tensor<S>*> p, m, v;
    std::vector<const Tensor<S>*> g;
    for_each_param(params, [&](const std::string&, Tensor<S>& t) { p.push_back(&t); });
    for_each_param(grads, [&](const std::string&, const Tensor<S>& t) { g.push_back(&t); });
    for_each_param(state.m, [&](const std::string&, Tensor<S>& t) { m.push_back(&t); });
    for_each_param(state.v, [&](const std::string&, Tensor<S>& t) { v.push_back(&t); });

    for (std::size_t k = 0; k < p.size(); ++k) {
        if (p[k]->shape() != g[k]->shape())
            throw ShapeError("adam: gradient " + shape_str(g[k]->shape()) +
                             " vs parameter " + shape_str(p[k]->shape()));
        for (std::size_t i = 0; i < p[k]->numel(); ++i) {
            const double grad = static_cast<double>((*g[k])[i]);
            const double mi = beta1 * static_cast<double>((*m[k])[i]) + (1.0 - beta1) * grad;
            const double vi =
                beta2 * static_cast<double>((*v[k])[i]) + (1.0 - beta2) * grad * grad;
            (*m[k])[i] = static_cast<S>(mi);
            (*v[k])[i] = static_cast<S>(vi);
            const double update = lr * (mi / bc1) / (std::sqrt(vi / bc2) + eps);
            (*p[k])[i] = static_cast<S>(static_cast<double>((*p[k])[i]) - update);
        }
    }
}

// ---------------------------------------------------------------------------
// training loop

struct TrainHistory {
    std::vector<double> epoch_loss;
    std::vector<double> epoch_seconds;
    std::string config_fingerprint;
};

template <typename S>
struct FitResult {
    ModelParams<S> params;
    AdamState<S> opt;
    TrainHistory history;
};

/// Scales gradients down to a global L2 norm of `clip_norm` when they exceed
/// it; no-op otherwise.
template <typename S>
double clip_gradients(ModelParams<S>& grads, double clip_norm) {
    double sq = 0.0;
    for_each_param(grads, [&](const std::string&, const Tensor<S>& t) {
        for (std::size_t i = 0; i < t.numel(); ++i) {
            const double x = static_cast<double>(t[i]);
            sq += x * x;
        }
    });
    const double norm = std::sqrt(sq);
    if (clip_norm > 0.0 && norm > clip_norm) {
        const double scale = clip_norm / norm;
        for_each_param(grads, [&](const std::string&, Tensor<S>& t) {
            for (std::size_t i = 0; i < t.numel(); ++i)
                t[i] = static_cast<S>(static_cast<double>(t[i]) * scale);
        });
    }
    return norm;
}

/// Trains on every sliding window of the given videos. Window order is
/// reshuffled each epoch from the seed; batches run sequentially and their
/// gradients are averaged for one optimizer step per batch. Batch-norm
/// running statistics thread through sample by sample.
template <typename S>
FitResult<S> fit(const std::vector<VideoSequence<S>>& videos, const ModelConfig& mconfig,
                 const TrainConfig& tconfig, const std::string& config_fingerprint = "") {
    mconfig.validate();
    tconfig.validate();
    check_mode_config(tconfig.mode, mconfig);

    std::vector<ClipWindow<S>> windows;
    for (const auto& video : videos) {
        auto w = window_clips(video, mconfig.T, tconfig.window_stride);
        for (auto& win : w) windows.push_back(std::move(win));
    }
    if (windows.empty())
        throw DataError("no training windows: every sequence is shorter than T+1 = " +
                        std::to_string(mconfig.T + 1) + " frames");

    FitResult<S> result;
    result.params = init_params<S>(mconfig, tconfig.seed);
    result.opt = AdamState<S>::init(result.params);
    result.history.config_fingerprint = config_fingerprint;

    Rng order_rng(tconfig.seed + 1);
    std::vector<std::size_t> order(windows.size());
    for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;

    for (std::size_t epoch = 0; epoch < tconfig.epochs; ++epoch) {
        const auto started = std::chrono::steady_clock::now();
        for (std::size_t i = order.size(); i > 1; --i)
            std::swap(order[i - 1], order[order_rng.integer(i)]);

        double epoch_loss_sum = 0.0;
        for (std::size_t batch_start = 0, batch_index = 0; batch_start < order.size();
             batch_start += tconfig.batch_size, ++batch_index) {
            const std::size_t batch_end =
                std::min(batch_start + tconfig.batch_size, order.size());
            const std::size_t batch_n = batch_end - batch_start;

            ModelParams<S> grad_sum = zero_params_like(result.params);
            double batch_loss_sum = 0.0;
            for (std::size_t k = batch_start; k < batch_end; ++k) {
                const ClipWindow<S>& window = windows[order[k]];
                auto [input, target] = build_target(window, tconfig.mode, mconfig);
                ModelGradients<S> grads;
                try {
                    grads = model_backward(input, target, result.params, mconfig);
                } catch (const NumericError& e) {
                    throw NumericError(std::string(e.what()) + " (epoch " +
                                       std::to_string(epoch) + ", batch " +
                                       std::to_string(batch_index) + ")");
                }
                batch_loss_sum += grads.loss;
                std::vector<Tensor<S>*> acc;
                std::vector<const Tensor<S>*> src;
                for_each_param(grad_sum,
                               [&](const std::string&, Tensor<S>& t) { acc.push_back(&t); });
                for_each_param(grads.grads, [&](const std::string&, const Tensor<S>& t) {
                    src.push_back(&t);
                });
                for (std::size_t j = 0; j < acc.size(); ++j) add_into(*acc[j], *src[j]);
                // carry the running statistics forward into the next sample
                for (std::size_t s = 0; s < result.params.stages.size(); ++s) {
                    result.params.stages[s].bn_running_mean =
                        grads.trace.decoder.stages[s].bn.new_running_mean;
                    result.params.stages[s].bn_running_var =
                        grads.trace.decoder.stages[s].bn.new_running_var;
                }
            }

            const double batch_loss = batch_loss_sum / static_cast<double>(batch_n);
            if (!std::isfinite(batch_loss))
                throw NumericError("non-finite loss at epoch " + std::to_string(epoch) +
                                   ", batch " + std::to_string(batch_index));
            epoch_loss_sum += batch_loss_sum;

            const double inv = 1.0 / static_cast<double>(batch_n);
            for_each_param(grad_sum, [&](const std::string&, Tensor<S>& t) {
                for (std::size_t i = 0; i < t.numel(); ++i)
                    t[i] = static_cast<S>(static_cast<double>(t[i]) * inv);
            });
            clip_gradients(grad_sum, tconfig.clip_norm);
            adam_update(result.params, grad_sum, result.opt, tconfig.learning_rate);
        }

        const auto finished = std::chrono::steady_clock::now();
        result.history.epoch_loss.push_back(epoch_loss_sum /
                                            static_cast<double>(order.size()));
        result.history.epoch_seconds.push_back(
            std::chrono::duration<double>(finished - started).count());
    }
    return result;
}

}  // namespace andt
