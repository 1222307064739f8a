#pragma once

#include <string>

#include <json.hpp>

#include "andt/model.hpp"
#include "andt/training.hpp"

// JSON bindings for the config structs. Keys mirror the struct fields;
// parsing applies only the keys present and rejects anything unknown so a
// typo never silently falls back to a default.

namespace andt {

inline nlohmann::json model_config_to_json(const ModelConfig& c) {
    nlohmann::json j;
    j["T"] = c.T;
    j["C"] = c.C;
    j["H"] = c.H;
    j["W"] = c.W;
    j["t"] = c.t;
    j["h"] = c.h;
    j["w"] = c.w;
    j["K"] = c.K;
    j["L"] = c.L;
    j["heads"] = c.heads;
    j["mlp_size"] = c.mlp_size;
    j["mlp_activation"] = c.mlp_activation == MlpActivation::kGelu ? "gelu" : "relu";
    j["dropout"] = c.dropout;
    j["fc_hidden"] = c.fc_hidden;
    j["decoder_base"] = c.decoder_base;
    j["decoder_c0"] = c.decoder_c0;
    j["decoder_channels"] = c.decoder_channels;
    j["output_frames"] = c.output_frames;
    j["ln_eps"] = c.ln_eps;
    j["bn_eps"] = c.bn_eps;
    j["bn_momentum"] = c.bn_momentum;
    return j;
}

namespace detail {

template <typename T>
T json_value(const nlohmann::json& j, const std::string& key) {
    try {
        return j.get<T>();
    } catch (const nlohmann::json::exception&) {
        throw ConfigError("bad value for config key '" + key + "': " + j.dump());
    }
}

}  // namespace detail

inline void apply_model_config_json(const nlohmann::json& j, ModelConfig& c) {
    if (!j.is_object()) throw ConfigError("model config must be a JSON object");
    for (const auto& [key, value] : j.items()) {
        if (key == "T") c.T = detail::json_value<std::size_t>(value, key);
        else if (key == "C") c.C = detail::json_value<std::size_t>(value, key);
        else if (key == "H") c.H = detail::json_value<std::size_t>(value, key);
        else if (key == "W") c.W = detail::json_value<std::size_t>(value, key);
        else if (key == "t") c.t = detail::json_value<std::size_t>(value, key);
        else if (key == "h") c.h = detail::json_value<std::size_t>(value, key);
        else if (key == "w") c.w = detail::json_value<std::size_t>(value, key);
        else if (key == "K") c.K = detail::json_value<std::size_t>(value, key);
        else if (key == "L") c.L = detail::json_value<std::size_t>(value, key);
        else if (key == "heads") c.heads = detail::json_value<std::size_t>(value, key);
        else if (key == "mlp_size") c.mlp_size = detail::json_value<std::size_t>(value, key);
        else if (key == "mlp_activation") {
            const std::string name = detail::json_value<std::string>(value, key);
            if (name == "gelu") c.mlp_activation = MlpActivation::kGelu;
            else if (name == "relu") c.mlp_activation = MlpActivation::kRelu;
            else throw ConfigError("mlp_activation must be 'gelu' or 'relu', got '" + name + "'");
        }
        else if (key == "dropout") c.dropout = detail::json_value<double>(value, key);
        else if (key == "fc_hidden") c.fc_hidden = detail::json_value<std::size_t>(value, key);
        else if (key == "decoder_base")
            c.decoder_base = detail::json_value<std::size_t>(value, key);
        else if (key == "decoder_c0") c.decoder_c0 = detail::json_value<std::size_t>(value, key);
        else if (key == "decoder_channels")
            c.decoder_channels = detail::json_value<std::vector<std::size_t>>(value, key);
        else if (key == "output_frames")
            c.output_frames = detail::json_value<std::size_t>(value, key);
        else if (key == "ln_eps") c.ln_eps = detail::json_value<double>(value, key);
        else if (key == "bn_eps") c.bn_eps = detail::json_value<double>(value, key);
        else if (key == "bn_momentum") c.bn_momentum = detail::json_value<double>(value, key);
        else throw ConfigError("unknown model config key '" + key + "'");
    }
}

inline nlohmann::json train_config_to_json(const TrainConfig& c) {
    nlohmann::json j;
    j["mode"] = train_mode_name(c.mode);
    j["learning_rate"] = c.learning_rate;
    j["batch_size"] = c.batch_size;
    j["epochs"] = c.epochs;
    j["seed"] = c.seed;
    j["precision"] = c.precision;
    j["clip_norm"] = c.clip_norm;
    j["window_stride"] = c.window_stride;
    return j;
}

inline void apply_train_config_json(const nlohmann::json& j, TrainConfig& c) {
    if (!j.is_object()) throw ConfigError("train config must be a JSON object");
    for (const auto& [key, value] : j.items()) {
        if (key == "mode")
            c.mode = parse_train_mode(detail::json_value<std::string>(value, key));
        else if (key == "learning_rate")
            c.learning_rate = detail::json_value<double>(value, key);
        else if (key == "batch_size") c.batch_size = detail::json_value<std::size_t>(value, key);
        else if (key == "epochs") c.epochs = detail::json_value<std::size_t>(value, key);
        else if (key == "seed") c.seed = detail::json_value<std::uint64_t>(value, key);
        else if (key == "precision") c.precision = detail::json_value<std::string>(value, key);
        else if (key == "clip_norm") c.clip_norm = detail::json_value<double>(value, key);
        else if (key == "window_stride")
            c.window_stride = detail::json_value<std::size_t>(value, key);
        else throw ConfigError("unknown train config key '" + key + "'");
    }
}

}  // namespace andt
