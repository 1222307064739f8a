#pragma once

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <string>
#include <vector>

#include <json.hpp>

#include "andt/checkpoint.hpp"
#include "andt/data.hpp"
#include "andt/evaluation.hpp"
#include "andt/gradcheck.hpp"
#include "andt/model_grad.hpp"
#include "andt/report_io.hpp"
#include "andt/training.hpp"

// Command implementations behind the `andt` binary. The binary itself only
// parses flags and dispatches here, so every command is also callable from
// tests without spawning a process.
//
// Exit code contract: 0 success, 1 check failure, 2 usage/config/data error,
// 3 numeric fault.

namespace andt {

/// Maps the library's exception taxonomy onto the exit-code contract.
template <typename F>
int run_guarded(F&& body) {
    try {
        return body();
    } catch (const NumericError& e) {
        std::cerr << "numeric fault: " << e.what() << '\n';
        return 3;
    } catch (const Error& e) {
        std::cerr << "error: " << e.what() << '\n';
        return 2;
    } catch (const std::exception& e) {
        std::cerr << "fault: " << e.what() << '\n';
        return 3;
    }
}

// ---------------------------------------------------------------------------
// run configuration

struct RunConfig {
    ModelConfig model;
    TrainConfig train;
    std::string scene;  // empty: discover the single scene under the data root
    std::string data;   // dataset root; --data overrides
    std::string out;    // output directory; --out overrides
};

inline RunConfig parse_run_config(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("cannot open " + path);
    nlohmann::json j;
    try {
        in >> j;
    } catch (const nlohmann::json::exception& e) {
        throw ConfigError("config parse error in " + path + ": " + e.what());
    }
    if (!j.is_object()) throw ConfigError("config root must be a JSON object in " + path);
    RunConfig rc;
    for (const auto& [key, value] : j.items()) {
        if (key == "model") {
            apply_model_config_json(value, rc.model);
        } else if (key == "train") {
            apply_train_config_json(value, rc.train);
        } else if (key == "scene" || key == "data" || key == "out") {
            if (!value.is_string())
                throw ConfigError("config key '" + key + "' must be a string");
            (key == "scene" ? rc.scene : key == "data" ? rc.data : rc.out) =
                value.get<std::string>();
        } else {
            throw ConfigError("unknown config key '" + key + "'");
        }
    }
    return rc;
}

/// Content hash of the resolved model + train settings; stamped into the
/// checkpoint, the history, and every report so results trace back to exact
/// settings. Key order is canonical (nlohmann objects sort keys).
inline std::string config_fingerprint(const ModelConfig& model, const TrainConfig& train) {
    nlohmann::json j;
    j["model"] = model_config_to_json(model);
    j["train"] = train_config_to_json(train);
    return crc32_hex(j.dump());
}

inline void write_resolved_config(const std::string& path, const ModelConfig& model,
                                  const TrainConfig& train) {
    nlohmann::json j;
    j["model"] = model_config_to_json(model);
    j["train"] = train_config_to_json(train);
    j["config_fingerprint"] = config_fingerprint(model, train);
    std::ofstream out = detail::open_text(path);
    out << j.dump(2) << '\n';
    if (!out) throw IoError("write failed: " + path);
}

/// The dataset root holds one directory per scene; with no explicit scene
/// name there must be exactly one.
inline std::string discover_scene(const std::string& root) {
    namespace fs = std::filesystem;
    if (!fs::is_directory(root)) throw IoError("no such data directory: " + root);
    std::vector<std::string> scenes;
    for (const auto& entry : fs::directory_iterator(root))
        if (entry.is_directory()) scenes.push_back(entry.path().filename().string());
    std::sort(scenes.begin(), scenes.end());
    if (scenes.empty()) throw DataError("no scene directories under " + root);
    if (scenes.size() > 1) {
        std::string list;
        for (const std::string& s : scenes) list += (list.empty() ? "" : ", ") + s;
        throw ConfigError("multiple scenes under " + root + " (" + list +
                          "); set \"scene\" in the config");
    }
    return scenes.front();
}

// ---------------------------------------------------------------------------
// synth

struct SynthOptions {
    std::string out;
    std::size_t frames = 96;
    std::string anomaly_spans = "30-60";
    std::uint64_t seed = 0;
};

/// Parses "start-end[,start-end...]" into half-open frame spans. An empty
/// spec means no anomalies.
inline std::vector<std::pair<std::size_t, std::size_t>> parse_spans(const std::string& spec) {
    std::vector<std::pair<std::size_t, std::size_t>> spans;
    std::size_t pos = 0;
    while (pos < spec.size()) {
        const std::size_t comma = std::min(spec.find(',', pos), spec.size());
        const std::string token = spec.substr(pos, comma - pos);
        const std::size_t dash = token.find('-');
        std::size_t start = 0, end = 0;
        try {
            if (dash == std::string::npos || dash == 0 || dash + 1 >= token.size())
                throw std::invalid_argument("span");
            std::size_t used_a = 0, used_b = 0;
            start = std::stoul(token.substr(0, dash), &used_a);
            end = std::stoul(token.substr(dash + 1), &used_b);
            if (used_a != dash || used_b != token.size() - dash - 1)
                throw std::invalid_argument("span");
        } catch (const std::exception&) {
            throw ConfigError("bad anomaly span '" + token +
                              "' (want start-end with start < end, e.g. 30-60)");
        }
        if (start >= end)
            throw ConfigError("bad anomaly span '" + token + "': start must precede end");
        spans.emplace_back(start, end);
        pos = comma + 1;
    }
    return spans;
}

namespace detail {

inline std::string video_name(std::size_t index) {
    char buf[16];
    std::snprintf(buf, sizeof(buf), "video_%02zu", index + 1);
    return buf;
}

}  // namespace detail

/// Writes a synthetic moving-dot dataset: a train split of normal motion and
/// a test split where the labeled spans reverse the motion.
inline int cmd_synth(const SynthOptions& opt) {
    return run_guarded([&] {
        namespace fs = std::filesystem;
        const auto spans = parse_spans(opt.anomaly_spans);
        if (opt.frames == 0) throw ConfigError("--frames must be positive");

        const fs::path scene_dir = fs::path(opt.out) / "synthetic";
        const std::size_t train_videos = 4, test_videos = 2;
        SynthConfig base;
        base.frame_count = opt.frames;

        for (std::size_t i = 0; i < train_videos; ++i) {
            SynthConfig config = base;
            config.seed = opt.seed + i;
            const auto [seq, labels] = synth_moving_dot<float>(config);
            (void)labels;  // train split is all-normal and stays unlabeled
            write_video_dir((scene_dir / "train" / detail::video_name(i)).string(), seq,
                            nullptr);
        }
        for (std::size_t i = 0; i < test_videos; ++i) {
            SynthConfig config = base;
            config.seed = opt.seed + 1000 + i;
            config.anomaly_spans = spans;
            const auto [seq, labels] = synth_moving_dot<float>(config);
            write_video_dir((scene_dir / "test" / detail::video_name(i)).string(), seq,
                            &labels);
        }
        std::cout << "wrote " << train_videos << " train and " << test_videos
                  << " test videos (" << opt.frames << " frames each) under "
                  << scene_dir.string() << '\n';
        return 0;
    });
}

// ---------------------------------------------------------------------------
// train

struct TrainOptions {
    std::string config_path;
    std::string data;  // overrides the config's "data"
    std::string out;   // overrides the config's "out"
};

namespace detail {

template <typename S>
int train_impl(const RunConfig& rc, const std::string& scene) {
    namespace fs = std::filesystem;
    const PreprocessConfig pre{rc.model.H, rc.model.W};
    auto labeled = load_dataset<S>(rc.data, scene, "train", pre);
    std::vector<VideoSequence<S>> videos;
    videos.reserve(labeled.size());
    for (auto& [seq, labels] : labeled) videos.push_back(std::move(seq));

    const std::string fingerprint = config_fingerprint(rc.model, rc.train);
    const FitResult<S> result = fit(videos, rc.model, rc.train, fingerprint);

    fs::create_directories(rc.out);
    Checkpoint<S> ckpt;
    ckpt.model = rc.model;
    ckpt.train = rc.train;
    ckpt.params = result.params;
    ckpt.opt = result.opt;
    ckpt.history = result.history;
    save_checkpoint(ckpt, (fs::path(rc.out) / "checkpoint.andt").string());
    write_history_csv((fs::path(rc.out) / "history.csv").string(), result.history);
    write_resolved_config((fs::path(rc.out) / "resolved_config.json").string(), rc.model,
                          rc.train);

    std::cout << "trained " << rc.train.epochs << " epoch(s) on " << videos.size()
              << " video(s); final epoch loss " << format_full(result.history.epoch_loss.back())
              << '\n';
    return 0;
}

}  // namespace detail

inline int cmd_train(const TrainOptions& opt) {
    return run_guarded([&] {
        RunConfig rc = parse_run_config(opt.config_path);
        if (!opt.data.empty()) rc.data = opt.data;
        if (!opt.out.empty()) rc.out = opt.out;
        if (rc.data.empty())
            throw ConfigError("no dataset root: pass --data or set \"data\" in the config");
        if (rc.out.empty())
            throw ConfigError("no output directory: pass --out or set \"out\" in the config");
        rc.model.validate();
        rc.train.validate();
        check_mode_config(rc.train.mode, rc.model);
        const std::string scene = rc.scene.empty() ? discover_scene(rc.data) : rc.scene;
        if (rc.train.precision == "f64") return detail::train_impl<double>(rc, scene);
        return detail::train_impl<float>(rc, scene);
    });
}

// ---------------------------------------------------------------------------
// eval

struct EvalOptions {
    std::string checkpoint;
    std::string data;
    std::string out;
    std::string mode;  // empty: the mode the checkpoint was trained with
    bool per_video_auc = false;
};

namespace detail {

/// Pooled score/label/feature rows over the computed (non-backfilled) frames
/// of every test video, in manifest order.
struct PooledScores {
    std::vector<double> scores;
    std::vector<int> labels;
    std::vector<std::size_t> frame_indices;
    std::vector<std::vector<double>> features;
};

template <typename S>
int eval_impl(const EvalOptions& opt) {
    namespace fs = std::filesystem;
    const Checkpoint<S> ckpt = load_checkpoint<S>(opt.checkpoint);
    const TrainMode mode =
        opt.mode.empty() ? ckpt.train.mode : parse_train_mode(opt.mode);
    check_mode_config(mode, ckpt.model);
    const std::string scene = discover_scene(opt.data);
    const PreprocessConfig pre{ckpt.model.H, ckpt.model.W};
    fs::create_directories(opt.out);

    // threshold and train-side error level come from the normal training split
    std::vector<double> train_errors;
    for (const auto& [seq, labels] : load_dataset<S>(opt.data, scene, "train", pre)) {
        const VideoScores<S> vs = score_video(ckpt.params, ckpt.model, mode, seq);
        for (std::size_t i = 0; i < vs.series.scores.size(); ++i)
            if (!vs.series.backfilled[i]) train_errors.push_back(vs.series.scores[i]);
    }
    const double threshold = compute_threshold(train_errors);

    EvalSummary summary;
    summary.threshold = threshold;
    summary.msre_train = mean_squared_reconstruction_error(train_errors);

    PooledScores pooled;
    const auto test_set = load_dataset<S>(opt.data, scene, "test", pre);
    for (const auto& [seq, labels] : test_set) {
        const std::vector<int>* label_ptr = labels ? &labels->labels : nullptr;
        const VideoScores<S> vs =
            score_video(ckpt.params, ckpt.model, mode, seq, label_ptr, true);
        write_scores_csv((fs::path(opt.out) / ("scores_" + seq.source_id + ".csv")).string(),
                         vs.series);
        write_score_curve_svg(
            (fs::path(opt.out) / ("curve_" + seq.source_id + ".svg")).string(), vs.series,
            threshold);

        std::vector<double> video_scores;
        std::vector<int> video_labels;
        for (std::size_t i = vs.first_scored; i < vs.series.scores.size(); ++i) {
            video_scores.push_back(vs.series.scores[i]);
            video_labels.push_back(vs.series.labels[i]);
            pooled.frame_indices.push_back(i);
            pooled.features.push_back(std::vector<double>(ckpt.model.K));
            const Tensor<S>& f = vs.features[i - vs.first_scored];
            for (std::size_t j = 0; j < ckpt.model.K; ++j)
                pooled.features.back()[j] = static_cast<double>(f[j]);
        }
        pooled.scores.insert(pooled.scores.end(), video_scores.begin(), video_scores.end());
        pooled.labels.insert(pooled.labels.end(), video_labels.begin(), video_labels.end());

        if (opt.per_video_auc) {
            VideoSummary video;
            video.video_id = seq.source_id;
            try {
                video.auc = roc_auc(video_scores, video_labels).auc;
                video.auc_defined = true;
            } catch (const DataError& e) {
                video.auc_reason = e.what();
            }
            try {
                video.delta_s = delta_s(video_scores, video_labels);
                video.delta_defined = true;
            } catch (const DataError&) {
            }
            summary.per_video.push_back(std::move(video));
        }
    }

    summary.msre_test = mean_squared_reconstruction_error(pooled.scores);
    summary.metrics = threshold_metrics(pooled.scores, pooled.labels, threshold);
    try {
        const RocCurve curve = roc_auc(pooled.scores, pooled.labels);
        summary.auc = curve.auc;
        summary.auc_defined = true;
        write_roc_csv((fs::path(opt.out) / "roc.csv").string(), curve);
    } catch (const DataError& e) {
        summary.auc_reason = e.what();  // single-class test set: report why
    }
    try {
        summary.delta_s = delta_s(pooled.scores, pooled.labels);
        summary.delta_defined = true;
    } catch (const DataError&) {
    }
    try {
        summary.fpr = false_positive_rate(pooled.scores, pooled.labels, threshold);
        summary.fpr_defined = true;
    } catch (const DataError&) {
    }

    Tensor<double> features({pooled.features.size(), ckpt.model.K});
    for (std::size_t i = 0; i < pooled.features.size(); ++i)
        for (std::size_t j = 0; j < ckpt.model.K; ++j)
            features[i * ckpt.model.K + j] = pooled.features[i][j];
    const PcaResult pca = pca_project(features, 3);
    write_features_csv((fs::path(opt.out) / "features.csv").string(), pooled.frame_indices,
                       pooled.labels, features, pca.projected);

    const std::string fingerprint = ckpt.history.config_fingerprint.empty()
                                        ? config_fingerprint(ckpt.model, ckpt.train)
                                        : ckpt.history.config_fingerprint;
    write_report_json((fs::path(opt.out) / "report.json").string(), summary, fingerprint);
    write_resolved_config((fs::path(opt.out) / "resolved_config.json").string(), ckpt.model,
                          ckpt.train);

    std::cout << "evaluated " << test_set.size() << " video(s): auc ";
    if (summary.auc_defined)
        std::cout << format_full(summary.auc);
    else
        std::cout << "undefined (" << summary.auc_reason << ")";
    std::cout << ", threshold " << format_full(threshold) << '\n';
    return 0;
}

}  // namespace detail

inline int cmd_eval(const EvalOptions& opt) {
    return run_guarded([&] {
        const std::string precision = checkpoint_precision(opt.checkpoint);
        if (precision == "f64") return detail::eval_impl<double>(opt);
        if (precision == "f32") return detail::eval_impl<float>(opt);
        throw DataError("checkpoint precision '" + precision + "' is not supported");
    });
}

// ---------------------------------------------------------------------------
// gradcheck

struct GradcheckOptions {
    bool tiny_config = false;  // accepted for symmetry; the probe is always tiny
    double tolerance = 1e-4;
};

namespace detail {

/// Geometry small enough that probing every parameter element stays cheap.
inline ModelConfig gradcheck_model_config() {
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

}  // namespace detail

/// Finite-difference sweep over every registered operator plus the full
/// model. The model row always uses a tiny geometry: probing every element
/// of a full-size model would take hours, and the chain rule being checked
/// is the same.
inline int cmd_gradcheck(const GradcheckOptions& opt) {
    return run_guarded([&] {
        (void)opt.tiny_config;
        if (!(opt.tolerance > 0.0))
            throw ConfigError("--tolerance must be positive");
        const double model_tolerance = opt.tolerance * 10.0;  // model chains many op kinks

        std::vector<std::string> failures;
        std::printf("%-26s %14s %11s  %s\n", "operator", "max_rel_error", "tolerance",
                    "result");
        for (auto& check : differentiable_op_suite(1)) {
            const GradCheckReport report =
                finite_diff_check(check.op, check.inputs, opt.tolerance);
            std::printf("%-26s %14.3e %11.1e  %s\n", report.op_name.c_str(),
                        report.max_rel_error, opt.tolerance,
                        report.pass ? "pass" : "FAIL");
            if (!report.pass) {
                std::string why = report.op_name;
                if (report.aborted)
                    why += " (" + report.diagnostic + ")";
                else
                    why += " (max_rel_error " + format_full(report.max_rel_error) + ")";
                failures.push_back(why);
            }
        }

        const ModelGradCheckReport model_report = model_finite_diff_check(
            detail::gradcheck_model_config(), 61, model_tolerance);
        std::printf("%-26s %14.3e %11.1e  %s\n", "full_model", model_report.max_rel_error,
                    model_tolerance, model_report.pass ? "pass" : "FAIL");
        if (!model_report.pass)
            failures.push_back("full_model (max_rel_error " +
                               format_full(model_report.max_rel_error) + ")");

        if (!failures.empty()) {
            std::printf("FAILED %zu check(s):\n", failures.size());
            for (const std::string& f : failures) std::printf("  %s\n", f.c_str());
            return 1;
        }
        std::printf("all gradient checks passed\n");
        return 0;
    });
}

}  // namespace andt
