#pragma once

#include <cstdio>
#include <fstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "andt/evaluation.hpp"
#include "andt/training.hpp"

// Writers for the evaluation artifacts: score/ROC/feature/history CSVs, the
// metrics report, and a score-curve SVG. All output is deterministic; numbers
// are printed with enough digits to round-trip and nothing carries a
// timestamp, so rerunning a job reproduces every file byte for byte.

namespace andt {

inline std::string format_full(double v) {
    char buf[40];
    std::snprintf(buf, sizeof(buf), "%.17g", v);
    return buf;
}

namespace detail {

inline std::ofstream open_text(const std::string& path) {
    std::ofstream out(path, std::ios::binary);  // binary: keep LF on every platform
    if (!out) throw IoError("cannot create " + path);
    return out;
}

}  // namespace detail

inline void write_scores_csv(const std::string& path, const ScoreSeries& series) {
    std::ofstream out = detail::open_text(path);
    out << "frame_index,score,label,backfilled\n";
    for (std::size_t i = 0; i < series.scores.size(); ++i)
        out << i << ',' << format_full(series.scores[i]) << ',' << series.labels[i] << ','
            << (series.backfilled[i] ? 1 : 0) << '\n';
    if (!out) throw IoError("write failed: " + path);
}

inline void write_roc_csv(const std::string& path, const RocCurve& curve) {
    std::ofstream out = detail::open_text(path);
    out << "threshold,fpr,tpr\n";
    for (const RocPoint& pt : curve.points)
        out << format_full(pt.threshold) << ',' << format_full(pt.fpr) << ','
            << format_full(pt.tpr) << '\n';
    if (!out) throw IoError("write failed: " + path);
}

inline void write_history_csv(const std::string& path, const TrainHistory& history) {
    std::ofstream out = detail::open_text(path);
    out << "epoch,loss,seconds\n";
    for (std::size_t e = 0; e < history.epoch_loss.size(); ++e)
        out << (e + 1) << ',' << format_full(history.epoch_loss[e]) << ','
            << format_full(history.epoch_seconds[e]) << '\n';
    if (!out) throw IoError("write failed: " + path);
}

/// One row per scored frame: the raw encoder feature followed by its first
/// three principal components.
inline void write_features_csv(const std::string& path,
                               const std::vector<std::size_t>& frame_indices,
                               const std::vector<int>& labels, const Tensor<double>& features,
                               const Tensor<double>& projected) {
    const std::size_t n = features.extent(0), K = features.extent(1);
    if (frame_indices.size() != n || labels.size() != n || projected.extent(0) != n ||
        projected.extent(1) != 3)
        throw ShapeError("write_features_csv: inconsistent row counts");
    std::ofstream out = detail::open_text(path);
    out << "frame_index,label";
    for (std::size_t j = 0; j < K; ++j) out << ",p_" << j;
    out << ",pc1,pc2,pc3\n";
    for (std::size_t i = 0; i < n; ++i) {
        out << frame_indices[i] << ',' << labels[i];
        for (std::size_t j = 0; j < K; ++j) out << ',' << format_full(features[i * K + j]);
        for (std::size_t j = 0; j < 3; ++j) out << ',' << format_full(projected[i * 3 + j]);
        out << '\n';
    }
    if (!out) throw IoError("write failed: " + path);
}

// ---------------------------------------------------------------------------
// metrics report

struct VideoSummary {
    std::string video_id;
    bool auc_defined = false;
    double auc = 0.0;
    std::string auc_reason;
    bool delta_defined = false;
    double delta_s = 0.0;
};

struct EvalSummary {
    bool auc_defined = false;
    double auc = 0.0;
    std::string auc_reason;  // set when auc_defined is false
    ThresholdMetrics metrics;
    bool delta_defined = false;
    double delta_s = 0.0;
    double threshold = 0.0;
    double msre_train = 0.0;
    double msre_test = 0.0;
    bool fpr_defined = false;  // false when the test set has no normal frames
    double fpr = 0.0;
    std::vector<VideoSummary> per_video;  // optional breakdown
};

inline nlohmann::json report_to_json(const EvalSummary& summary,
                                     const std::string& config_fingerprint) {
    nlohmann::json j;
    if (summary.auc_defined) {
        j["auc"] = summary.auc;
    } else {
        j["auc"] = nullptr;
        j["auc_reason"] = summary.auc_reason;
    }
    j["recall"] = summary.metrics.recall;
    j["precision"] = summary.metrics.precision;
    j["f1"] = summary.metrics.f1;
    j["oa"] = summary.metrics.oa;
    if (summary.delta_defined)
        j["delta_s"] = summary.delta_s;
    else
        j["delta_s"] = nullptr;
    j["threshold"] = summary.threshold;
    j["counts"] = {{"tp", summary.metrics.tp},
                   {"fp", summary.metrics.fp},
                   {"tn", summary.metrics.tn},
                   {"fn", summary.metrics.fn},
                   {"degenerate", summary.metrics.degenerate}};
    j["msre_train"] = summary.msre_train;
    j["msre_test"] = summary.msre_test;
    if (summary.fpr_defined)
        j["fpr"] = summary.fpr;
    else
        j["fpr"] = nullptr;
    j["config_fingerprint"] = config_fingerprint;
    if (!summary.per_video.empty()) {
        nlohmann::json arr = nlohmann::json::array();
        for (const VideoSummary& v : summary.per_video) {
            nlohmann::json e;
            e["video_id"] = v.video_id;
            if (v.auc_defined)
                e["auc"] = v.auc;
            else {
                e["auc"] = nullptr;
                e["auc_reason"] = v.auc_reason;
            }
            if (v.delta_defined)
                e["delta_s"] = v.delta_s;
            else
                e["delta_s"] = nullptr;
            arr.push_back(e);
        }
        j["per_video"] = arr;
    }
    return j;
}

inline void write_report_json(const std::string& path, const EvalSummary& summary,
                              const std::string& config_fingerprint) {
    std::ofstream out = detail::open_text(path);
    out << report_to_json(summary, config_fingerprint).dump(2) << '\n';
    if (!out) throw IoError("write failed: " + path);
}

// ---------------------------------------------------------------------------
// score-curve SVG

namespace detail {

inline std::string svg_num(double v) {
    char buf[32];
    std::snprintf(buf, sizeof(buf), "%.2f", v);
    return buf;
}

inline std::string svg_label(double v) {
    char buf[32];
    std::snprintf(buf, sizeof(buf), "%.4g", v);
    return buf;
}

}  // namespace detail

/// Per-frame score curve with labeled (anomalous) spans shaded and the
/// decision threshold drawn as a dashed line.
inline void write_score_curve_svg(const std::string& path, const ScoreSeries& series,
                                  double threshold) {
    const double width = 880.0, height = 320.0;
    const double left = 56.0, right = 16.0, top = 16.0, bottom = 36.0;
    const double plot_w = width - left - right, plot_h = height - top - bottom;
    const std::size_t n = series.scores.size();
    if (n == 0) throw ConfigError("cannot plot an empty score series");

    double hi = threshold;
    for (const double s : series.scores) hi = std::max(hi, s);
    if (hi <= 0.0) hi = 1.0;
    hi *= 1.05;  // headroom so the curve never touches the frame

    const auto x_at = [&](double frame) {
        return left + (n > 1 ? frame / static_cast<double>(n - 1) : 0.5) * plot_w;
    };
    const auto y_at = [&](double score) { return top + (1.0 - score / hi) * plot_h; };

    std::ofstream out = detail::open_text(path);
    out << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << width << "\" height=\""
        << height << "\" viewBox=\"0 0 " << width << " " << height << "\">\n";
    out << "  <rect x=\"0\" y=\"0\" width=\"" << width << "\" height=\"" << height
        << "\" fill=\"white\"/>\n";

    // shade every contiguous run of anomalous labels
    for (std::size_t i = 0; i < n;) {
        if (series.labels[i] == 0) {
            ++i;
            continue;
        }
        std::size_t j = i;
        while (j < n && series.labels[j] != 0) ++j;
        const double x0 = x_at(static_cast<double>(i) - 0.5);
        const double x1 = x_at(static_cast<double>(j) - 0.5);
        out << "  <rect x=\"" << detail::svg_num(std::max(x0, left)) << "\" y=\""
            << detail::svg_num(top) << "\" width=\""
            << detail::svg_num(std::min(x1, left + plot_w) - std::max(x0, left)) << "\" height=\""
            << detail::svg_num(plot_h) << "\" fill=\"#fdd\" stroke=\"none\"/>\n";
        i = j;
    }

    out << "  <line x1=\"" << detail::svg_num(left) << "\" y1=\"" << detail::svg_num(top)
        << "\" x2=\"" << detail::svg_num(left) << "\" y2=\"" << detail::svg_num(top + plot_h)
        << "\" stroke=\"#444\"/>\n";
    out << "  <line x1=\"" << detail::svg_num(left) << "\" y1=\"" << detail::svg_num(top + plot_h)
        << "\" x2=\"" << detail::svg_num(left + plot_w) << "\" y2=\""
        << detail::svg_num(top + plot_h) << "\" stroke=\"#444\"/>\n";

    out << "  <line x1=\"" << detail::svg_num(left) << "\" y1=\"" << detail::svg_num(y_at(threshold))
        << "\" x2=\"" << detail::svg_num(left + plot_w) << "\" y2=\""
        << detail::svg_num(y_at(threshold))
        << "\" stroke=\"#888\" stroke-dasharray=\"6 4\"/>\n";

    out << "  <polyline fill=\"none\" stroke=\"#1565c0\" stroke-width=\"1.5\" points=\"";
    for (std::size_t i = 0; i < n; ++i) {
        if (i) out << ' ';
        out << detail::svg_num(x_at(static_cast<double>(i))) << ','
            << detail::svg_num(y_at(series.scores[i]));
    }
    out << "\"/>\n";

    out << "  <text x=\"" << detail::svg_num(left - 6) << "\" y=\"" << detail::svg_num(top + 6)
        << "\" text-anchor=\"end\" font-size=\"11\" font-family=\"sans-serif\">"
        << detail::svg_label(hi) << "</text>\n";
    out << "  <text x=\"" << detail::svg_num(left - 6) << "\" y=\""
        << detail::svg_num(top + plot_h)
        << "\" text-anchor=\"end\" font-size=\"11\" font-family=\"sans-serif\">0</text>\n";
    out << "  <text x=\"" << detail::svg_num(left) << "\" y=\""
        << detail::svg_num(height - 12)
        << "\" font-size=\"11\" font-family=\"sans-serif\">frame 0</text>\n";
    out << "  <text x=\"" << detail::svg_num(left + plot_w) << "\" y=\""
        << detail::svg_num(height - 12)
        << "\" text-anchor=\"end\" font-size=\"11\" font-family=\"sans-serif\">frame "
        << (n - 1) << "</text>\n";
    out << "  <text x=\"" << detail::svg_num(left + plot_w) << "\" y=\""
        << detail::svg_num(y_at(threshold) - 4)
        << "\" text-anchor=\"end\" font-size=\"11\" font-family=\"sans-serif\">threshold "
        << detail::svg_label(threshold) << "</text>\n";
    out << "</svg>\n";
    if (!out) throw IoError("write failed: " + path);
}

}  // namespace andt
