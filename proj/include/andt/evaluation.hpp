#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <numeric>
#include <string>
#include <vector>

#include "andt/data.hpp"
#include "andt/model.hpp"
#include "andt/training.hpp"

// Frame scoring and the metric stack. Scores are mean squared prediction
// errors per frame; everything downstream (threshold, ROC, separation) is
// pure arithmetic over those score series.

namespace andt {

struct ScoreSeries {
    std::vector<double> scores;     // one non-negative error per frame
    std::vector<int> labels;        // aligned; zeros when the video is unlabeled
    std::vector<bool> backfilled;   // true where the score was copied, not computed
    std::string video_id;
};

template <typename S>
struct VideoScores {
    ScoreSeries series;
    std::vector<Tensor<S>> features;  // encoder feature per computed frame
    std::size_t first_scored = 0;     // frame index the first computed score belongs to
};

/// Scores every frame of a video under a trained model. Prediction mode
/// compares the predicted next frame against the real one, so the first T
/// frames have no score of their own and are backfilled with the first
/// computed value (flagged). Reconstruction modes score the frame against
/// its own reconstruction; the whole-clip mode takes the error on the last
/// frame of each window.
template <typename S>
VideoScores<S> score_video(const ModelParams<S>& params, const ModelConfig& config,
                           TrainMode mode, const VideoSequence<S>& video,
                           const std::vector<int>* labels = nullptr,
                           bool capture_features = false) {
    config.validate();
    check_mode_config(mode, config);
    const std::size_t total = video.frame_count();
    const std::size_t T = config.T;
    const std::size_t first =
        mode == TrainMode::kPrediction1 ? T : (mode == TrainMode::kReconstruction6 ? T - 1 : 0);
    if (total <= first)
        throw DataError("video '" + video.source_id + "' has " + std::to_string(total) +
                        " frames, too short to score with T = " + std::to_string(T));
    if (labels && labels->size() != total)
        throw DataError("label count " + std::to_string(labels->size()) + " vs " +
                        std::to_string(total) + " frames in '" + video.source_id + "'");

    VideoScores<S> out;
    out.first_scored = first;
    out.series.video_id = video.source_id;
    out.series.scores.assign(total, 0.0);
    out.series.labels.assign(total, 0);
    out.series.backfilled.assign(total, false);
    if (labels) out.series.labels = *labels;

    const std::size_t chw = video.channels() * video.height() * video.width();
    Tensor<S> clip({T, video.channels(), video.height(), video.width()});
    for (std::size_t idx = first; idx < total; ++idx) {
        const std::size_t start = mode == TrainMode::kPrediction1 ? idx - T : idx - (T - 1);
        std::copy_n(video.frames.data() + start * chw, T * chw, clip.data());
        const ModelTrace<S> trace =
            model_forward(clip, params, config, BatchNormMode::kInfer);

        double score = 0.0;
        if (mode == TrainMode::kPrediction1) {
            score = mean_squared_error(trace.decoder.output.with_shape(
                                           {video.channels(), video.height(), video.width()}),
                                       video.frame(idx));
        } else {
            // reconstruction error of the frame at idx (last frame of the window)
            const std::size_t last = config.output_frames - 1;
            Tensor<S> recon({video.channels(), video.height(), video.width()});
            std::copy_n(trace.decoder.output.data() + last * chw, chw, recon.data());
            score = mean_squared_error(recon, video.frame(idx));
        }
        if (!std::isfinite(score))
            throw NumericError("non-finite score at frame " + std::to_string(idx) + " of '" +
                               video.source_id + "'");
        out.series.scores[idx] = score;
        if (capture_features) out.features.push_back(trace.encoder.p);
    }
    for (std::size_t idx = 0; idx < first; ++idx) {
        out.series.scores[idx] = out.series.scores[first];
        out.series.backfilled[idx] = true;
    }
    return out;
}

// ---------------------------------------------------------------------------
// threshold and confusion metrics

/// Mean plus population standard deviation of the training errors.
inline double compute_threshold(const std::vector<double>& train_errors) {
    if (train_errors.size() < 2)
        throw DataError("need at least 2 training errors to fit a threshold, got " +
                        std::to_string(train_errors.size()));
    double mean = 0.0;
    for (const double e : train_errors) mean += e;
    mean /= static_cast<double>(train_errors.size());
    double var = 0.0;
    for (const double e : train_errors) var += (e - mean) * (e - mean);
    var /= static_cast<double>(train_errors.size());
    return mean + std::sqrt(var);
}

struct ThresholdMetrics {
    double recall = 0.0, precision = 0.0, f1 = 0.0, oa = 0.0;
    std::size_t tp = 0, fp = 0, tn = 0, fn = 0;
    bool degenerate = false;  // no positives predicted (or none labeled)
};

/// Confusion-matrix metrics with anomaly declared by score > threshold
/// (strictly; boundary scores count as normal).
inline ThresholdMetrics threshold_metrics(const std::vector<double>& scores,
                                          const std::vector<int>& labels, double threshold) {
    if (scores.size() != labels.size())
        throw ShapeError("threshold_metrics: " + std::to_string(scores.size()) +
                         " scores vs " + std::to_string(labels.size()) + " labels");
    ThresholdMetrics m;
    for (std::size_t i = 0; i < scores.size(); ++i) {
        const bool predicted = scores[i] > threshold;
        const bool actual = labels[i] != 0;
        if (predicted && actual) ++m.tp;
        else if (predicted && !actual) ++m.fp;
        else if (!predicted && actual) ++m.fn;
        else ++m.tn;
    }
    const std::size_t total = scores.size();
    const std::size_t positives = m.tp + m.fn;
    const std::size_t predicted = m.tp + m.fp;
    m.degenerate = predicted == 0 || positives == 0;
    m.recall = positives ? static_cast<double>(m.tp) / static_cast<double>(positives) : 0.0;
    m.precision = predicted ? static_cast<double>(m.tp) / static_cast<double>(predicted) : 0.0;
    m.f1 = (m.recall + m.precision) > 0.0
               ? 2.0 * m.recall * m.precision / (m.recall + m.precision)
               : 0.0;
    m.oa = total ? static_cast<double>(m.tp + m.tn) / static_cast<double>(total) : 0.0;
    return m;
}

// ---------------------------------------------------------------------------
// ROC / AUC

struct RocPoint {
    double threshold = 0.0, fpr = 0.0, tpr = 0.0;
};

struct RocCurve {
    std::vector<RocPoint> points;  // monotone from (0,0) to (1,1)
    double auc = 0.0;
};

/// Midrank AUC: P(score_pos > score_neg) + half credit for ties, computed by
/// ranking. The curve sweeps every distinct score as a strict threshold.
inline RocCurve roc_auc(const std::vector<double>& scores, const std::vector<int>& labels) {
    if (scores.size() != labels.size())
        throw ShapeError("roc_auc: " + std::to_string(scores.size()) + " scores vs " +
                         std::to_string(labels.size()) + " labels");
    std::size_t pos = 0, neg = 0;
    for (const int label : labels) (label != 0 ? pos : neg) += 1;
    if (pos == 0 || neg == 0)
        throw DataError("AUC undefined: labels contain only one class (" +
                        std::to_string(pos) + " anomalous, " + std::to_string(neg) +
                        " normal)");

    std::vector<std::size_t> order(scores.size());
    std::iota(order.begin(), order.end(), 0);
    std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
        return scores[a] < scores[b];
    });

    // midranks over tie groups; rank sums of integers and halves stay exact
    double positive_rank_sum = 0.0;
    for (std::size_t i = 0; i < order.size();) {
        std::size_t j = i;
        while (j < order.size() && scores[order[j]] == scores[order[i]]) ++j;
        const double midrank = 0.5 * static_cast<double>(i + 1 + j);  // 1-based average
        for (std::size_t k = i; k < j; ++k)
            if (labels[order[k]] != 0) positive_rank_sum += midrank;
        i = j;
    }
    const double p = static_cast<double>(pos), n = static_cast<double>(neg);

    RocCurve curve;
    curve.auc = (positive_rank_sum - p * (p + 1.0) / 2.0) / (p * n);

    // sweep every distinct score as a strict threshold, largest first; the
    // point for threshold t counts the scores strictly above t, so the curve
    // starts at (0,0) and the appended -inf sentinel ends it at (1,1)
    std::size_t tp = 0, fp = 0;  // scores above the current threshold
    for (std::size_t i = order.size(); i > 0;) {
        std::size_t j = i;
        const double value = scores[order[i - 1]];
        while (j > 0 && scores[order[j - 1]] == value) --j;
        curve.points.push_back(
            {value, static_cast<double>(fp) / n, static_cast<double>(tp) / p});
        for (std::size_t k = j; k < i; ++k) (labels[order[k]] != 0 ? tp : fp) += 1;
        i = j;
    }
    curve.points.push_back({-std::numeric_limits<double>::infinity(), 1.0, 1.0});
    return curve;
}

// ---------------------------------------------------------------------------
// separation statistic and aggregate errors

/// Mean anomalous score minus mean normal score; positive means anomalies
/// stand out.
inline double delta_s(const std::vector<double>& scores, const std::vector<int>& labels) {
    if (scores.size() != labels.size())
        throw ShapeError("delta_s: " + std::to_string(scores.size()) + " scores vs " +
                         std::to_string(labels.size()) + " labels");
    double sum_pos = 0.0, sum_neg = 0.0;
    std::size_t pos = 0, neg = 0;
    for (std::size_t i = 0; i < scores.size(); ++i) {
        if (labels[i] != 0) {
            sum_pos += scores[i];
            ++pos;
        } else {
            sum_neg += scores[i];
            ++neg;
        }
    }
    if (pos == 0 || neg == 0)
        throw DataError("separation undefined: labels contain only one class");
    return sum_pos / static_cast<double>(pos) - sum_neg / static_cast<double>(neg);
}

inline double mean_squared_reconstruction_error(const std::vector<double>& scores) {
    if (scores.empty()) throw DataError("MSRE undefined for an empty score list");
    double sum = 0.0;
    for (const double s : scores) sum += s;
    return sum / static_cast<double>(scores.size());
}

inline double false_positive_rate(const std::vector<double>& scores,
                                  const std::vector<int>& labels, double threshold) {
    if (scores.size() != labels.size())
        throw ShapeError("false_positive_rate: " + std::to_string(scores.size()) +
                         " scores vs " + std::to_string(labels.size()) + " labels");
    std::size_t fp = 0, tn = 0;
    for (std::size_t i = 0; i < scores.size(); ++i) {
        if (labels[i] != 0) continue;
        (scores[i] > threshold ? fp : tn) += 1;
    }
    if (fp + tn == 0) throw DataError("FPR undefined: no normal frames");
    return static_cast<double>(fp) / static_cast<double>(fp + tn);
}

// ---------------------------------------------------------------------------
// PCA feature projection

struct PcaResult {
    Tensor<double> projection;    // [K x k], orthonormal columns
    Tensor<double> projected;     // [n x k]
    std::vector<double> ratios;   // explained-variance shares, non-increasing
};

/// Top-k principal components of row features via a full cyclic Jacobi
/// eigendecomposition of the covariance. Deterministic: eigenvector signs are
/// fixed so each column's largest-magnitude entry is positive.
inline PcaResult pca_project(const Tensor<double>& features, std::size_t k = 3) {
    if (features.ndim() != 2) throw ShapeError("pca_project: want [n x K] features");
    const std::size_t n = features.extent(0), K = features.extent(1);
    if (k == 0 || k > std::min(n, K))
        throw ConfigError("pca_project: k = " + std::to_string(k) +
                          " exceeds min(n, K) = " + std::to_string(std::min(n, K)));

    // center columns
    std::vector<double> mean(K, 0.0);
    for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = 0; j < K; ++j) mean[j] += features[i * K + j];
    for (std::size_t j = 0; j < K; ++j) mean[j] /= static_cast<double>(n);
    Tensor<double> centered({n, K});
    for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = 0; j < K; ++j)
            centered[i * K + j] = features[i * K + j] - mean[j];

    // covariance (population)
    Tensor<double> cov({K, K});
    for (std::size_t a = 0; a < K; ++a)
        for (std::size_t b = a; b < K; ++b) {
            double s = 0.0;
            for (std::size_t i = 0; i < n; ++i)
                s += centered[i * K + a] * centered[i * K + b];
            s /= static_cast<double>(n);
            cov[a * K + b] = s;
            cov[b * K + a] = s;
        }

    // cyclic Jacobi rotations until the off-diagonal mass is negligible
    Tensor<double> vecs({K, K});
    for (std::size_t i = 0; i < K; ++i) vecs[i * K + i] = 1.0;
    double scale = 0.0;
    for (std::size_t i = 0; i < K * K; ++i) scale = std::max(scale, std::abs(cov[i]));
    const double tol = scale > 0.0 ? scale * 1e-14 : 0.0;
    for (int sweep = 0; sweep < 100; ++sweep) {
        double off = 0.0;
        for (std::size_t p = 0; p < K; ++p)
            for (std::size_t q = p + 1; q < K; ++q) off = std::max(off, std::abs(cov[p * K + q]));
        if (off <= tol) break;
        for (std::size_t p = 0; p < K; ++p)
            for (std::size_t q = p + 1; q < K; ++q) {
                const double apq = cov[p * K + q];
                if (std::abs(apq) <= tol) continue;
                const double app = cov[p * K + p], aqq = cov[q * K + q];
                const double theta = 0.5 * std::atan2(2.0 * apq, aqq - app);
                const double c = std::cos(theta), s = std::sin(theta);
                for (std::size_t i = 0; i < K; ++i) {
                    const double aip = cov[i * K + p], aiq = cov[i * K + q];
                    cov[i * K + p] = c * aip - s * aiq;
                    cov[i * K + q] = s * aip + c * aiq;
                }
                for (std::size_t i = 0; i < K; ++i) {
                    const double api = cov[p * K + i], aqi = cov[q * K + i];
                    cov[p * K + i] = c * api - s * aqi;
                    cov[q * K + i] = s * api + c * aqi;
                }
                for (std::size_t i = 0; i < K; ++i) {
                    const double vip = vecs[i * K + p], viq = vecs[i * K + q];
                    vecs[i * K + p] = c * vip - s * viq;
                    vecs[i * K + q] = s * vip + c * viq;
                }
            }
    }

    std::vector<std::size_t> order(K);
    std::iota(order.begin(), order.end(), 0);
    std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
        if (cov[a * K + a] != cov[b * K + b]) return cov[a * K + a] > cov[b * K + b];
        return a < b;
    });

    double trace = 0.0;
    for (std::size_t i = 0; i < K; ++i) trace += cov[i * K + i];

    PcaResult result;
    result.projection = Tensor<double>({K, k});
    result.ratios.resize(k);
    for (std::size_t col = 0; col < k; ++col) {
        const std::size_t src = order[col];
        // sign convention: the largest-magnitude component points positive
        std::size_t arg = 0;
        for (std::size_t i = 1; i < K; ++i)
            if (std::abs(vecs[i * K + src]) > std::abs(vecs[arg * K + src])) arg = i;
        const double flip = vecs[arg * K + src] < 0.0 ? -1.0 : 1.0;
        for (std::size_t i = 0; i < K; ++i)
            result.projection[i * k + col] = flip * vecs[i * K + src];
        const double eig = std::max(cov[src * K + src], 0.0);
        result.ratios[col] = trace > 0.0 ? eig / trace : 0.0;
    }
    result.projected = matmul(centered, result.projection);
    return result;
}

}  // namespace andt
