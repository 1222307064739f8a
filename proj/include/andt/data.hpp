#pragma once

#include <algorithm>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <optional>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include "andt/image_io.hpp"
#include "andt/tensor.hpp"

// Video ingestion and the synthetic benchmark scene. Layout on disk:
//   <root>/<scene>/<split>/<video_id>/frame_%06d.png   (or frames.raw)
//   <root>/<scene>/test/<video_id>/labels.csv          (frame_index,label)

namespace andt {

template <typename S>
struct VideoSequence {
    Tensor<S> frames;  // [T_total x C x H x W], values in [0,1]
    double fps = 30.0;
    std::string source_id;

    std::size_t frame_count() const { return frames.empty() ? 0 : frames.extent(0); }
    std::size_t channels() const { return frames.extent(1); }
    std::size_t height() const { return frames.extent(2); }
    std::size_t width() const { return frames.extent(3); }

    Tensor<S> frame(std::size_t index) const {
        const std::size_t chw = channels() * height() * width();
        Tensor<S> f({channels(), height(), width()});
        std::copy_n(frames.data() + index * chw, chw, f.data());
        return f;
    }
};

struct LabelSeries {
    std::vector<int> labels;  // one {0,1} per frame
};

template <typename S>
struct ClipWindow {
    Tensor<S> clip;    // [T x C x H x W]
    Tensor<S> target;  // [C x H x W], the frame at target_index
    std::size_t target_index = 0;
};

struct DatasetManifest {
    std::string scene;
    std::string split;
    std::vector<std::string> video_dirs;   // absolute, ordered by video id
    std::vector<std::string> label_files;  // parallel to video_dirs; empty string if none
};

// ---------------------------------------------------------------------------
// labels

inline LabelSeries parse_labels(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw IoError("cannot open " + path);
    std::string line;
    if (!std::getline(in, line)) throw DataError("empty label file: " + path);
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line != "frame_index,label")
        throw DataError("bad label header '" + line + "' in " + path);

    LabelSeries series;
    std::size_t expected = 0;
    while (std::getline(in, line)) {
        if (!line.empty() && line.back() == '\r') line.pop_back();
        if (line.empty()) continue;
        const auto comma = line.find(',');
        if (comma == std::string::npos) throw DataError("bad label row '" + line + "' in " + path);
        std::size_t index = 0;
        int label = -1;
        try {
            index = std::stoul(line.substr(0, comma));
            label = std::stoi(line.substr(comma + 1));
        } catch (const std::exception&) {
            throw DataError("bad label row '" + line + "' in " + path);
        }
        if (index < expected)
            throw DataError("duplicate or out-of-order frame_index " + std::to_string(index) +
                            " in " + path);
        if (index > expected)
            throw DataError("gap before frame_index " + std::to_string(index) + " in " + path);
        if (label != 0 && label != 1)
            throw DataError("label " + std::to_string(label) + " outside {0,1} in " + path);
        series.labels.push_back(label);
        ++expected;
    }
    if (series.labels.empty()) throw DataError("no label rows in " + path);
    return series;
}

// ---------------------------------------------------------------------------
// resize

/// Bilinear resample with the align-corners=false convention:
/// src = (dst + 0.5) * (in/out) - 0.5, clamped to the edges.
template <typename S>
Tensor<S> resize_bilinear(const Tensor<S>& frame, std::size_t out_h, std::size_t out_w) {
    if (frame.ndim() != 3) throw ShapeError("resize_bilinear: want [C x H x W]");
    if (out_h == 0 || out_w == 0) throw ConfigError("resize_bilinear: output extents must be >= 1");
    const std::size_t c = frame.extent(0), in_h = frame.extent(1), in_w = frame.extent(2);
    if (in_h == out_h && in_w == out_w) return frame;

    Tensor<S> out({c, out_h, out_w});
    const double sy = static_cast<double>(in_h) / static_cast<double>(out_h);
    const double sx = static_cast<double>(in_w) / static_cast<double>(out_w);
    for (std::size_t oy = 0; oy < out_h; ++oy) {
        double fy = (static_cast<double>(oy) + 0.5) * sy - 0.5;
        fy = std::clamp(fy, 0.0, static_cast<double>(in_h - 1));
        const std::size_t y0 = static_cast<std::size_t>(fy);
        const std::size_t y1 = std::min(y0 + 1, in_h - 1);
        const double wy = fy - static_cast<double>(y0);
        for (std::size_t ox = 0; ox < out_w; ++ox) {
            double fx = (static_cast<double>(ox) + 0.5) * sx - 0.5;
            fx = std::clamp(fx, 0.0, static_cast<double>(in_w - 1));
            const std::size_t x0 = static_cast<std::size_t>(fx);
            const std::size_t x1 = std::min(x0 + 1, in_w - 1);
            const double wx = fx - static_cast<double>(x0);
            for (std::size_t ch = 0; ch < c; ++ch) {
                const S* plane = frame.data() + ch * in_h * in_w;
                const double top = (1.0 - wx) * static_cast<double>(plane[y0 * in_w + x0]) +
                                   wx * static_cast<double>(plane[y0 * in_w + x1]);
                const double bot = (1.0 - wx) * static_cast<double>(plane[y1 * in_w + x0]) +
                                   wx * static_cast<double>(plane[y1 * in_w + x1]);
                out[(ch * out_h + oy) * out_w + ox] =
                    static_cast<S>((1.0 - wy) * top + wy * bot);
            }
        }
    }
    return out;
}

// ---------------------------------------------------------------------------
// windowing

/// Sliding input windows of length T with the frame right after each window
/// as its target. Too-short sequences yield an empty list; when `warning`
/// is given it explains why.
template <typename S>
std::vector<ClipWindow<S>> window_clips(const VideoSequence<S>& seq, std::size_t T,
                                        std::size_t stride, std::string* warning = nullptr) {
    if (T == 0) throw ConfigError("window_clips: T must be positive");
    if (stride == 0) throw ConfigError("window_clips: stride must be positive");
    const std::size_t total = seq.frame_count();
    if (total <= T) {
        if (warning)
            *warning = "sequence '" + seq.source_id + "' has " + std::to_string(total) +
                       " frames, need at least " + std::to_string(T + 1) +
                       "; no windows produced";
        return {};
    }
    const std::size_t count = (total - T - 1) / stride + 1;
    const std::size_t chw = seq.channels() * seq.height() * seq.width();
    std::vector<ClipWindow<S>> windows;
    windows.reserve(count);
    for (std::size_t i = 0; i < count; ++i) {
        const std::size_t start = i * stride;
        ClipWindow<S> win;
        win.clip = Tensor<S>({T, seq.channels(), seq.height(), seq.width()});
        std::copy_n(seq.frames.data() + start * chw, T * chw, win.clip.data());
        win.target_index = start + T;
        win.target = seq.frame(win.target_index);
        windows.push_back(std::move(win));
    }
    return windows;
}

// ---------------------------------------------------------------------------
// loading

struct PreprocessConfig {
    std::size_t out_h = 256, out_w = 256;
};

inline DatasetManifest scan_dataset(const std::string& root, const std::string& scene,
                                    const std::string& split) {
    namespace fs = std::filesystem;
    if (split != "train" && split != "test")
        throw ConfigError("split must be 'train' or 'test', got '" + split + "'");
    const fs::path base = fs::path(root) / scene / split;
    if (!fs::is_directory(base)) throw IoError("no such dataset directory: " + base.string());

    DatasetManifest manifest;
    manifest.scene = scene;
    manifest.split = split;
    std::vector<fs::path> dirs;
    for (const auto& entry : fs::directory_iterator(base))
        if (entry.is_directory()) dirs.push_back(entry.path());
    std::sort(dirs.begin(), dirs.end());
    if (dirs.empty()) throw DataError("no video directories under " + base.string());

    for (const auto& dir : dirs) {
        manifest.video_dirs.push_back(dir.string());
        const fs::path labels = dir / "labels.csv";
        if (split == "test") {
            if (!fs::is_regular_file(labels))
                throw DataError("missing labels.csv for test video " + dir.string());
            manifest.label_files.push_back(labels.string());
        } else {
            manifest.label_files.push_back(fs::is_regular_file(labels) ? labels.string() : "");
        }
    }
    return manifest;
}

template <typename S>
VideoSequence<S> load_video(const std::string& dir, const PreprocessConfig& pre) {
    namespace fs = std::filesystem;
    VideoSequence<S> seq;
    seq.source_id = fs::path(dir).filename().string();

    const fs::path raw = fs::path(dir) / "frames.raw";
    std::vector<Tensor<S>> frames;
    if (fs::is_regular_file(raw)) {
        RawVideo v = read_raw_video(raw.string());
        if (v.frames == 0) throw DataError("raw video has no frames: " + raw.string());
        const std::size_t chw = v.channels * v.height * v.width;
        for (std::size_t tindex = 0; tindex < v.frames; ++tindex) {
            Tensor<S> f({v.channels, v.height, v.width});
            for (std::size_t i = 0; i < chw; ++i)
                f[i] = static_cast<S>(v.data[tindex * chw + i]);
            frames.push_back(resize_bilinear(f, pre.out_h, pre.out_w));
        }
    } else {
        std::vector<fs::path> files;
        for (const auto& entry : fs::directory_iterator(dir)) {
            if (!entry.is_regular_file()) continue;
            const std::string name = entry.path().filename().string();
            if (name.rfind("frame_", 0) == 0 && entry.path().extension() == ".png")
                files.push_back(entry.path());
        }
        std::sort(files.begin(), files.end());
        if (files.empty()) throw DataError("no frame_*.png or frames.raw in " + dir);
        for (const auto& file : files) {
            Tensor<S> f = image_to_frame<S>(read_png(file.string()));
            frames.push_back(resize_bilinear(f, pre.out_h, pre.out_w));
        }
    }

    const Shape& fshape = frames.front().shape();
    for (const auto& f : frames)
        if (f.shape() != fshape)
            throw DataError("inconsistent frame shapes in " + dir + ": " + shape_str(fshape) +
                            " vs " + shape_str(f.shape()));
    const std::size_t chw = shape_numel(fshape);
    seq.frames = Tensor<S>({frames.size(), fshape[0], fshape[1], fshape[2]});
    for (std::size_t i = 0; i < frames.size(); ++i)
        std::copy_n(frames[i].data(), chw, seq.frames.data() + i * chw);
    return seq;
}

template <typename S>
std::vector<std::pair<VideoSequence<S>, std::optional<LabelSeries>>> load_dataset(
    const std::string& root, const std::string& scene, const std::string& split,
    const PreprocessConfig& pre) {
    const DatasetManifest manifest = scan_dataset(root, scene, split);
    std::vector<std::pair<VideoSequence<S>, std::optional<LabelSeries>>> out;
    for (std::size_t i = 0; i < manifest.video_dirs.size(); ++i) {
        VideoSequence<S> seq = load_video<S>(manifest.video_dirs[i], pre);
        std::optional<LabelSeries> labels;
        if (!manifest.label_files[i].empty()) {
            labels = parse_labels(manifest.label_files[i]);
            if (labels->labels.size() != seq.frame_count())
                throw DataError("label count " + std::to_string(labels->labels.size()) +
                                " does not match " + std::to_string(seq.frame_count()) +
                                " frames in " + manifest.video_dirs[i]);
        }
        out.emplace_back(std::move(seq), std::move(labels));
    }
    return out;
}

// ---------------------------------------------------------------------------
// synthetic benchmark scene

struct SynthConfig {
    std::size_t size = 64;        // H = W
    std::size_t channels = 1;
    double radius = 3.0;
    double vx = 2.0, vy = 1.0;    // displacement per normal frame
    std::size_t frame_count = 96;
    // [start, end) frame ranges whose motion runs backwards
    std::vector<std::pair<std::size_t, std::size_t>> anomaly_spans;
    std::uint64_t seed = 0;
    double noise = 0.01;          // uniform pixel noise amplitude
};

/// A bright disc drifting over a static textured background with constant
/// velocity; inside anomaly spans the motion reverses. Positions wrap
/// modularly so the disc never leaves the frame.
template <typename S>
std::pair<VideoSequence<S>, LabelSeries> synth_moving_dot(const SynthConfig& config) {
    if (config.size == 0 || config.frame_count == 0)
        throw ConfigError("synth_moving_dot: size and frame_count must be positive");
    if (config.channels != 1 && config.channels != 3)
        throw ConfigError("synth_moving_dot: channels must be 1 or 3");
    for (const auto& [start, end] : config.anomaly_spans)
        if (start >= end || end > config.frame_count)
            throw ConfigError("synth_moving_dot: invalid anomaly span [" + std::to_string(start) +
                              "," + std::to_string(end) + ") for " +
                              std::to_string(config.frame_count) + " frames");

    LabelSeries labels;
    labels.labels.assign(config.frame_count, 0);
    for (const auto& [start, end] : config.anomaly_spans)
        for (std::size_t i = start; i < end; ++i) labels.labels[i] = 1;

    const std::size_t n = config.size;
    const auto wrap = [n](double p) {
        const double m = std::fmod(p, static_cast<double>(n));
        return m < 0.0 ? m + static_cast<double>(n) : m;
    };

    Rng rng(config.seed);
    // static background texture shared by all frames
    Tensor<S> background({config.channels, n, n});
    for (std::size_t i = 0; i < background.numel(); ++i)
        background[i] = static_cast<S>(0.2 + 0.1 * rng.uniform(0.0, 1.0));

    VideoSequence<S> seq;
    seq.source_id = "synthetic";
    seq.frames = Tensor<S>({config.frame_count, config.channels, n, n});
    double px = wrap(static_cast<double>(n) / 2.0);
    double py = wrap(static_cast<double>(n) / 3.0);
    const std::size_t chw = config.channels * n * n;
    for (std::size_t f = 0; f < config.frame_count; ++f) {
        if (f > 0) {
            // the step into frame f reverses when frame f is anomalous
            const double dir = labels.labels[f] ? -1.0 : 1.0;
            px = wrap(px + dir * config.vx);
            py = wrap(py + dir * config.vy);
        }
        S* frame = seq.frames.data() + f * chw;
        std::copy_n(background.data(), chw, frame);
        // disc drawn with modular distance so it wraps with the position
        const double r2 = config.radius * config.radius;
        for (std::size_t y = 0; y < n; ++y)
            for (std::size_t x = 0; x < n; ++x) {
                double dx = std::abs(static_cast<double>(x) - px);
                double dy = std::abs(static_cast<double>(y) - py);
                dx = std::min(dx, static_cast<double>(n) - dx);
                dy = std::min(dy, static_cast<double>(n) - dy);
                if (dx * dx + dy * dy <= r2)
                    for (std::size_t c = 0; c < config.channels; ++c)
                        frame[c * n * n + y * n + x] = static_cast<S>(0.9);
            }
        if (config.noise > 0.0)
            for (std::size_t i = 0; i < chw; ++i) {
                double v = static_cast<double>(frame[i]) +
                           rng.uniform(-config.noise, config.noise);
                frame[i] = static_cast<S>(std::clamp(v, 0.0, 1.0));
            }
    }
    return {std::move(seq), std::move(labels)};
}

/// Write a synthetic sequence into the on-disk dataset layout, as a raw
/// video plus labels.csv when the split needs one.
template <typename S>
void write_video_dir(const std::string& dir, const VideoSequence<S>& seq,
                     const LabelSeries* labels) {
    namespace fs = std::filesystem;
    fs::create_directories(dir);
    RawVideo raw;
    raw.frames = seq.frame_count();
    raw.channels = seq.channels();
    raw.height = seq.height();
    raw.width = seq.width();
    raw.data.resize(seq.frames.numel());
    for (std::size_t i = 0; i < raw.data.size(); ++i)
        raw.data[i] = static_cast<float>(seq.frames[i]);
    write_raw_video((fs::path(dir) / "frames.raw").string(), raw);
    if (labels) {
        std::ofstream out(fs::path(dir) / "labels.csv", std::ios::binary);
        if (!out) throw IoError("cannot create labels.csv in " + dir);
        out << "frame_index,label\n";
        for (std::size_t i = 0; i < labels->labels.size(); ++i)
            out << i << ',' << labels->labels[i] << '\n';
    }
}

}  // namespace andt
