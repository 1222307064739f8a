#pragma once

#include <png.h>

#include <bit>
#include <cstdint>
#include <cstdio>
#include <cstring>
#include <memory>
#include <string>
#include <vector>

#include "andt/tensor.hpp"

// 8-bit PNG frames plus a dependency-free raw video container:
// "VRAW1" magic, u32 T,C,H,W, then little-endian float32 planes.

namespace andt {

struct Image {
    std::size_t channels = 0, height = 0, width = 0;
    std::vector<unsigned char> data;  // interleaved rows, h*w*channels bytes
};

namespace detail {

struct FileCloser {
    void operator()(std::FILE* f) const {
        if (f) std::fclose(f);
    }
};
using FilePtr = std::unique_ptr<std::FILE, FileCloser>;

inline void put_u32_le(std::FILE* f, std::uint32_t v) {
    unsigned char b[4] = {static_cast<unsigned char>(v), static_cast<unsigned char>(v >> 8),
                          static_cast<unsigned char>(v >> 16),
                          static_cast<unsigned char>(v >> 24)};
    std::fwrite(b, 1, 4, f);
}

inline std::uint32_t get_u32_le(std::FILE* f, const std::string& path) {
    unsigned char b[4];
    if (std::fread(b, 1, 4, f) != 4) throw IoError("truncated file: " + path);
    return static_cast<std::uint32_t>(b[0]) | static_cast<std::uint32_t>(b[1]) << 8 |
           static_cast<std::uint32_t>(b[2]) << 16 | static_cast<std::uint32_t>(b[3]) << 24;
}

}  // namespace detail

inline Image read_png(const std::string& path) {
    detail::FilePtr fp(std::fopen(path.c_str(), "rb"));
    if (!fp) throw IoError("cannot open " + path);

    unsigned char sig[8];
    if (std::fread(sig, 1, 8, fp.get()) != 8 || png_sig_cmp(sig, 0, 8))
        throw DataError("not a PNG file: " + path);

    png_structp png = png_create_read_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
    png_infop info = png ? png_create_info_struct(png) : nullptr;
    if (!png || !info) {
        png_destroy_read_struct(&png, &info, nullptr);
        throw IoError("libpng initialization failed");
    }
    Image img;
    std::vector<png_bytep> rows;
    if (setjmp(png_jmpbuf(png))) {
        png_destroy_read_struct(&png, &info, nullptr);
        throw DataError("undecodable PNG: " + path);
    }
    png_init_io(png, fp.get());
    png_set_sig_bytes(png, 8);
    png_read_info(png, info);

    png_set_strip_16(png);
    png_set_packing(png);
    if (png_get_color_type(png, info) == PNG_COLOR_TYPE_PALETTE) png_set_palette_to_rgb(png);
    if (png_get_color_type(png, info) == PNG_COLOR_TYPE_GRAY &&
        png_get_bit_depth(png, info) < 8)
        png_set_expand_gray_1_2_4_to_8(png);
    if (png_get_valid(png, info, PNG_INFO_tRNS)) png_set_tRNS_to_alpha(png);
    png_set_strip_alpha(png);
    png_read_update_info(png, info);

    img.height = png_get_image_height(png, info);
    img.width = png_get_image_width(png, info);
    img.channels = png_get_channels(png, info);
    if (img.channels != 1 && img.channels != 3) {
        png_destroy_read_struct(&png, &info, nullptr);
        throw DataError("unsupported channel count " + std::to_string(img.channels) + " in " +
                        path);
    }
    img.data.resize(img.height * img.width * img.channels);
    rows.resize(img.height);
    for (std::size_t y = 0; y < img.height; ++y)
        rows[y] = img.data.data() + y * img.width * img.channels;
    png_read_image(png, rows.data());
    png_read_end(png, nullptr);
    png_destroy_read_struct(&png, &info, nullptr);
    return img;
}

inline void write_png(const std::string& path, const Image& img) {
    if (img.channels != 1 && img.channels != 3)
        throw ConfigError("write_png: channels must be 1 or 3");
    if (img.data.size() != img.height * img.width * img.channels)
        throw ShapeError("write_png: data size does not match extents");
    detail::FilePtr fp(std::fopen(path.c_str(), "wb"));
    if (!fp) throw IoError("cannot create " + path);

    png_structp png = png_create_write_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
    png_infop info = png ? png_create_info_struct(png) : nullptr;
    if (!png || !info) {
        png_destroy_write_struct(&png, &info);
        throw IoError("libpng initialization failed");
    }
    if (setjmp(png_jmpbuf(png))) {
        png_destroy_write_struct(&png, &info);
        throw IoError("PNG write failed: " + path);
    }
    png_init_io(png, fp.get());
    png_set_IHDR(png, info, static_cast<png_uint_32>(img.width),
                 static_cast<png_uint_32>(img.height), 8,
                 img.channels == 1 ? PNG_COLOR_TYPE_GRAY : PNG_COLOR_TYPE_RGB,
                 PNG_INTERLACE_NONE, PNG_COMPRESSION_TYPE_DEFAULT, PNG_FILTER_TYPE_DEFAULT);
    png_write_info(png, info);
    std::vector<png_bytep> rows(img.height);
    for (std::size_t y = 0; y < img.height; ++y)
        rows[y] = const_cast<png_bytep>(img.data.data() + y * img.width * img.channels);
    png_write_image(png, rows.data());
    png_write_end(png, nullptr);
    png_destroy_write_struct(&png, &info);
}

/// Planar [C x H x W] frame in [0,1] from an interleaved 8-bit image.
template <typename S>
Tensor<S> image_to_frame(const Image& img) {
    Tensor<S> frame({img.channels, img.height, img.width});
    const std::size_t hw = img.height * img.width;
    for (std::size_t y = 0; y < img.height; ++y)
        for (std::size_t x = 0; x < img.width; ++x)
            for (std::size_t c = 0; c < img.channels; ++c)
                frame[c * hw + y * img.width + x] = static_cast<S>(
                    img.data[(y * img.width + x) * img.channels + c] / 255.0);
    return frame;
}

/// Interleaved 8-bit image from a planar [C x H x W] frame; values are
/// clamped to [0,1] and rounded.
template <typename S>
Image frame_to_image(const Tensor<S>& frame) {
    if (frame.ndim() != 3) throw ShapeError("frame_to_image: want [C x H x W]");
    Image img;
    img.channels = frame.extent(0);
    img.height = frame.extent(1);
    img.width = frame.extent(2);
    img.data.resize(img.channels * img.height * img.width);
    const std::size_t hw = img.height * img.width;
    for (std::size_t y = 0; y < img.height; ++y)
        for (std::size_t x = 0; x < img.width; ++x)
            for (std::size_t c = 0; c < img.channels; ++c) {
                double v = static_cast<double>(frame[c * hw + y * img.width + x]);
                v = v < 0.0 ? 0.0 : (v > 1.0 ? 1.0 : v);
                img.data[(y * img.width + x) * img.channels + c] =
                    static_cast<unsigned char>(v * 255.0 + 0.5);
            }
    return img;
}

inline constexpr char kRawVideoMagic[5] = {'V', 'R', 'A', 'W', '1'};

struct RawVideo {
    std::size_t frames = 0, channels = 0, height = 0, width = 0;
    std::vector<float> data;  // T*C*H*W floats, frame-major
};

inline RawVideo read_raw_video(const std::string& path) {
    detail::FilePtr fp(std::fopen(path.c_str(), "rb"));
    if (!fp) throw IoError("cannot open " + path);
    char magic[5];
    if (std::fread(magic, 1, 5, fp.get()) != 5 || std::memcmp(magic, kRawVideoMagic, 5) != 0)
        throw DataError("bad raw video magic in " + path);
    RawVideo v;
    v.frames = detail::get_u32_le(fp.get(), path);
    v.channels = detail::get_u32_le(fp.get(), path);
    v.height = detail::get_u32_le(fp.get(), path);
    v.width = detail::get_u32_le(fp.get(), path);
    const std::size_t n = v.frames * v.channels * v.height * v.width;
    v.data.resize(n);
    static_assert(sizeof(float) == 4 && std::endian::native == std::endian::little,
                  "raw video payload is little-endian float32");
    if (std::fread(v.data.data(), sizeof(float), n, fp.get()) != n)
        throw DataError("truncated raw video: " + path);
    return v;
}

inline void write_raw_video(const std::string& path, const RawVideo& v) {
    if (v.data.size() != v.frames * v.channels * v.height * v.width)
        throw ShapeError("write_raw_video: data size does not match extents");
    detail::FilePtr fp(std::fopen(path.c_str(), "wb"));
    if (!fp) throw IoError("cannot create " + path);
    std::fwrite(kRawVideoMagic, 1, 5, fp.get());
    detail::put_u32_le(fp.get(), static_cast<std::uint32_t>(v.frames));
    detail::put_u32_le(fp.get(), static_cast<std::uint32_t>(v.channels));
    detail::put_u32_le(fp.get(), static_cast<std::uint32_t>(v.height));
    detail::put_u32_le(fp.get(), static_cast<std::uint32_t>(v.width));
    std::fwrite(v.data.data(), sizeof(float), v.data.size(), fp.get());
}

}  // namespace andt
