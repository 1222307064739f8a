#pragma once

#include <bit>
#include <cstdint>
#include <cstdio>
#include <cstring>
#include <fstream>
#include <map>
#include <string>
#include <vector>

#include <json.hpp>
#include <zlib.h>

#include "andt/config_json.hpp"
#include "andt/model.hpp"
#include "andt/training.hpp"

// Checkpoint container format:
//   "ANDT" | u32 version | u32 json_len | json | u32 tensor_count
//   per tensor: u32 name_len | name | u8 dtype | u32 ndim | u32 extents... | payload
//   u32 crc32 of everything before it
// All integers and payloads little-endian. The JSON block holds both configs,
// the loss history, and the optimizer step; wall-clock times are deliberately
// not stored so retraining with one seed reproduces the file byte for byte.

namespace andt {

static_assert(std::endian::native == std::endian::little,
              "checkpoint serialization assumes a little-endian host");

inline constexpr std::uint32_t kCheckpointVersion = 1;

template <typename S>
constexpr std::uint8_t dtype_code();
template <>
constexpr std::uint8_t dtype_code<float>() { return 1; }
template <>
constexpr std::uint8_t dtype_code<double>() { return 2; }

template <typename S>
struct Checkpoint {
    ModelConfig model;
    TrainConfig train;
    ModelParams<S> params;
    AdamState<S> opt;
    TrainHistory history;  // epoch_seconds is not persisted
};

inline std::string crc32_hex(const void* data, std::size_t size) {
    const uLong crc =
        ::crc32(::crc32(0L, Z_NULL, 0), static_cast<const Bytef*>(data),
                static_cast<uInt>(size));
    char buf[9];
    std::snprintf(buf, sizeof(buf), "%08lx", static_cast<unsigned long>(crc));
    return buf;
}

inline std::string crc32_hex(const std::string& s) { return crc32_hex(s.data(), s.size()); }

namespace detail {

inline void append_u32(std::vector<unsigned char>& buf, std::uint32_t v) {
    buf.push_back(static_cast<unsigned char>(v));
    buf.push_back(static_cast<unsigned char>(v >> 8));
    buf.push_back(static_cast<unsigned char>(v >> 16));
    buf.push_back(static_cast<unsigned char>(v >> 24));
}

template <typename S>
void append_tensor(std::vector<unsigned char>& buf, const std::string& name,
                   const Tensor<S>& t) {
    append_u32(buf, static_cast<std::uint32_t>(name.size()));
    buf.insert(buf.end(), name.begin(), name.end());
    buf.push_back(dtype_code<S>());
    append_u32(buf, static_cast<std::uint32_t>(t.ndim()));
    for (std::size_t d = 0; d < t.ndim(); ++d)
        append_u32(buf, static_cast<std::uint32_t>(t.extent(d)));
    const auto* bytes = reinterpret_cast<const unsigned char*>(t.data());
    buf.insert(buf.end(), bytes, bytes + t.numel() * sizeof(S));
}

struct ByteReader {
    const std::vector<unsigned char>& buf;
    std::size_t pos = 0;
    const std::string& path;

    void need(std::size_t n) const {
        if (pos + n > buf.size()) throw DataError("truncated checkpoint: " + path);
    }
    std::uint32_t u32() {
        need(4);
        const std::uint32_t v = static_cast<std::uint32_t>(buf[pos]) |
                                static_cast<std::uint32_t>(buf[pos + 1]) << 8 |
                                static_cast<std::uint32_t>(buf[pos + 2]) << 16 |
                                static_cast<std::uint32_t>(buf[pos + 3]) << 24;
        pos += 4;
        return v;
    }
    std::uint8_t u8() {
        need(1);
        return buf[pos++];
    }
    std::string bytes(std::size_t n) {
        need(n);
        std::string s(reinterpret_cast<const char*>(buf.data() + pos), n);
        pos += n;
        return s;
    }
};

inline std::vector<unsigned char> read_file(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("cannot open " + path);
    return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

}  // namespace detail

template <typename S>
void save_checkpoint(const Checkpoint<S>& ckpt, const std::string& path) {
    nlohmann::json j;
    j["model"] = model_config_to_json(ckpt.model);
    j["train"] = train_config_to_json(ckpt.train);
    j["precision"] = dtype_code<S>() == 1 ? "f32" : "f64";
    j["adam_step"] = ckpt.opt.step;
    j["history"] = {{"epoch_loss", ckpt.history.epoch_loss},
                    {"config_fingerprint", ckpt.history.config_fingerprint}};
    const std::string json_text = j.dump();

    std::vector<unsigned char> buf;
    buf.insert(buf.end(), {'A', 'N', 'D', 'T'});
    detail::append_u32(buf, kCheckpointVersion);
    detail::append_u32(buf, static_cast<std::uint32_t>(json_text.size()));
    buf.insert(buf.end(), json_text.begin(), json_text.end());

    std::uint32_t count = 0;
    for_each_param(ckpt.params, [&](const std::string&, const Tensor<S>&) { ++count; });
    for_each_buffer(ckpt.params, [&](const std::string&, const Tensor<S>&) { ++count; });
    detail::append_u32(buf, count * 3);  // params+buffers, adam m, adam v

    for_each_param(ckpt.params, [&](const std::string& name, const Tensor<S>& t) {
        detail::append_tensor(buf, name, t);
    });
    for_each_buffer(ckpt.params, [&](const std::string& name, const Tensor<S>& t) {
        detail::append_tensor(buf, name, t);
    });
    for_each_param(ckpt.opt.m, [&](const std::string& name, const Tensor<S>& t) {
        detail::append_tensor(buf, "adam.m." + name, t);
    });
    for_each_buffer(ckpt.opt.m, [&](const std::string& name, const Tensor<S>& t) {
        detail::append_tensor(buf, "adam.m." + name, t);
    });
    for_each_param(ckpt.opt.v, [&](const std::string& name, const Tensor<S>& t) {
        detail::append_tensor(buf, "adam.v." + name, t);
    });
    for_each_buffer(ckpt.opt.v, [&](const std::string& name, const Tensor<S>& t) {
        detail::append_tensor(buf, "adam.v." + name, t);
    });

    const uLong crc = ::crc32(::crc32(0L, Z_NULL, 0), buf.data(),
                              static_cast<uInt>(buf.size()));
    detail::append_u32(buf, static_cast<std::uint32_t>(crc));

    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw IoError("cannot create " + path);
    out.write(reinterpret_cast<const char*>(buf.data()),
              static_cast<std::streamsize>(buf.size()));
    if (!out) throw IoError("short write to " + path);
}

/// Parses and validates everything up to the tensor records; shared by the
/// precision peek and the full loader.
inline nlohmann::json checkpoint_header(detail::ByteReader& reader) {
    if (reader.bytes(4) != "ANDT") throw DataError("not a checkpoint file: " + reader.path);
    const std::uint32_t version = reader.u32();
    if (version != kCheckpointVersion)
        throw DataError("unsupported checkpoint version " + std::to_string(version) +
                        " in " + reader.path + " (reader handles version " +
                        std::to_string(kCheckpointVersion) + ")");
    const std::uint32_t json_len = reader.u32();
    const std::string json_text = reader.bytes(json_len);
    try {
        return nlohmann::json::parse(json_text);
    } catch (const nlohmann::json::exception& e) {
        throw DataError("bad checkpoint metadata in " + reader.path + ": " + e.what());
    }
}

inline std::string checkpoint_precision(const std::string& path) {
    const std::vector<unsigned char> buf = detail::read_file(path);
    detail::ByteReader reader{buf, 0, path};
    const nlohmann::json j = checkpoint_header(reader);
    if (!j.contains("precision")) throw DataError("checkpoint missing precision: " + path);
    return j["precision"].get<std::string>();
}

template <typename S>
Checkpoint<S> load_checkpoint(const std::string& path) {
    const std::vector<unsigned char> buf = detail::read_file(path);
    if (buf.size() < 4) throw DataError("truncated checkpoint: " + path);
    const uLong crc = ::crc32(::crc32(0L, Z_NULL, 0), buf.data(),
                              static_cast<uInt>(buf.size() - 4));
    detail::ByteReader tail{buf, buf.size() - 4, path};
    if (static_cast<std::uint32_t>(crc) != tail.u32())
        throw DataError("checkpoint checksum mismatch: " + path);

    detail::ByteReader reader{buf, 0, path};
    const nlohmann::json j = checkpoint_header(reader);

    Checkpoint<S> ckpt;
    try {
        apply_model_config_json(j.at("model"), ckpt.model);
        apply_train_config_json(j.at("train"), ckpt.train);
        const std::string precision = j.at("precision").get<std::string>();
        const std::string expected = dtype_code<S>() == 1 ? "f32" : "f64";
        if (precision != expected)
            throw DataError("checkpoint " + path + " stores " + precision +
                            " tensors, loader instantiated for " + expected);
        ckpt.opt.step = j.at("adam_step").get<std::uint64_t>();
        ckpt.history.epoch_loss = j.at("history").at("epoch_loss").get<std::vector<double>>();
        ckpt.history.config_fingerprint =
            j.at("history").at("config_fingerprint").get<std::string>();
    } catch (const nlohmann::json::exception& e) {
        throw DataError("bad checkpoint metadata in " + path + ": " + e.what());
    }
    ckpt.model.validate();

    ckpt.params = make_params<S>(ckpt.model);
    ckpt.opt.m = zero_params_like(ckpt.params);
    ckpt.opt.v = zero_params_like(ckpt.params);

    std::map<std::string, Tensor<S>*> slots;
    for_each_param(ckpt.params, [&](const std::string& name, Tensor<S>& t) {
        slots[name] = &t;
    });
    for_each_buffer(ckpt.params, [&](const std::string& name, Tensor<S>& t) {
        slots[name] = &t;
    });
    for_each_param(ckpt.opt.m, [&](const std::string& name, Tensor<S>& t) {
        slots["adam.m." + name] = &t;
    });
    for_each_buffer(ckpt.opt.m, [&](const std::string& name, Tensor<S>& t) {
        slots["adam.m." + name] = &t;
    });
    for_each_param(ckpt.opt.v, [&](const std::string& name, Tensor<S>& t) {
        slots["adam.v." + name] = &t;
    });
    for_each_buffer(ckpt.opt.v, [&](const std::string& name, Tensor<S>& t) {
        slots["adam.v." + name] = &t;
    });

    const std::uint32_t count = reader.u32();
    if (count != slots.size())
        throw DataError("checkpoint holds " + std::to_string(count) + " tensors, config needs " +
                        std::to_string(slots.size()) + ": " + path);
    std::map<std::string, bool> seen;
    for (std::uint32_t i = 0; i < count; ++i) {
        const std::uint32_t name_len = reader.u32();
        const std::string name = reader.bytes(name_len);
        const auto it = slots.find(name);
        if (it == slots.end()) throw DataError("unexpected tensor '" + name + "' in " + path);
        if (seen[name]) throw DataError("duplicate tensor '" + name + "' in " + path);
        seen[name] = true;

        const std::uint8_t dtype = reader.u8();
        if (dtype != dtype_code<S>())
            throw DataError("tensor '" + name + "' has dtype code " + std::to_string(dtype) +
                            ", expected " + std::to_string(dtype_code<S>()) + ": " + path);
        const std::uint32_t ndim = reader.u32();
        Shape shape(ndim);
        for (std::uint32_t d = 0; d < ndim; ++d) shape[d] = reader.u32();
        Tensor<S>& slot = *it->second;
        if (shape != slot.shape())
            throw DataError("tensor '" + name + "' has shape " + shape_str(shape) +
                            ", config needs " + shape_str(slot.shape()) + ": " + path);
        const std::size_t payload = slot.numel() * sizeof(S);
        reader.need(payload);
        std::memcpy(slot.data(), buf.data() + reader.pos, payload);
        reader.pos += payload;
    }
    if (reader.pos != buf.size() - 4)
        throw DataError("trailing bytes after tensor records in " + path);
    return ckpt;
}

}  // namespace andt
