#pragma once

#include <cstdint>
#include <cstring>
#include <fstream>
#include <string>
#include <vector>

#include "tae/common.hpp"
#include "tae/nets.hpp"
#include "tae/tensor.hpp"

namespace tae {

// Order- and content-sensitive digest of a parameter collection; used to
// verify that evaluation leaves the encoder untouched.
inline std::uint64_t digest_params(const ParamMap& params) {
    std::uint64_t h = 0xcbf29ce484222325ull;
    for (const auto& [name, tensor] : params) {
        h = fnv1a(name, h);
        h = fnv1a(std::string_view(reinterpret_cast<const char*>(tensor.data.data()), tensor.data.size() * sizeof(double)),
                  h);
    }
    return h;
}

struct CheckpointMeta {
    std::uint64_t config_hash = 0;
    std::uint64_t seed = 0;
    std::int32_t epoch = 0;
};

namespace detail {

// Flat little-endian archive: magic, network dimensions, run metadata, then
// the named tensors (name, shape, raw doubles).
inline constexpr char kCheckpointMagic[8] = {'T', 'A', 'E', 'C', 'K', 'P', 'T', '1'};

struct ByteWriter {
    std::vector<char> bytes;
    void raw(const void* p, size_t len) {
        const char* c = static_cast<const char*>(p);
        bytes.insert(bytes.end(), c, c + len);
    }
    void u8(std::uint8_t v) { raw(&v, 1); }
    void u16(std::uint16_t v) { raw(&v, 2); }
    void u32(std::uint32_t v) { raw(&v, 4); }
    void u64(std::uint64_t v) { raw(&v, 8); }
    void i32(std::int32_t v) { raw(&v, 4); }
    void f64(double v) { raw(&v, 8); }
};

struct ByteReader {
    const std::vector<char>& bytes;
    size_t pos = 0;
    std::string where;

    void need(size_t len, const char* what) {
        if (pos + len > bytes.size())
            throw FormatError(where + ": truncated " + what + " at byte offset " + std::to_string(pos));
    }
    void raw(void* p, size_t len, const char* what) {
        need(len, what);
        std::memcpy(p, bytes.data() + pos, len);
        pos += len;
    }
    std::uint8_t u8(const char* what) { std::uint8_t v; raw(&v, 1, what); return v; }
    std::uint16_t u16(const char* what) { std::uint16_t v; raw(&v, 2, what); return v; }
    std::uint32_t u32(const char* what) { std::uint32_t v; raw(&v, 4, what); return v; }
    std::uint64_t u64(const char* what) { std::uint64_t v; raw(&v, 8, what); return v; }
    std::int32_t i32(const char* what) { std::int32_t v; raw(&v, 4, what); return v; }
    double f64(const char* what) { double v; raw(&v, 8, what); return v; }
};

}  // namespace detail

inline void save_checkpoint(const std::string& path, const ModelState& state, const CheckpointMeta& meta) {
    detail::ByteWriter w;
    w.raw(detail::kCheckpointMagic, 8);

    const NetConfig& c = state.config;
    for (int v : {c.in_channels, c.image_size, c.width1, c.width2, c.target_dim, c.categories, c.decoder_hidden,
                  c.classifier_hidden, c.classes})
        w.i32(v);
    w.u8(c.categorical_decoder ? 1 : 0);
    w.f64(c.logvar_lo);
    w.f64(c.logvar_hi);

    w.u8(static_cast<std::uint8_t>(state.mode));
    w.u64(meta.config_hash);
    w.u64(meta.seed);
    w.i32(meta.epoch);

    w.u32(static_cast<std::uint32_t>(state.params.size()));
    for (const auto& [name, tensor] : state.params) {
        w.u16(static_cast<std::uint16_t>(name.size()));
        w.raw(name.data(), name.size());
        w.u8(static_cast<std::uint8_t>(tensor.ndim()));
        for (int d : tensor.shape) w.i32(d);
        w.raw(tensor.data.data(), tensor.data.size() * sizeof(double));
    }

    std::ofstream out(path, std::ios::binary);
    if (!out) throw FormatError("cannot open '" + path + "' for writing");
    out.write(w.bytes.data(), static_cast<std::streamsize>(w.bytes.size()));
    if (!out) throw FormatError("short write to '" + path + "'");
}

inline std::pair<ModelState, CheckpointMeta> load_checkpoint(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw FormatError("cannot open '" + path + "'");
    std::vector<char> bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
    detail::ByteReader r{bytes, 0, "'" + path + "'"};

    char magic[8];
    r.raw(magic, 8, "magic");
    if (std::memcmp(magic, detail::kCheckpointMagic, 8) != 0)
        throw FormatError("'" + path + "': bad magic at offset 0 (not a checkpoint)");

    ModelState state;
    NetConfig& c = state.config;
    c.in_channels = r.i32("config");
    c.image_size = r.i32("config");
    c.width1 = r.i32("config");
    c.width2 = r.i32("config");
    c.target_dim = r.i32("config");
    c.categories = r.i32("config");
    c.decoder_hidden = r.i32("config");
    c.classifier_hidden = r.i32("config");
    c.classes = r.i32("config");
    c.categorical_decoder = r.u8("config") != 0;
    c.logvar_lo = r.f64("config");
    c.logvar_hi = r.f64("config");

    const std::uint8_t mode = r.u8("mode");
    if (mode > 2) throw FormatError("'" + path + "': unknown mode byte " + std::to_string(mode));
    state.mode = static_cast<Mode>(mode);

    CheckpointMeta meta;
    meta.config_hash = r.u64("metadata");
    meta.seed = r.u64("metadata");
    meta.epoch = r.i32("metadata");

    const std::uint32_t count = r.u32("tensor count");
    for (std::uint32_t t = 0; t < count; ++t) {
        const std::uint16_t name_len = r.u16("tensor name length");
        r.need(name_len, "tensor name");
        std::string name(bytes.data() + r.pos, name_len);
        r.pos += name_len;
        const std::uint8_t ndim = r.u8("tensor rank");
        Shape shape(ndim);
        for (std::uint8_t d = 0; d < ndim; ++d) {
            shape[d] = r.i32("tensor shape");
            if (shape[d] < 0) throw FormatError("'" + path + "': negative dimension in tensor '" + name + "'");
        }
        Tensor tensor(shape);
        r.raw(tensor.data.data(), tensor.data.size() * sizeof(double), "tensor data");
        state.params.emplace(std::move(name), std::move(tensor));
    }
    if (r.pos != bytes.size())
        throw FormatError("'" + path + "': " + std::to_string(bytes.size() - r.pos) + " trailing bytes at offset " +
                          std::to_string(r.pos));
    return {std::move(state), meta};
}

}  // namespace tae
