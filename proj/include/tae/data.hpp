#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <numbers>
#include <string>
#include <vector>

#include "tae/common.hpp"
#include "tae/rng.hpp"
#include "tae/tensor.hpp"
#include "tae/warp.hpp"

namespace tae {

// Images plus (optionally) labels. Labels use -1 for "hidden": the
// semi-supervised split marks examples unlabeled by erasing their label,
// not by removing them.
struct Dataset {
    ImageTensor images;
    std::vector<int> labels;  // empty = fully unlabeled dataset
    int class_count = 0;
    std::string name;

    int size() const { return images.data.ndim() == 4 ? images.count() : 0; }
    bool has_labels() const { return !labels.empty(); }

    void validate() const {
        if (size() > 0) images.validate();
        if (has_labels()) {
            if (static_cast<int>(labels.size()) != size())
                throw InputError("dataset '" + name + "': " + std::to_string(labels.size()) + " labels for " +
                                 std::to_string(size()) + " images");
            for (int y : labels)
                if (y >= class_count || y < -1)
                    throw InputError("dataset '" + name + "': label " + std::to_string(y) + " outside [0," +
                                     std::to_string(class_count) + ")");
        }
    }

    // one image as a [1,C,H,W] batch
    ImageTensor image(int i) const {
        const int c = images.channels(), h = images.height(), w = images.width();
        const size_t len = static_cast<size_t>(c) * h * w;
        Tensor t({1, c, h, w});
        std::copy_n(images.data.data.data() + static_cast<size_t>(i) * len, len, t.data.data());
        ImageTensor out;
        out.data = std::move(t);
        out.value_range = images.value_range;
        return out;
    }
};

namespace detail {

inline std::vector<unsigned char> read_file_bytes(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw FormatError("cannot open '" + path + "'");
    std::vector<unsigned char> bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
    return bytes;
}

inline std::uint32_t read_be32(const unsigned char* p) {
    return (static_cast<std::uint32_t>(p[0]) << 24) | (static_cast<std::uint32_t>(p[1]) << 16) |
           (static_cast<std::uint32_t>(p[2]) << 8) | static_cast<std::uint32_t>(p[3]);
}

}  // namespace detail

// CIFAR-10 binary batch: 3073-byte records, one label byte then 3072 pixel
// bytes as R,G,B planes, row-major within each plane. Pixels scale to [0,1].
inline Dataset load_cifar10_binary(const std::string& path) {
    constexpr int kRecord = 3073;
    constexpr int kPlane = 1024;
    const std::vector<unsigned char> bytes = detail::read_file_bytes(path);
    if (bytes.size() % kRecord != 0) {
        const size_t k = bytes.size() / kRecord;
        throw FormatError("'" + path + "': length " + std::to_string(bytes.size()) +
                          " is not a multiple of 3073; record " + std::to_string(k) + " truncated at byte offset " +
                          std::to_string(k * kRecord));
    }
    const int n = static_cast<int>(bytes.size() / kRecord);

    Dataset ds;
    ds.name = "cifar10";
    ds.class_count = 10;
    ds.images.data = Tensor({n, 3, 32, 32});
    ds.images.value_range = {0.0, 1.0};
    ds.labels.resize(static_cast<size_t>(n));
    for (int i = 0; i < n; ++i) {
        const size_t off = static_cast<size_t>(i) * kRecord;
        const int label = bytes[off];
        if (label > 9)
            throw FormatError("'" + path + "': label byte " + std::to_string(label) + " outside [0,10) at byte offset " +
                              std::to_string(off));
        ds.labels[static_cast<size_t>(i)] = label;
        double* dst = ds.images.data.data.data() + static_cast<size_t>(i) * 3 * kPlane;
        for (int j = 0; j < 3 * kPlane; ++j) dst[j] = static_cast<double>(bytes[off + 1 + static_cast<size_t>(j)]) / 255.0;
    }
    ds.validate();
    return ds;
}

// IDX containers (big-endian dims, unsigned-byte payload): magic 0x00000803
// for [N,H,W] image files, 0x00000801 for label files.
struct IdxContent {
    bool is_labels = false;
    Tensor images;            // [N,1,H,W], values in [0,1]
    std::vector<int> labels;  // raw bytes as ints
};

inline IdxContent load_idx(const std::string& path) {
    const std::vector<unsigned char> bytes = detail::read_file_bytes(path);
    if (bytes.size() < 4) throw FormatError("'" + path + "': no magic, file has " + std::to_string(bytes.size()) + " bytes");
    const std::uint32_t magic = detail::read_be32(bytes.data());
    if (magic != 0x00000803u && magic != 0x00000801u)
        throw FormatError("'" + path + "': wrong magic " + hex64(magic).substr(8) + " at offset 0");

    IdxContent out;
    out.is_labels = magic == 0x00000801u;
    const size_t ndim = out.is_labels ? 1 : 3;
    const size_t header = 4 + 4 * ndim;
    if (bytes.size() < header)
        throw FormatError("'" + path + "': header truncated at byte offset " + std::to_string(bytes.size()));
    std::uint64_t numel = 1;
    std::uint32_t dims[3] = {0, 0, 0};
    for (size_t d = 0; d < ndim; ++d) {
        dims[d] = detail::read_be32(bytes.data() + 4 + 4 * d);
        numel *= dims[d];
    }
    if (bytes.size() != header + numel)
        throw FormatError("'" + path + "': expected " + std::to_string(header + numel) + " bytes for dims, got " +
                          std::to_string(bytes.size()) + "; payload ends at byte offset " + std::to_string(bytes.size()));

    if (out.is_labels) {
        out.labels.reserve(numel);
        for (std::uint64_t i = 0; i < numel; ++i) out.labels.push_back(bytes[header + i]);
    } else {
        out.images = Tensor({static_cast<int>(dims[0]), 1, static_cast<int>(dims[1]), static_cast<int>(dims[2])});
        for (std::uint64_t i = 0; i < numel; ++i)
            out.images.data[static_cast<size_t>(i)] = static_cast<double>(bytes[header + i]) / 255.0;
    }
    return out;
}

inline void write_idx_images(const std::string& path, const ImageTensor& imgs) {
    if (imgs.channels() != 1) throw InputError("write_idx_images: IDX image files are single-channel");
    std::ofstream out(path, std::ios::binary);
    if (!out) throw FormatError("cannot open '" + path + "' for writing");
    auto be32 = [&](std::uint32_t v) {
        const unsigned char b[4] = {static_cast<unsigned char>(v >> 24), static_cast<unsigned char>(v >> 16),
                                    static_cast<unsigned char>(v >> 8), static_cast<unsigned char>(v)};
        out.write(reinterpret_cast<const char*>(b), 4);
    };
    be32(0x00000803u);
    be32(static_cast<std::uint32_t>(imgs.count()));
    be32(static_cast<std::uint32_t>(imgs.height()));
    be32(static_cast<std::uint32_t>(imgs.width()));
    for (double v : imgs.data.data) {
        const double clamped = std::min(1.0, std::max(0.0, v));
        out.put(static_cast<char>(static_cast<unsigned char>(std::lround(clamped * 255.0))));
    }
}

inline void write_idx_labels(const std::string& path, const std::vector<int>& labels) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw FormatError("cannot open '" + path + "' for writing");
    auto be32 = [&](std::uint32_t v) {
        const unsigned char b[4] = {static_cast<unsigned char>(v >> 24), static_cast<unsigned char>(v >> 16),
                                    static_cast<unsigned char>(v >> 8), static_cast<unsigned char>(v)};
        out.write(reinterpret_cast<const char*>(b), 4);
    };
    be32(0x00000801u);
    be32(static_cast<std::uint32_t>(labels.size()));
    for (int y : labels) {
        if (y < 0 || y > 255) throw InputError("write_idx_labels: label " + std::to_string(y) + " not a byte");
        out.put(static_cast<char>(static_cast<unsigned char>(y)));
    }
}

// ---------------------------------------------------------------------------
// Synthetic parametric shapes, the desk-scale stand-in dataset. Grayscale
// bars / crosses / rings / disks with soft (smoothstep) edges so warping is
// well behaved. Every shape carries a brightness gradient along its own axis
// (and rings a rim blob), giving each image a definite orientation; the
// orientation itself only jitters within ±kOrientJitterDeg around a canonical
// pose, so relative transformations stay identifiable from image pairs.
// ---------------------------------------------------------------------------

namespace synth {

inline constexpr double kOrientJitterDeg = 25.0;
inline constexpr double kPositionRange = 0.25;   // of the [-1,1] span
inline constexpr double kNoiseAmplitude = 0.02;

inline double smoothstep(double e0, double e1, double x) {
    const double t = std::min(1.0, std::max(0.0, (x - e0) / (e1 - e0)));
    return t * t * (3.0 - 2.0 * t);
}

// intensity of shape `cls` at (u,v) in the shape's own frame
inline double shape_intensity(int cls, double u, double v, double soft) {
    // brightness ramps from 0.45 at one end to 1.0 at the other; this is the
    // orientation marker that breaks the shapes' rotational symmetries
    auto taper = [&](double along, double extent) { return 0.45 + 0.55 * (along + extent) / (2.0 * extent); };
    auto bar = [&](double a, double b, double len, double wid) {
        const double in = smoothstep(len + soft, len - soft, std::abs(a)) * smoothstep(wid + soft, wid - soft, std::abs(b));
        return in * taper(a, len);
    };
    switch (cls) {
        case 0:  // bar
            return bar(u, v, 0.55, 0.13);
        case 1:  // cross
            return std::max(bar(u, v, 0.5, 0.11), bar(v, u, 0.5, 0.11));
        case 2: {  // ring with a rim blob at angle 0
            const double r = std::hypot(u, v);
            const double ring = smoothstep(0.16 + soft, 0.16 - soft, std::abs(r - 0.42));
            const double blob = smoothstep(0.2 + soft, 0.2 - soft, std::hypot(u - 0.42, v));
            return std::min(1.0, 0.75 * ring * taper(u, 0.6) + blob);
        }
        default: {  // disk
            const double r = std::hypot(u, v);
            return smoothstep(0.45 + soft, 0.45 - soft, r) * taper(u, 0.45);
        }
    }
}

}  // namespace synth

// n images of `size`×`size`, stratified over class_count shape kinds,
// reproducible from the generator alone.
inline Dataset synth_shapes(int n, int size, int class_count, Rng& rng) {
    if (class_count < 2 || class_count > 4) throw ContractError("synth_shapes: class_count must be in [2,4]");
    if (n < class_count) throw ContractError("synth_shapes: need at least one example per class");
    if (size < 8) throw ContractError("synth_shapes: size too small");

    Dataset ds;
    ds.name = "synth";
    ds.class_count = class_count;
    ds.images.data = Tensor({n, 1, size, size});
    ds.images.value_range = {0.0, 1.0};
    ds.labels.resize(static_cast<size_t>(n));

    // round-robin classes, then shuffle the order: balance within ±1
    std::vector<int> order(static_cast<size_t>(n));
    for (int i = 0; i < n; ++i) order[static_cast<size_t>(i)] = i % class_count;
    rng.shuffle(order);

    const double soft = 2.4 / static_cast<double>(size);  // ~1.2 px edge width
    const double deg = std::numbers::pi / 180.0;
    for (int i = 0; i < n; ++i) {
        const int cls = order[static_cast<size_t>(i)];
        ds.labels[static_cast<size_t>(i)] = cls;
        const double theta = rng.uniform(-synth::kOrientJitterDeg, synth::kOrientJitterDeg) * deg;
        const double cx = rng.uniform(-synth::kPositionRange, synth::kPositionRange);
        const double cy = rng.uniform(-synth::kPositionRange, synth::kPositionRange);
        const double scale = rng.uniform(0.85, 1.1);
        const double ct = std::cos(theta), st = std::sin(theta);

        double* img = ds.images.data.data.data() + static_cast<size_t>(i) * size * size;
        for (int y = 0; y < size; ++y) {
            const double ny = 2.0 * (y + 0.5) / size - 1.0 - cy;
            for (int x = 0; x < size; ++x) {
                const double nx = 2.0 * (x + 0.5) / size - 1.0 - cx;
                // rotate into the shape frame and undo the scale
                const double u = (ct * nx + st * ny) / scale;
                const double v = (-st * nx + ct * ny) / scale;
                double val = synth::shape_intensity(cls, u, v, soft);
                val += rng.uniform(0.0, synth::kNoiseAmplitude);
                img[y * size + x] = std::min(1.0, std::max(0.0, val));
            }
        }
    }
    ds.validate();
    return ds;
}

}  // namespace tae
