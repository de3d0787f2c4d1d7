#pragma once

#include <cmath>
#include <utility>
#include <vector>

#include "tae/common.hpp"
#include "tae/tensor.hpp"
#include "tae/xform.hpp"

namespace tae {

// Image batch in [N,C,H,W] layout with an explicit value range.
struct ImageTensor {
    Tensor data;
    Interval value_range{0.0, 1.0};

    ImageTensor() = default;
    explicit ImageTensor(Tensor t, Interval range = {0.0, 1.0}) : data(std::move(t)), value_range(range) {
        validate();
    }

    int count() const { return data.dim(0); }
    int channels() const { return data.dim(1); }
    int height() const { return data.dim(2); }
    int width() const { return data.dim(3); }

    void validate() const {
        if (data.ndim() != 4) throw ShapeError("image tensor must be [N,C,H,W], got " + shape_str(data.shape));
        for (int d : data.shape)
            if (d < 1) throw ShapeError("image tensor dimensions must be positive, got " + shape_str(data.shape));
        for (double v : data.data) {
            if (!(v >= value_range.lo - 1e-6 && v <= value_range.hi + 1e-6))
                throw InputError("image value " + std::to_string(v) + " outside declared range [" +
                                 std::to_string(value_range.lo) + "," + std::to_string(value_range.hi) + "]");
        }
    }
};

namespace detail {

// Pixel centers sit at (i+0.5)/W mapped onto [-1,1]; these convert both ways.
inline double pixel_to_norm(int i, int extent) {
    return 2.0 * (static_cast<double>(i) + 0.5) / static_cast<double>(extent) - 1.0;
}

inline double norm_to_pixel(double x, int extent) {
    return (x + 1.0) * 0.5 * static_cast<double>(extent) - 0.5;
}

// Bilinear read of one plane with zero padding. Coordinates within 1e-9 of
// a pixel grid line snap to it, which keeps identity and whole-pixel shifts
// exact.
inline double sample_plane(const double* plane, int h, int w, double px, double py) {
    int x0 = static_cast<int>(std::floor(px));
    int y0 = static_cast<int>(std::floor(py));
    double fx = px - static_cast<double>(x0);
    double fy = py - static_cast<double>(y0);
    if (fx < 1e-9) fx = 0.0;
    if (fx > 1.0 - 1e-9) { fx = 0.0; ++x0; }
    if (fy < 1e-9) fy = 0.0;
    if (fy > 1.0 - 1e-9) { fy = 0.0; ++y0; }

    auto read = [&](int yy, int xx) -> double {
        if (xx < 0 || xx >= w || yy < 0 || yy >= h) return 0.0;
        return plane[static_cast<size_t>(yy) * static_cast<size_t>(w) + static_cast<size_t>(xx)];
    };

    const double v00 = read(y0, x0);
    const double v01 = fx > 0.0 ? read(y0, x0 + 1) : 0.0;
    const double v10 = fy > 0.0 ? read(y0 + 1, x0) : 0.0;
    const double v11 = (fx > 0.0 && fy > 0.0) ? read(y0 + 1, x0 + 1) : 0.0;
    return (1.0 - fy) * ((1.0 - fx) * v00 + fx * v01) + fy * ((1.0 - fx) * v10 + fx * v11);
}

}  // namespace detail

// Samples every (n,c) plane at the given normalized coordinates; output is
// [N, C, P]. Out-of-bounds neighbors contribute zero.
inline Tensor bilinear_sample(const ImageTensor& img, const std::vector<std::pair<double, double>>& xy) {
    const int n = img.count(), c = img.channels(), h = img.height(), w = img.width();
    for (const auto& [x, y] : xy)
        if (!std::isfinite(x) || !std::isfinite(y)) throw InputError("bilinear_sample: non-finite coordinate");
    Tensor out({n, c, static_cast<int>(xy.size())});
    const size_t plane_len = static_cast<size_t>(h) * static_cast<size_t>(w);
    size_t o = 0;
    for (int ni = 0; ni < n; ++ni) {
        for (int ci = 0; ci < c; ++ci) {
            const double* plane = img.data.data.data() + (static_cast<size_t>(ni) * static_cast<size_t>(c) + static_cast<size_t>(ci)) * plane_len;
            for (const auto& [x, y] : xy)
                out.data[o++] = detail::sample_plane(plane, h, w, detail::norm_to_pixel(x, w), detail::norm_to_pixel(y, h));
        }
    }
    return out;
}

// Inverse warp: each output pixel pulls its value from h^-1 applied to its
// own normalized coordinate. Zero padding outside the input. Sampled
// transformations never carry gradients, so this stays off the tape.
inline ImageTensor warp_image(const ImageTensor& img, const Homography& h, int out_h, int out_w) {
    img.validate();
    if (out_h < 1 || out_w < 1) throw ShapeError("warp_image: output size must be positive");
    const Homography hinv = invert(h);

    const int n = img.count(), c = img.channels(), ih = img.height(), iw = img.width();
    Tensor out({n, c, out_h, out_w});

    // Source pixel coordinates depend only on the output location.
    std::vector<double> src_px(static_cast<size_t>(out_h) * static_cast<size_t>(out_w));
    std::vector<double> src_py(src_px.size());
    for (int y = 0; y < out_h; ++y) {
        const double ny = detail::pixel_to_norm(y, out_h);
        for (int x = 0; x < out_w; ++x) {
            const double nx = detail::pixel_to_norm(x, out_w);
            auto [u, v] = hinv.apply(nx, ny);
            const size_t idx = static_cast<size_t>(y) * static_cast<size_t>(out_w) + static_cast<size_t>(x);
            src_px[idx] = detail::norm_to_pixel(u, iw);
            src_py[idx] = detail::norm_to_pixel(v, ih);
        }
    }

    const size_t in_plane = static_cast<size_t>(ih) * static_cast<size_t>(iw);
    const size_t out_plane = src_px.size();
    for (int ni = 0; ni < n; ++ni) {
        for (int ci = 0; ci < c; ++ci) {
            const double* plane = img.data.data.data() + (static_cast<size_t>(ni) * static_cast<size_t>(c) + static_cast<size_t>(ci)) * in_plane;
            double* dst = out.data.data() + (static_cast<size_t>(ni) * static_cast<size_t>(c) + static_cast<size_t>(ci)) * out_plane;
            for (size_t idx = 0; idx < out_plane; ++idx)
                dst[idx] = detail::sample_plane(plane, ih, iw, src_px[idx], src_py[idx]);
        }
    }

    ImageTensor result;
    result.data = std::move(out);
    result.value_range = {std::min(0.0, img.value_range.lo), std::max(0.0, img.value_range.hi)};
    return result;
}

}  // namespace tae
