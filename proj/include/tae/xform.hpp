#pragma once

#include <array>
#include <cmath>
#include <cstdint>
#include <numbers>
#include <string>
#include <utility>
#include <variant>
#include <vector>

#include "tae/common.hpp"
#include "tae/rng.hpp"

namespace tae {

// ---------------------------------------------------------------------------
// Homography carrier.
//
// All transformations act on normalized image coordinates [-1,1]^2 with y
// increasing downward, which keeps regression targets independent of the
// pixel resolution. Matrices are stored row-major and normalized so that
// m[2][2] = 1.
// ---------------------------------------------------------------------------

struct Homography {
    std::array<double, 9> m = {1, 0, 0, 0, 1, 0, 0, 0, 1};

    static Homography identity() { return {}; }

    static Homography translation(double tx, double ty) {
        Homography h;
        h.m[2] = tx;
        h.m[5] = ty;
        return h;
    }

    static Homography rotation_deg(double deg) {
        const double a = deg * std::numbers::pi / 180.0;
        const double c = std::cos(a), s = std::sin(a);
        Homography h;
        h.m = {c, -s, 0, s, c, 0, 0, 0, 1};
        return h;
    }

    static Homography scaling(double s) {
        Homography h;
        h.m[0] = s;
        h.m[4] = s;
        return h;
    }

    static Homography shear_x_deg(double deg) {
        Homography h;
        h.m[1] = std::tan(deg * std::numbers::pi / 180.0);
        return h;
    }

    double det() const {
        return m[0] * (m[4] * m[8] - m[5] * m[7]) - m[1] * (m[3] * m[8] - m[5] * m[6]) +
               m[2] * (m[3] * m[7] - m[4] * m[6]);
    }

    // Maps a point, performing the projective division.
    std::pair<double, double> apply(double x, double y) const {
        const double w = m[6] * x + m[7] * y + m[8];
        if (std::abs(w) < 1e-12) throw NumericError("homography maps point to infinity");
        return {(m[0] * x + m[1] * y + m[2]) / w, (m[3] * x + m[4] * y + m[5]) / w};
    }
};

inline Homography normalize(Homography h) {
    if (std::abs(h.m[8]) < 1e-12) throw NumericError("homography has vanishing scale entry");
    const double w = h.m[8];
    for (double& v : h.m) v /= w;
    h.m[8] = 1.0;
    return h;
}

inline Homography compose(const Homography& a, const Homography& b) {
    Homography r;
    for (int i = 0; i < 3; ++i)
        for (int j = 0; j < 3; ++j) {
            double acc = 0.0;
            for (int k = 0; k < 3; ++k) acc += a.m[static_cast<size_t>(3 * i + k)] * b.m[static_cast<size_t>(3 * k + j)];
            r.m[static_cast<size_t>(3 * i + j)] = acc;
        }
    return normalize(r);
}

inline Homography invert(const Homography& h) {
    const double d = h.det();
    if (std::abs(d) < 1e-12) throw NumericError("singular homography");
    const auto& m = h.m;
    Homography r;
    r.m[0] = (m[4] * m[8] - m[5] * m[7]) / d;
    r.m[1] = (m[2] * m[7] - m[1] * m[8]) / d;
    r.m[2] = (m[1] * m[5] - m[2] * m[4]) / d;
    r.m[3] = (m[5] * m[6] - m[3] * m[8]) / d;
    r.m[4] = (m[0] * m[8] - m[2] * m[6]) / d;
    r.m[5] = (m[2] * m[3] - m[0] * m[5]) / d;
    r.m[6] = (m[3] * m[7] - m[4] * m[6]) / d;
    r.m[7] = (m[1] * m[6] - m[0] * m[7]) / d;
    r.m[8] = (m[0] * m[4] - m[1] * m[3]) / d;
    return normalize(r);
}

// ---------------------------------------------------------------------------
// Four-point solve: the unique homography mapping src[i] -> dst[i].
// Direct 8x8 linear system in the entries h0..h7 (h8 = 1), solved by
// Gaussian elimination with partial pivoting.
// ---------------------------------------------------------------------------

using Quad = std::array<std::pair<double, double>, 4>;

inline Quad domain_corners() {
    return {{{-1.0, -1.0}, {1.0, -1.0}, {1.0, 1.0}, {-1.0, 1.0}}};
}

inline Homography solve_homography_4pt(const Quad& src, const Quad& dst) {
    double a[8][9] = {};
    for (int i = 0; i < 4; ++i) {
        const double x = src[static_cast<size_t>(i)].first, y = src[static_cast<size_t>(i)].second;
        const double u = dst[static_cast<size_t>(i)].first, v = dst[static_cast<size_t>(i)].second;
        double* r0 = a[2 * i];
        double* r1 = a[2 * i + 1];
        r0[0] = x; r0[1] = y; r0[2] = 1; r0[6] = -u * x; r0[7] = -u * y; r0[8] = u;
        r1[3] = x; r1[4] = y; r1[5] = 1; r1[6] = -v * x; r1[7] = -v * y; r1[8] = v;
    }
    for (int col = 0; col < 8; ++col) {
        int pivot = col;
        for (int r = col + 1; r < 8; ++r)
            if (std::abs(a[r][col]) > std::abs(a[pivot][col])) pivot = r;
        if (std::abs(a[pivot][col]) < 1e-12) throw NumericError("degenerate point correspondence");
        if (pivot != col)
            for (int c = 0; c < 9; ++c) std::swap(a[pivot][c], a[col][c]);
        for (int r = 0; r < 8; ++r) {
            if (r == col) continue;
            const double f = a[r][col] / a[col][col];
            if (f == 0.0) continue;
            for (int c = col; c < 9; ++c) a[r][c] -= f * a[col][c];
        }
    }
    Homography h;
    for (int i = 0; i < 8; ++i) h.m[static_cast<size_t>(i)] = a[i][8] / a[i][i];
    h.m[8] = 1.0;
    return h;
}

// ---------------------------------------------------------------------------
// Transformation families and sampling.
// ---------------------------------------------------------------------------

enum class TransformKind { Affine, Projective, Categorical };

inline const char* kind_name(TransformKind k) {
    switch (k) {
        case TransformKind::Affine: return "affine";
        case TransformKind::Projective: return "projective";
        case TransformKind::Categorical: return "categorical";
    }
    return "?";
}

// Sampling ranges for the affine family. Angles in degrees, translations as
// fractions of the image size per axis.
struct AffineSpec {
    Interval rot_range{-180.0, 180.0};
    Interval trans_range{-0.2, 0.2};
    Interval scale_range{0.7, 1.3};
    Interval shear_range{-30.0, 30.0};

    void validate() const {
        if (!rot_range.valid() || !trans_range.valid() || !scale_range.valid() || !shear_range.valid())
            throw ConfigError("affine spec: every interval needs lo <= hi");
        if (scale_range.lo <= 0.0 && scale_range.hi >= 0.0)
            throw ConfigError("affine spec: scale range must exclude 0");
    }

    static AffineSpec identity_only() { return {{0, 0}, {0, 0}, {1, 1}, {0, 0}}; }
};

// Corner-perturbation construction for the projective family: the image is
// pre-scaled, pre-rotated by a right angle, then each corner is translated
// by a fraction of the image size.
struct ProjectiveSpec {
    Interval corner_range{-0.125, 0.125};
    Interval pre_scale_range{0.8, 1.2};
    std::vector<int> pre_rot_set{0, 90, 180, 270};

    void validate() const {
        if (!corner_range.valid() || !pre_scale_range.valid())
            throw ConfigError("projective spec: every interval needs lo <= hi");
        if (std::abs(corner_range.lo) >= 0.5 || std::abs(corner_range.hi) >= 0.5)
            throw ConfigError("projective spec: corner offsets must stay below 0.5 of the image size");
        if (pre_scale_range.lo <= 0.0 && pre_scale_range.hi >= 0.0)
            throw ConfigError("projective spec: pre-scale range must exclude 0");
        if (pre_rot_set.empty()) throw ConfigError("projective spec: pre-rotation set must not be empty");
        for (int r : pre_rot_set)
            if (r != 0 && r != 90 && r != 180 && r != 270)
                throw ConfigError("projective spec: pre-rotations must be multiples of 90 in [0,270]");
    }
};

// A finite set of fixed homographies drawn with the given masses
// (uniform by default). Default set: the four right-angle rotations.
struct CategoricalSpec {
    std::vector<Homography> items;
    std::vector<double> masses;  // empty = uniform

    static CategoricalSpec right_angle_rotations() {
        CategoricalSpec s;
        for (int deg : {0, 90, 180, 270}) s.items.push_back(Homography::rotation_deg(deg));
        return s;
    }

    void validate() const {
        if (items.empty()) throw ConfigError("categorical spec: needs at least one transformation");
        if (!masses.empty()) {
            if (masses.size() != items.size())
                throw ConfigError("categorical spec: mass count must match item count");
            double sum = 0.0;
            for (double w : masses) {
                if (w < 0.0) throw ConfigError("categorical spec: masses must be nonnegative");
                sum += w;
            }
            if (sum <= 0.0) throw ConfigError("categorical spec: masses must not all vanish");
        }
    }
};

struct AffineRaw {
    double rot_deg = 0.0;
    double trans_x = 0.0;  // fraction of image size
    double trans_y = 0.0;
    double scale = 1.0;
    double shear_deg = 0.0;
};

struct ProjectiveRaw {
    std::array<double, 8> corner_offsets = {};  // fractions, (dx,dy) per corner
    double pre_scale = 1.0;
    int pre_rot_deg = 0;
};

struct CategoricalRaw {
    int index = 0;
};

using RawParams = std::variant<AffineRaw, ProjectiveRaw, CategoricalRaw>;

struct TransformParams {
    TransformKind kind = TransformKind::Affine;
    RawParams raw;
    Homography h;
    std::vector<double> target;  // standardized regression encoding; empty for categorical
};

namespace detail {
// The normalized domain spans [-1,1], so a translation by a fraction f of
// the image size moves points by 2f.
constexpr double kDomainWidth = 2.0;
}  // namespace detail

inline Homography affine_homography(const AffineRaw& r) {
    const Homography t = Homography::translation(detail::kDomainWidth * r.trans_x, detail::kDomainWidth * r.trans_y);
    return compose(t, compose(Homography::rotation_deg(r.rot_deg),
                              compose(Homography::shear_x_deg(r.shear_deg), Homography::scaling(r.scale))));
}

inline bool quad_is_convex(const Quad& q) {
    double sign = 0.0;
    for (int i = 0; i < 4; ++i) {
        const auto& p0 = q[static_cast<size_t>(i)];
        const auto& p1 = q[static_cast<size_t>((i + 1) % 4)];
        const auto& p2 = q[static_cast<size_t>((i + 2) % 4)];
        const double ex0 = p1.first - p0.first, ey0 = p1.second - p0.second;
        const double ex1 = p2.first - p1.first, ey1 = p2.second - p1.second;
        const double cross = ex0 * ey1 - ey0 * ex1;
        if (std::abs(cross) < 1e-6) return false;  // collinear corners
        if (sign == 0.0)
            sign = cross > 0 ? 1.0 : -1.0;
        else if (cross * sign < 0.0)
            return false;  // self-intersecting
    }
    return true;
}

inline Homography projective_homography(const ProjectiveRaw& r) {
    const Homography pre = compose(Homography::rotation_deg(r.pre_rot_deg), Homography::scaling(r.pre_scale));
    const Quad src = domain_corners();
    Quad dst;
    for (int i = 0; i < 4; ++i) {
        auto [u, v] = pre.apply(src[static_cast<size_t>(i)].first, src[static_cast<size_t>(i)].second);
        dst[static_cast<size_t>(i)] = {u + detail::kDomainWidth * r.corner_offsets[static_cast<size_t>(2 * i)],
                                       v + detail::kDomainWidth * r.corner_offsets[static_cast<size_t>(2 * i + 1)]};
    }
    if (!quad_is_convex(dst)) throw NumericError("degenerate corner perturbation");
    return solve_homography_4pt(src, dst);
}

// ---------------------------------------------------------------------------
// Regression-target encoding.
//
// Targets are flattened homography entries (top two rows for affine, all
// eight free entries for projective), standardized per dimension with fixed
// constants so one decoder head serves both families. The constants below
// are per-dimension mean/stddev from 1e6 seeded draws of the default
// sampling ranges and are frozen; do not recompute them at runtime.
// ---------------------------------------------------------------------------

namespace target_stats {
// placeholders until calibration; regenerated by the one-off moment run
inline constexpr std::array<double, 6> kAffineOffset = {0, 0, 0, 0, 0, 0};
inline constexpr std::array<double, 6> kAffineScale = {1, 1, 1, 1, 1, 1};
inline constexpr std::array<double, 8> kProjectiveOffset = {0, 0, 0, 0, 0, 0, 0, 0};
inline constexpr std::array<double, 8> kProjectiveScale = {1, 1, 1, 1, 1, 1, 1, 1};
}  // namespace target_stats

inline int target_dim(TransformKind kind) {
    switch (kind) {
        case TransformKind::Affine: return 6;
        case TransformKind::Projective: return 8;
        case TransformKind::Categorical: break;
    }
    throw ContractError("categorical transformations have no regression encoding");
}

inline std::vector<double> encode_target(const TransformParams& t) {
    switch (t.kind) {
        case TransformKind::Affine: {
            std::vector<double> v(6);
            for (int i = 0; i < 6; ++i)
                v[static_cast<size_t>(i)] =
                    (t.h.m[static_cast<size_t>(i)] - target_stats::kAffineOffset[static_cast<size_t>(i)]) /
                    target_stats::kAffineScale[static_cast<size_t>(i)];
            return v;
        }
        case TransformKind::Projective: {
            std::vector<double> v(8);
            for (int i = 0; i < 8; ++i)
                v[static_cast<size_t>(i)] =
                    (t.h.m[static_cast<size_t>(i)] - target_stats::kProjectiveOffset[static_cast<size_t>(i)]) /
                    target_stats::kProjectiveScale[static_cast<size_t>(i)];
            return v;
        }
        case TransformKind::Categorical: break;
    }
    throw ContractError("categorical transformations have no regression encoding");
}

inline Homography decode_target(const std::vector<double>& v, TransformKind kind) {
    Homography h;
    switch (kind) {
        case TransformKind::Affine: {
            if (v.size() != 6) throw ShapeError("affine target needs 6 entries, got " + std::to_string(v.size()));
            for (int i = 0; i < 6; ++i)
                h.m[static_cast<size_t>(i)] =
                    v[static_cast<size_t>(i)] * target_stats::kAffineScale[static_cast<size_t>(i)] +
                    target_stats::kAffineOffset[static_cast<size_t>(i)];
            h.m[6] = 0.0;
            h.m[7] = 0.0;
            h.m[8] = 1.0;
            return h;
        }
        case TransformKind::Projective: {
            if (v.size() != 8) throw ShapeError("projective target needs 8 entries, got " + std::to_string(v.size()));
            for (int i = 0; i < 8; ++i)
                h.m[static_cast<size_t>(i)] =
                    v[static_cast<size_t>(i)] * target_stats::kProjectiveScale[static_cast<size_t>(i)] +
                    target_stats::kProjectiveOffset[static_cast<size_t>(i)];
            h.m[8] = 1.0;
            return h;
        }
        case TransformKind::Categorical: break;
    }
    throw ContractError("categorical transformations have no regression encoding");
}

// ---------------------------------------------------------------------------
// Samplers. Pure given the generator; a fixed seed reproduces the exact
// same parameters.
// ---------------------------------------------------------------------------

inline TransformParams sample_affine(Rng& rng, const AffineSpec& spec) {
    spec.validate();
    AffineRaw raw;
    raw.rot_deg = rng.uniform(spec.rot_range);
    raw.trans_x = rng.uniform(spec.trans_range);
    raw.trans_y = rng.uniform(spec.trans_range);
    raw.scale = rng.uniform(spec.scale_range);
    raw.shear_deg = rng.uniform(spec.shear_range);
    TransformParams t;
    t.kind = TransformKind::Affine;
    t.raw = raw;
    t.h = affine_homography(raw);
    t.target = encode_target(t);
    return t;
}

inline TransformParams sample_projective(Rng& rng, const ProjectiveSpec& spec) {
    spec.validate();
    for (int attempt = 0; attempt < 16; ++attempt) {
        ProjectiveRaw raw;
        raw.pre_scale = rng.uniform(spec.pre_scale_range);
        raw.pre_rot_deg = spec.pre_rot_set[static_cast<size_t>(rng.below(spec.pre_rot_set.size()))];
        for (double& o : raw.corner_offsets) o = rng.uniform(spec.corner_range);
        try {
            TransformParams t;
            t.kind = TransformKind::Projective;
            t.h = projective_homography(raw);
            t.raw = raw;
            t.target = encode_target(t);
            return t;
        } catch (const NumericError&) {
            // degenerate quad; draw again
        }
    }
    throw NumericError("projective sampling failed 16 times; corner range too aggressive");
}

inline TransformParams sample_categorical(Rng& rng, const CategoricalSpec& spec) {
    spec.validate();
    size_t idx = 0;
    if (spec.masses.empty()) {
        idx = static_cast<size_t>(rng.below(spec.items.size()));
    } else {
        double total = 0.0;
        for (double w : spec.masses) total += w;
        double u = rng.uniform01() * total;
        for (; idx + 1 < spec.masses.size(); ++idx) {
            u -= spec.masses[idx];
            if (u < 0.0) break;
        }
    }
    TransformParams t;
    t.kind = TransformKind::Categorical;
    t.raw = CategoricalRaw{static_cast<int>(idx)};
    t.h = spec.items[idx];
    return t;
}

// Flat record for logging: kind, raw scalars, then the 9 homography entries.
inline std::vector<std::pair<std::string, std::string>> to_kv(const TransformParams& t) {
    std::vector<std::pair<std::string, std::string>> kv;
    auto num = [](double v) {
        char buf[32];
        std::snprintf(buf, sizeof(buf), "%.17g", v);
        return std::string(buf);
    };
    kv.emplace_back("kind", kind_name(t.kind));
    if (const auto* a = std::get_if<AffineRaw>(&t.raw)) {
        kv.emplace_back("rot_deg", num(a->rot_deg));
        kv.emplace_back("trans_x", num(a->trans_x));
        kv.emplace_back("trans_y", num(a->trans_y));
        kv.emplace_back("scale", num(a->scale));
        kv.emplace_back("shear_deg", num(a->shear_deg));
    } else if (const auto* p = std::get_if<ProjectiveRaw>(&t.raw)) {
        for (int i = 0; i < 8; ++i)
            kv.emplace_back("corner_" + std::to_string(i), num(p->corner_offsets[static_cast<size_t>(i)]));
        kv.emplace_back("pre_scale", num(p->pre_scale));
        kv.emplace_back("pre_rot_deg", std::to_string(p->pre_rot_deg));
    } else if (const auto* c = std::get_if<CategoricalRaw>(&t.raw)) {
        kv.emplace_back("index", std::to_string(c->index));
    }
    for (int i = 0; i < 9; ++i) kv.emplace_back("h" + std::to_string(i), num(t.h.m[static_cast<size_t>(i)]));
    return kv;
}

}  // namespace tae
