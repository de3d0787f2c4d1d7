#pragma once

#include <cstdint>
#include <stdexcept>
#include <string>
#include <string_view>

namespace tae {

// Error taxonomy. The CLI maps these onto exit codes, everything else
// just throws.
struct ConfigError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

struct UsageError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

// Malformed external data (dataset files, checkpoints). Message carries a
// byte offset or path whenever one is known.
struct FormatError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

struct InputError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

// Shape mismatches between tensors/vectors; message reports both shapes.
struct ShapeError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

// Singular matrices, NaN losses, unresolvable degeneracies.
struct NumericError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

// Caller broke a documented precondition (K > N, zero samples, ...).
struct ContractError : std::logic_error {
    using std::logic_error::logic_error;
};

// Closed interval [lo, hi].
struct Interval {
    double lo = 0.0;
    double hi = 0.0;

    bool valid() const { return lo <= hi; }
    bool contains(double x) const { return x >= lo && x <= hi; }
    double width() const { return hi - lo; }
};

// FNV-1a, used for config hashes and parameter digests.
inline std::uint64_t fnv1a(std::string_view bytes, std::uint64_t seed = 0xcbf29ce484222325ull) {
    std::uint64_t h = seed;
    for (unsigned char c : bytes) {
        h ^= c;
        h *= 0x100000001b3ull;
    }
    return h;
}

inline std::string hex64(std::uint64_t v) {
    static const char* digits = "0123456789abcdef";
    std::string out(16, '0');
    for (int i = 15; i >= 0; --i) {
        out[static_cast<size_t>(i)] = digits[v & 0xf];
        v >>= 4;
    }
    return out;
}

}  // namespace tae
