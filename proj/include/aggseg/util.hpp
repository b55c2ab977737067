#pragma once

#include <cmath>
#include <cstdint>
#include <cstdio>
#include <stdexcept>
#include <string>

namespace aggseg {

/// Error for bad input data, shapes, or file contents. CLI exit code 3.
class DataError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// Error for violated internal invariants. CLI exit code 4.
class InternalError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// Portable 64-bit generator (splitmix): state advances by the golden-ratio
/// increment 0x9E3779B97F4A7C15, output mixed with the finalizer constants
/// 0xBF58476D1CE4E5B9 and 0x94D049BB133111EB. All randomness in the project
/// flows through this so results reproduce across platforms.
struct SplitMix64 {
    std::uint64_t state = 0;

    explicit SplitMix64(std::uint64_t seed = 0) : state(seed) {}

    std::uint64_t next() {
        state += 0x9E3779B97F4A7C15ull;
        std::uint64_t z = state;
        z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ull;
        z = (z ^ (z >> 27)) * 0x94D049BB133111EBull;
        return z ^ (z >> 31);
    }

    /// Uniform double in [0, 1), 53 bits of mantissa.
    double unit() { return double(next() >> 11) * 0x1.0p-53; }

    /// Uniform integer in [0, n). n must be nonzero.
    std::uint64_t below(std::uint64_t n) { return next() % n; }
};

/// Derive independent child streams from a master seed. Stream k's seed is
/// the (k+1)-th output of SplitMix64(master).
inline std::uint64_t stream_seed(std::uint64_t master, unsigned k) {
    SplitMix64 g(master);
    std::uint64_t s = 0;
    for (unsigned i = 0; i <= k; ++i) s = g.next();
    return s;
}

/// Format a real with 17 significant digits, enough to round-trip a double
/// exactly. Used for every real landing in a CSV or model file.
inline std::string format_real17(double x) {
    char buf[40];
    std::snprintf(buf, sizeof(buf), "%.17g", x);
    return buf;
}

namespace detail {

/// x * log2(x) with the 0 log 0 = 0 convention.
inline double xlog2(double x) { return x > 0 ? x * std::log2(x) : 0.0; }

}  // namespace detail

/// FNV-1a 64-bit, used for input digests in run manifests.
inline std::uint64_t fnv1a64(const void* data, std::size_t n) {
    const auto* p = static_cast<const unsigned char*>(data);
    std::uint64_t h = 0xcbf29ce484222325ull;
    for (std::size_t i = 0; i < n; ++i) {
        h ^= p[i];
        h *= 0x100000001b3ull;
    }
    return h;
}

}  // namespace aggseg
