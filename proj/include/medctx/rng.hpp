#pragma once

#include <cmath>
#include <cstdint>
#include <random>
#include <string_view>

#include "medctx/errors.hpp"

namespace medctx {

// All randomness in a run flows from one root seed through named substreams
// (e.g. "init", "mask", "batch", "augment"). Substream seeds are derived by
// hashing (root, stream name, index), so any step of a run can be replayed
// without replaying the steps before it.

inline uint64_t splitmix64(uint64_t x) {
    x += 0x9e3779b97f4a7c15ull;
    x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ull;
    x = (x ^ (x >> 27)) * 0x94d049bb133111ebull;
    return x ^ (x >> 31);
}

/// Seed for substream `stream` at position `index` under `root`.
inline uint64_t derive_seed(uint64_t root, std::string_view stream, uint64_t index = 0) {
    uint64_t h = 0xcbf29ce484222325ull; // FNV-1a over the stream name
    for (char c : stream) {
        h ^= static_cast<uint64_t>(static_cast<unsigned char>(c));
        h *= 0x100000001b3ull;
    }
    return splitmix64(splitmix64(root ^ h) ^ index);
}

/// Seeded generator with explicit, library-independent value mapping so the
/// same seed yields the same draws on any platform.
class Rng {
public:
    explicit Rng(uint64_t seed) : eng_(seed) {}

    uint64_t next_u64() { return eng_(); }

    /// Uniform in [0, 1) with 53 random bits.
    double uniform() {
        return static_cast<double>(eng_() >> 11) * 0x1.0p-53;
    }

    double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

    /// Inclusive integer range, rejection-sampled to avoid modulo bias.
    int64_t uniform_int(int64_t lo, int64_t hi) {
        if (lo > hi) throw ContractError("Rng::uniform_int: lo > hi");
        uint64_t span = static_cast<uint64_t>(hi - lo) + 1;
        if (span == 0) return static_cast<int64_t>(eng_()); // full 64-bit range
        uint64_t limit = UINT64_MAX - UINT64_MAX % span;
        uint64_t r;
        do {
            r = eng_();
        } while (r >= limit);
        return lo + static_cast<int64_t>(r % span);
    }

    /// Box-Muller; consumes two uniforms per call, no cached spare.
    double normal(double mean = 0.0, double sigma = 1.0) {
        double u1 = uniform();
        double u2 = uniform();
        while (u1 <= 0.0) u1 = uniform();
        double r = std::sqrt(-2.0 * std::log(u1));
        return mean + sigma * r * std::cos(2.0 * 3.14159265358979323846 * u2);
    }

private:
    std::mt19937_64 eng_;
};

} // namespace medctx
