#pragma once

#include <cmath>
#include <cstdint>
#include <string_view>

namespace garment {

/// FNV-1a 64-bit hash; used to derive per-id random streams and file checksums.
inline std::uint64_t fnv1a64(std::string_view s, std::uint64_t seed = 0xcbf29ce484222325ull) {
    std::uint64_t h = seed;
    for (unsigned char ch : s) {
        h ^= ch;
        h *= 0x100000001b3ull;
    }
    return h;
}

inline std::uint64_t fnv1a64(const void* data, std::size_t n, std::uint64_t seed = 0xcbf29ce484222325ull) {
    return fnv1a64(std::string_view(static_cast<const char*>(data), n), seed);
}

inline std::uint64_t splitmix64(std::uint64_t& state) {
    std::uint64_t z = (state += 0x9e3779b97f4a7c15ull);
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ull;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebull;
    return z ^ (z >> 31);
}

/// xoshiro256++ with splitmix64 seeding. Self-contained so that generated
/// streams are identical across standard libraries and platforms.
class Rng {
public:
    explicit Rng(std::uint64_t seed = 0) { reseed(seed); }

    /// Stream derived from (seed, stream id); used for per-record and
    /// per-anchor counter-based generators.
    Rng(std::uint64_t seed, std::string_view stream) : Rng(seed ^ fnv1a64(stream)) {}
    Rng(std::uint64_t seed, std::uint64_t stream) { reseed(seed ^ (stream * 0x9e3779b97f4a7c15ull + 0x7f4a7c15ull)); }

    void reseed(std::uint64_t seed) {
        std::uint64_t sm = seed;
        for (auto& word : s_) word = splitmix64(sm);
        gauss_valid_ = false;
    }

    std::uint64_t next_u64() {
        const std::uint64_t result = rotl(s_[0] + s_[3], 23) + s_[0];
        const std::uint64_t t = s_[1] << 17;
        s_[2] ^= s_[0];
        s_[3] ^= s_[1];
        s_[1] ^= s_[2];
        s_[0] ^= s_[3];
        s_[2] ^= t;
        s_[3] = rotl(s_[3], 45);
        return result;
    }

    /// Uniform in [0, 1).
    double uniform() { return double(next_u64() >> 11) * 0x1.0p-53; }

    /// Uniform in [lo, hi).
    double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

    /// Uniform integer in [0, n); n > 0. Rejection-free bounded draw
    /// (Lemire-style multiply-shift, deterministic).
    std::uint64_t below(std::uint64_t n) {
        // 128-bit multiply keeps the draw unbiased enough for simulation use.
        unsigned __int128 m = (unsigned __int128)next_u64() * n;
        return std::uint64_t(m >> 64);
    }

    int range_int(int lo, int hi) {  // inclusive bounds
        return lo + int(below(std::uint64_t(hi - lo + 1)));
    }

    /// Standard normal via Box-Muller; caches the second draw.
    double gaussian() {
        if (gauss_valid_) {
            gauss_valid_ = false;
            return gauss_spare_;
        }
        double u1 = 0.0;
        do {
            u1 = uniform();
        } while (u1 <= 0.0);
        const double u2 = uniform();
        const double r = std::sqrt(-2.0 * std::log(u1));
        const double a = 6.283185307179586476925286766559 * u2;
        gauss_spare_ = r * std::sin(a);
        gauss_valid_ = true;
        return r * std::cos(a);
    }

private:
    static std::uint64_t rotl(std::uint64_t x, int k) { return (x << k) | (x >> (64 - k)); }

    std::uint64_t s_[4] = {};
    double gauss_spare_ = 0.0;
    bool gauss_valid_ = false;
};

}  // namespace garment
