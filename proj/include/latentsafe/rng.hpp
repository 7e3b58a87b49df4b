#pragma once

#include <array>
#include <cmath>
#include <cstdint>
#include <stdexcept>
#include <string_view>

namespace latentsafe {

inline uint64_t splitmix64(uint64_t& x) {
    x += 0x9e3779b97f4a7c15ULL;
    uint64_t z = x;
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
    return z ^ (z >> 31);
}

// Deterministic stream derivation: same (seed, tag, index) -> same child seed,
// independent of platform library details.
inline uint64_t derive_seed(uint64_t seed, uint64_t tag, uint64_t index = 0) {
    uint64_t x = seed ^ (tag * 0xd1342543de82ef95ULL) ^ (index * 0x2545f4914f6cdd1dULL);
    splitmix64(x);
    return splitmix64(x);
}

inline uint64_t derive_seed(uint64_t seed, std::string_view tag, uint64_t index = 0) {
    uint64_t h = 1469598103934665603ULL;  // FNV-1a over the tag
    for (char c : tag) {
        h ^= static_cast<unsigned char>(c);
        h *= 1099511628211ULL;
    }
    return derive_seed(seed, h, index);
}

// xoshiro256++ with Box-Muller normals. Self-contained so that draws are
// bit-reproducible and the full state is trivially serializable.
class Rng {
public:
    Rng() : Rng(0) {}
    explicit Rng(uint64_t seed) {
        uint64_t x = seed;
        for (auto& w : s_) w = splitmix64(x);
        cached_ = 0.0;
        has_cached_ = false;
    }

    uint64_t next_u64() {
        const uint64_t result = rotl(s_[0] + s_[3], 23) + s_[0];
        const uint64_t t = s_[1] << 17;
        s_[2] ^= s_[0];
        s_[3] ^= s_[1];
        s_[1] ^= s_[2];
        s_[0] ^= s_[3];
        s_[2] ^= t;
        s_[3] = rotl(s_[3], 45);
        return result;
    }

    // uniform in [0,1)
    double uniform01() { return (next_u64() >> 11) * 0x1.0p-53; }

    double uniform(double lo, double hi) { return lo + (hi - lo) * uniform01(); }

    // unbiased uniform integer in [0, n)
    uint64_t below(uint64_t n) {
        if (n == 0) throw std::invalid_argument("rng: below(0)");
        const uint64_t limit = UINT64_MAX - UINT64_MAX % n;
        uint64_t x;
        do {
            x = next_u64();
        } while (x >= limit);
        return x % n;
    }

    double normal() {
        if (has_cached_) {
            has_cached_ = false;
            return cached_;
        }
        // Box-Muller; u1 in (0,1] to keep log finite
        double u1 = 1.0 - uniform01();
        double u2 = uniform01();
        double r = std::sqrt(-2.0 * std::log(u1));
        double a = 6.283185307179586477 * u2;
        cached_ = r * std::sin(a);
        has_cached_ = true;
        return r * std::cos(a);
    }

    // state access for checkpointing
    std::array<uint64_t, 6> save() const {
        std::array<uint64_t, 6> out{};
        for (int i = 0; i < 4; ++i) out[i] = s_[i];
        uint64_t bits;
        static_assert(sizeof(double) == sizeof(uint64_t));
        __builtin_memcpy(&bits, &cached_, 8);
        out[4] = bits;
        out[5] = has_cached_ ? 1 : 0;
        return out;
    }
    void restore(const std::array<uint64_t, 6>& st) {
        for (int i = 0; i < 4; ++i) s_[i] = st[i];
        __builtin_memcpy(&cached_, &st[4], 8);
        has_cached_ = st[5] != 0;
    }

private:
    static uint64_t rotl(uint64_t x, int k) { return (x << k) | (x >> (64 - k)); }
    uint64_t s_[4];
    double cached_;
    bool has_cached_;
};

}  // namespace latentsafe
