#pragma once

// Deterministic random source (xoshiro256++ seeded through splitmix64).
// Identical seed and call sequence give an identical sample sequence on every
// run; independent substreams are derived with fork().

#include <cmath>
#include <cstdint>
#include <numeric>
#include <vector>

namespace chroma {

namespace detail {
inline uint64_t splitmix64(uint64_t& x) {
    x += 0x9E3779B97F4A7C15ull;
    uint64_t z = x;
    z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ull;
    z = (z ^ (z >> 27)) * 0x94D049BB133111EBull;
    return z ^ (z >> 31);
}
inline uint64_t rotl64(uint64_t x, int k) { return (x << k) | (x >> (64 - k)); }
}  // namespace detail

class RngState {
public:
    explicit RngState(uint64_t seed) : seed_(seed) {
        uint64_t x = seed;
        for (auto& s : s_) s = detail::splitmix64(x);
    }

    uint64_t seed() const { return seed_; }

    // Independent substream; (seed, stream) fully determines it.
    RngState fork(uint64_t stream) const {
        uint64_t x = seed_ ^ (0xA0761D6478BD642Full + stream);
        uint64_t derived = detail::splitmix64(x);
        x = derived + stream;
        derived ^= detail::splitmix64(x);
        return RngState(derived);
    }

    uint64_t next_u64() {
        uint64_t result = detail::rotl64(s_[0] + s_[3], 23) + s_[0];
        uint64_t t = s_[1] << 17;
        s_[2] ^= s_[0];
        s_[3] ^= s_[1];
        s_[1] ^= s_[2];
        s_[0] ^= s_[3];
        s_[2] ^= t;
        s_[3] = detail::rotl64(s_[3], 45);
        return result;
    }

    double uniform() { return double(next_u64() >> 11) * 0x1.0p-53; }  // [0,1)
    double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }
    bool bernoulli(double p) { return uniform() < p; }

    double normal() {
        double u1 = uniform();
        while (u1 <= 0.0) u1 = uniform();
        double u2 = uniform();
        return std::sqrt(-2.0 * std::log(u1)) * std::cos(6.283185307179586 * u2);
    }

    int64_t uniform_int(int64_t n) {  // [0, n), unbiased
        uint64_t bound = uint64_t(n);
        uint64_t limit = UINT64_MAX - UINT64_MAX % bound;
        uint64_t v;
        do {
            v = next_u64();
        } while (v >= limit);
        return int64_t(v % bound);
    }

    std::vector<int> permutation(int n) {
        std::vector<int> p(n);
        std::iota(p.begin(), p.end(), 0);
        for (int i = n - 1; i > 0; --i) std::swap(p[i], p[size_t(uniform_int(i + 1))]);
        return p;
    }

    void fill_normal(float* out, size_t n) {
        for (size_t i = 0; i < n; ++i) out[i] = float(normal());
    }

private:
    uint64_t seed_;
    uint64_t s_[4];
};

}  // namespace chroma
