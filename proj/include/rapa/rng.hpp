#pragma once

#include <cmath>
#include <cstdint>
#include <string_view>
#include <utility>

namespace rapa {

// splitmix64. Fixed constants, so streams are reproducible across platforms
// and standard library versions (std:: distributions are not).
inline uint64_t splitmix64_next(uint64_t& state) {
    uint64_t z = (state += 0x9e3779b97f4a7c15ull);
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ull;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebull;
    return z ^ (z >> 31);
}

// FNV-1a over the stream name, mixed with the root seed. Every random draw in
// the project comes from a stream named like "synth/id_3/cam_0/clip_1", so a
// single root seed pins the whole run and substreams stay independent of
// evaluation order or worker count.
inline uint64_t stream_seed(uint64_t root, std::string_view name) {
    uint64_t h = 0xcbf29ce484222325ull;
    for (unsigned char c : name) {
        h ^= c;
        h *= 0x00000100000001b3ull;
    }
    h ^= root + 0x9e3779b97f4a7c15ull + (h << 6) + (h >> 2);
    // one scramble round so nearby names do not give nearby states
    uint64_t s = h;
    splitmix64_next(s);
    return s;
}

class Rng {
public:
    explicit Rng(uint64_t seed) : state_(seed) {}
    Rng(uint64_t root, std::string_view stream) : state_(stream_seed(root, stream)) {}

    uint64_t next_u64() { return splitmix64_next(state_); }

    // uniform in [0,1)
    double uniform01() { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }

    double uniform(double lo, double hi) { return lo + (hi - lo) * uniform01(); }

    // uniform integer in [0, n), n >= 1
    int64_t uniform_int(int64_t n) {
        // rejection sampling keeps the distribution exact
        const uint64_t un = static_cast<uint64_t>(n);
        const uint64_t limit = UINT64_MAX - UINT64_MAX % un;
        uint64_t v;
        do {
            v = next_u64();
        } while (v >= limit);
        return static_cast<int64_t>(v % un);
    }

    int64_t uniform_int(int64_t lo, int64_t hi_inclusive) {
        return lo + uniform_int(hi_inclusive - lo + 1);
    }

    // standard normal, Box-Muller with one cached value
    double normal() {
        if (has_cached_) {
            has_cached_ = false;
            return cached_;
        }
        double u1 = uniform01();
        double u2 = uniform01();
        while (u1 <= 1e-300) u1 = uniform01();
        const double r = std::sqrt(-2.0 * std::log(u1));
        const double a = 6.283185307179586476925286766559 * u2;
        cached_ = r * std::sin(a);
        has_cached_ = true;
        return r * std::cos(a);
    }

    double normal(double mean, double stddev) { return mean + stddev * normal(); }

    template <typename It>
    void shuffle(It first, It last) {
        const int64_t n = static_cast<int64_t>(last - first);
        for (int64_t i = n - 1; i > 0; --i) {
            std::swap(first[i], first[uniform_int(i + 1)]);
        }
    }

private:
    uint64_t state_;
    bool has_cached_ = false;
    double cached_ = 0.0;
};

}  // namespace rapa
