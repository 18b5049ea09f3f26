#pragma once

#include <cmath>
#include <cstdint>
#include <vector>

namespace radreport {

// Deterministic PRNG (xoshiro256** seeded via splitmix64). The standard
// library distributions are implementation-defined, so everything that
// feeds generated data or training draws goes through this class to keep
// runs reproducible across compilers.
class Rng {
public:
    explicit Rng(uint64_t seed) { reseed(seed); }

    void reseed(uint64_t seed) {
        uint64_t x = seed;
        for (auto& word : state_) {
            word = splitmix64(x);
        }
        has_spare_ = false;
    }

    // Independent substream derived from (seed, stream_id). Used for
    // per-report / per-item generation so item order never matters.
    static Rng substream(uint64_t seed, uint64_t stream_id) {
        uint64_t x = seed;
        uint64_t a = splitmix64(x);
        x = seed ^ (0x9e3779b97f4a7c15ULL + stream_id);
        uint64_t b = splitmix64(x);
        return Rng(a ^ (b * 0xbf58476d1ce4e5b9ULL + stream_id));
    }

    uint64_t next_u64() {
        const uint64_t result = rotl(state_[1] * 5, 7) * 9;
        const uint64_t t = state_[1] << 17;
        state_[2] ^= state_[0];
        state_[3] ^= state_[1];
        state_[1] ^= state_[2];
        state_[0] ^= state_[3];
        state_[2] ^= t;
        state_[3] = rotl(state_[3], 45);
        return result;
    }

    // Uniform in [0, 1), 53-bit resolution.
    double uniform() { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }

    bool bernoulli(double p) { return uniform() < p; }

    // Uniform integer in [0, n), rejection sampled (no modulo bias).
    uint64_t bounded(uint64_t n) {
        const uint64_t threshold = (0 - n) % n;
        for (;;) {
            uint64_t r = next_u64();
            if (r >= threshold) return r % n;
        }
    }

    // Standard normal via Box-Muller with a cached spare.
    double normal() {
        if (has_spare_) {
            has_spare_ = false;
            return spare_;
        }
        double u1 = 0.0;
        do {
            u1 = uniform();
        } while (u1 <= 0.0);
        const double u2 = uniform();
        const double r = std::sqrt(-2.0 * std::log(u1));
        const double theta = 2.0 * M_PI * u2;
        spare_ = r * std::sin(theta);
        has_spare_ = true;
        return r * std::cos(theta);
    }

    // Normal(0, stddev^2) truncated to [-limit, limit] by resampling.
    double truncated_normal(double stddev, double limit) {
        for (;;) {
            double v = normal() * stddev;
            if (v >= -limit && v <= limit) return v;
        }
    }

    // Index from a discrete distribution given cumulative weights.
    size_t categorical(const std::vector<double>& cumulative) {
        const double u = uniform() * cumulative.back();
        size_t lo = 0;
        size_t hi = cumulative.size() - 1;
        while (lo < hi) {
            const size_t mid = (lo + hi) / 2;
            if (u < cumulative[mid]) {
                hi = mid;
            } else {
                lo = mid + 1;
            }
        }
        return lo;
    }

    template <typename T>
    void shuffle(std::vector<T>& items) {
        for (size_t i = items.size(); i > 1; --i) {
            const size_t j = static_cast<size_t>(bounded(i));
            std::swap(items[i - 1], items[j]);
        }
    }

    template <typename T>
    const T& pick(const std::vector<T>& items) {
        return items[bounded(items.size())];
    }

private:
    static uint64_t splitmix64(uint64_t& x) {
        uint64_t z = (x += 0x9e3779b97f4a7c15ULL);
        z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
        z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
        return z ^ (z >> 31);
    }

    static uint64_t rotl(uint64_t v, int k) { return (v << k) | (v >> (64 - k)); }

    uint64_t state_[4] = {};
    double spare_ = 0.0;
    bool has_spare_ = false;
};

}  // namespace radreport
