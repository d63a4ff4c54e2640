#pragma once

#include <cmath>
#include <cstdint>

namespace skyramp {

// Counter-based generator: output i of stream (key) is mix(key + i * GOLDEN),
// where mix is the SplitMix64 finalizer. Streams are split by hashing a child
// id into the key, so any (seed, stream path) pair names the same sequence on
// every platform. State is two u64s and jumps are O(1).
class Rng {
public:
    explicit Rng(std::uint64_t seed, std::uint64_t stream = 0)
        : key_(mix(seed ^ mix(stream + 0x9e3779b97f4a7c15ull))), counter_(0) {}

    // Independent child stream; children of distinct ids never collide.
    Rng split(std::uint64_t child_id) const {
        Rng r(0);
        r.key_ = mix(key_ ^ mix(child_id + 0x632be59bd9b4e019ull));
        r.counter_ = 0;
        return r;
    }

    std::uint64_t next_u64() { return mix(key_ + (++counter_) * 0x9e3779b97f4a7c15ull); }

    // Uniform in [0, 1): 53 mantissa bits.
    double uniform() { return double(next_u64() >> 11) * 0x1.0p-53; }

    double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

    std::uint64_t below(std::uint64_t n) { return next_u64() % n; }

    // Box-Muller; one fresh pair per call keeps the stream stateless w.r.t.
    // caching, at the price of a discarded second deviate.
    double normal() {
        double u1 = uniform();
        double u2 = uniform();
        while (u1 <= 1e-300) u1 = uniform();
        return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * M_PI * u2);
    }

    bool bernoulli(double p) { return uniform() < p; }

    std::uint64_t key() const { return key_; }

private:
    static std::uint64_t mix(std::uint64_t z) {
        z ^= z >> 30;
        z *= 0xbf58476d1ce4e5b9ull;
        z ^= z >> 27;
        z *= 0x94d049bb133111ebull;
        z ^= z >> 31;
        return z;
    }

    std::uint64_t key_;
    std::uint64_t counter_;
};

} // namespace skyramp
