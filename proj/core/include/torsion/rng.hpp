#pragma once

#include <cmath>
#include <cstdint>

namespace torsion {

// Deterministic xoshiro256** generator. We do not use <random> engines or
// distributions because their output is implementation-defined and the
// dataset pipeline promises byte-identical regeneration from a seed.
class Rng {
  public:
    explicit Rng(uint64_t seed) {
        // splitmix64 seeding, as recommended by the xoshiro authors
        uint64_t x = seed;
        for (auto& si : s_) {
            x += 0x9e3779b97f4a7c15ull;
            uint64_t z = x;
            z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ull;
            z = (z ^ (z >> 27)) * 0x94d049bb133111ebull;
            si = z ^ (z >> 31);
        }
    }

    uint64_t next_u64() {
        const uint64_t result = rotl(s_[1] * 5, 7) * 9;
        const uint64_t t = s_[1] << 17;
        s_[2] ^= s_[0];
        s_[3] ^= s_[1];
        s_[1] ^= s_[2];
        s_[0] ^= s_[3];
        s_[2] ^= t;
        s_[3] = rotl(s_[3], 45);
        return result;
    }

    // uniform in [0,1) with 53 random bits
    double uniform() { return double(next_u64() >> 11) * 0x1.0p-53; }

    double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

    // integer in [lo, hi] inclusive
    int uniform_int(int lo, int hi) {
        uint64_t span = uint64_t(hi - lo) + 1;
        return lo + int(next_u64() % span);
    }

    bool bernoulli(double p) { return uniform() < p; }

    // Box-Muller; one fresh pair per call keeps the draw count predictable
    double normal() {
        double u1 = uniform();
        double u2 = uniform();
        while (u1 <= 0.0) u1 = uniform();
        return std::sqrt(-2.0 * std::log(u1)) * std::cos(6.283185307179586 * u2);
    }

  private:
    static uint64_t rotl(uint64_t v, int k) { return (v << k) | (v >> (64 - k)); }
    uint64_t s_[4];
};

// Derives an independent substream, e.g. one per generated domain. Mixing is
// a keyed splitmix so (seed, index) -> stream is a pure function.
inline uint64_t substream_seed(uint64_t master, uint64_t index) {
    uint64_t z = master ^ (index * 0xd1342543de82ef95ull + 0x2545f4914f6cdd1dull);
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ull;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebull;
    return z ^ (z >> 31);
}

} // namespace torsion
