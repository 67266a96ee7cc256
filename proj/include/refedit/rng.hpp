#ifndef REFEDIT_RNG_HPP
#define REFEDIT_RNG_HPP

#include <cstdint>

namespace refedit {

// Counter-based deterministic RNG: draw k is splitmix64(seed + k*GOLDEN).
// The stream depends only on (seed, counter), so forked per-item streams
// reproduce regardless of generation order. normal() uses an Irwin-Hall
// sum of 12 uniforms; with only adds and one multiply per draw the stream
// is bit-identical on any IEEE-754 platform.
class Rng {
public:
    explicit Rng(uint64_t seed) : seed_(seed) {}

    uint64_t next_u64() {
        counter_ += 1;
        return mix(seed_ + counter_ * kGolden);
    }

    // uniform in [0, 1)
    double uniform() {
        return static_cast<double>(next_u64() >> 11) * 0x1.0p-53;
    }

    double uniform(double lo, double hi) {
        return lo + (hi - lo) * uniform();
    }

    // approximately standard normal (Irwin-Hall, 12 uniforms)
    double normal() {
        double s = 0.0;
        for (int i = 0; i < 12; ++i) {
            s += uniform();
        }
        return s - 6.0;
    }

    // uniform integer in [0, n), n > 0 (Lemire reduction)
    uint64_t below(uint64_t n) {
        return static_cast<uint64_t>(
            (static_cast<unsigned __int128>(next_u64()) * n) >> 64);
    }

    // independent stream for item `stream`; insensitive to draws made so far
    Rng fork(uint64_t stream) const {
        return Rng(mix(seed_ ^ mix(stream + kGolden)));
    }

    uint64_t seed() const { return seed_; }

private:
    static constexpr uint64_t kGolden = 0x9E3779B97F4A7C15ull;

    static uint64_t mix(uint64_t z) {
        z ^= z >> 30;
        z *= 0xBF58476D1CE4E5B9ull;
        z ^= z >> 27;
        z *= 0x94D049BB133111EBull;
        z ^= z >> 31;
        return z;
    }

    uint64_t seed_;
    uint64_t counter_ = 0;
};

}  // namespace refedit

#endif  // REFEDIT_RNG_HPP
