#pragma once

#include <cstdint>

namespace vmp {

/// Counter-based deterministic generator (SplitMix64).
///
/// Sample k of stream `seed` is mix64(seed + (k+1) * 0x9E3779B97F4A7C15); the
/// generator state is exactly the pair (seed, position), so equal seeds give
/// bit-identical sample sequences on every platform and any alternate
/// implementation of the same formula reproduces the streams.
class Rng {
public:
    explicit Rng(std::uint64_t seed, std::uint64_t position = 0)
        : seed_(seed), position_(position) {}

    std::uint64_t next_u64() {
        std::uint64_t z = seed_ + (++position_) * 0x9E3779B97F4A7C15ull;
        z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ull;
        z = (z ^ (z >> 27)) * 0x94D049BB133111EBull;
        return z ^ (z >> 31);
    }

    /// Uniform in [0, 1) with 53 random mantissa bits.
    double uniform() { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }

    double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

    /// Standard normal via Box-Muller; always consumes exactly two samples.
    double normal();

    /// Uniform integer in [lo, hi], inclusive. Modulo mapping; the bias is
    /// negligible for the small spans used here.
    int uniform_int(int lo, int hi) {
        const std::uint64_t span = static_cast<std::uint64_t>(hi - lo) + 1;
        return lo + static_cast<int>(next_u64() % span);
    }

    /// Derive an independent child stream. child = mix of (seed, substream),
    /// so substreams never collide with each other or with the parent.
    Rng stream(std::uint64_t substream) const;

    std::uint64_t seed() const { return seed_; }
    std::uint64_t position() const { return position_; }

private:
    std::uint64_t seed_;
    std::uint64_t position_;
};

}  // namespace vmp
