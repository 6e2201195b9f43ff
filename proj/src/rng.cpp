#include "vmp/rng.hpp"

#include <cmath>
#include <numbers>

namespace vmp {

double Rng::normal() {
    // 1 - uniform() keeps u1 in (0, 1] so the log stays finite
    const double u1 = 1.0 - uniform();
    const double u2 = uniform();
    return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * std::numbers::pi * u2);
}

Rng Rng::stream(std::uint64_t substream) const {
    std::uint64_t z = seed_ ^ (0xD1B54A32D192ED03ull + substream * 0x8BB84B93962EACC9ull);
    z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ull;
    z = (z ^ (z >> 27)) * 0x94D049BB133111EBull;
    return Rng(z ^ (z >> 31));
}

}  // namespace vmp
