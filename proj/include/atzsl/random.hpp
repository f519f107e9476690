#pragma once

#include <cstdint>
#include <random>
#include <string_view>

namespace atzsl {

using Rng = std::mt19937_64;

// Fans one global seed out to independent per-component streams.
// Fixed rule: splitmix64(global ^ fnv1a64(component)).
std::uint64_t derive_seed(std::uint64_t global_seed, std::string_view component);

// Uniform in [0, 1) with 53 random bits; independent of the standard library's
// distribution implementations.
inline double uniform01(Rng& rng) { return static_cast<double>(rng() >> 11) * 0x1.0p-53; }

inline double uniform(Rng& rng, double lo, double hi) { return lo + (hi - lo) * uniform01(rng); }

// Standard normal via Box-Muller on uniform01 draws.
double standard_normal(Rng& rng);

}  // namespace atzsl
