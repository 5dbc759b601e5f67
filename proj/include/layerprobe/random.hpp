#pragma once

#include <cstdint>
#include <random>
#include <string_view>

namespace layerprobe {

using Rng = std::mt19937_64;

/// Seed derived from (root seed, purpose tag, index). Every stochastic
/// consumer draws from its own stream so unrelated streams never shift.
std::uint64_t derive_seed(std::uint64_t root, std::string_view tag, std::uint64_t index = 0);

inline Rng make_stream(std::uint64_t root, std::string_view tag, std::uint64_t index = 0) {
    return Rng(derive_seed(root, tag, index));
}

/// Uniform double in [0, 1) from the top 53 bits; portable across standard libraries.
inline double uniform01(Rng& rng) { return static_cast<double>(rng() >> 11) * 0x1.0p-53; }

/// Box-Muller normal draw; consumes two uniforms.
double standard_normal(Rng& rng);

/// FNV-1a over raw bytes.
std::uint64_t fnv1a64(const void* bytes, std::size_t size, std::uint64_t seed = 0xcbf29ce484222325ULL);

}  // namespace layerprobe
