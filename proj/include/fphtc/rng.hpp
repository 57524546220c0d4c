#pragma once

#include <cstdint>
#include <random>

namespace fphtc {

using Rng = std::mt19937_64;

// splitmix64 finalizer
constexpr std::uint64_t mix64(std::uint64_t x) noexcept {
    x += 0x9E3779B97F4A7C15ull;
    x = (x ^ (x >> 30)) * 0xBF58476D1CE4E5B9ull;
    x = (x ^ (x >> 27)) * 0x94D049BB133111EBull;
    return x ^ (x >> 31);
}

/// Derives an independent stream seed from a root seed and a tag, so that
/// stages that consume randomness do not perturb each other.
constexpr std::uint64_t derive_seed(std::uint64_t seed, std::uint64_t tag) noexcept {
    return mix64(mix64(seed) ^ mix64(tag + 0x632BE59BD9B4E019ull));
}

inline Rng make_rng(std::uint64_t seed, std::uint64_t tag = 0) {
    return Rng(derive_seed(seed, tag));
}

} // namespace fphtc
