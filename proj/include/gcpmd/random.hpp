#pragma once

// Portable random primitives. The std:: distributions are implementation
// defined, so everything that feeds a reproducible run goes through here.

#include <cstdint>
#include <random>
#include <vector>

namespace gcpmd {

using Rng = std::mt19937_64;

/// SplitMix64 step; derives independent stream seeds from one user seed.
std::uint64_t mix_seed(std::uint64_t seed, std::uint64_t stream) noexcept;

/// Uniform on [0, 1) with 53 random bits.
double uniform01(Rng& rng) noexcept;

/// Uniform integer in [0, bound), unbiased. bound must be > 0.
std::uint64_t uniform_below(Rng& rng, std::uint64_t bound) noexcept;

/// `count` distinct values from [0, population), sorted ascending (Floyd's algorithm).
std::vector<std::uint64_t> sample_without_replacement(Rng& rng, std::uint64_t population, std::uint64_t count);

}  // namespace gcpmd
