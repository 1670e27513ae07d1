#include "gcpmd/random.hpp"

#include "gcpmd/errors.hpp"

#include <algorithm>
#include <limits>
#include <unordered_set>

namespace gcpmd {

std::uint64_t mix_seed(std::uint64_t seed, std::uint64_t stream) noexcept {
  std::uint64_t z = seed + 0x9E3779B97F4A7C15ULL * (stream + 1);
  z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
  z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
  return z ^ (z >> 31);
}

double uniform01(Rng& rng) noexcept { return static_cast<double>(rng() >> 11) * 0x1.0p-53; }

std::uint64_t uniform_below(Rng& rng, std::uint64_t bound) noexcept {
  // Rejection from the largest multiple of bound.
  const std::uint64_t limit = std::numeric_limits<std::uint64_t>::max() - std::numeric_limits<std::uint64_t>::max() % bound;
  std::uint64_t draw = rng();
  while (draw >= limit) draw = rng();
  return draw % bound;
}

std::vector<std::uint64_t> sample_without_replacement(Rng& rng, std::uint64_t population, std::uint64_t count) {
  if (count > population) throw ContractError("cannot sample more distinct items than the population holds");
  std::vector<std::uint64_t> picked;
  picked.reserve(count);
  if (count == population) {
    for (std::uint64_t k = 0; k < population; ++k) picked.push_back(k);
    return picked;
  }
  std::unordered_set<std::uint64_t> seen;
  seen.reserve(count * 2);
  for (std::uint64_t j = population - count; j < population; ++j) {
    const std::uint64_t t = uniform_below(rng, j + 1);
    const std::uint64_t take = seen.contains(t) ? j : t;
    seen.insert(take);
    picked.push_back(take);
  }
  std::sort(picked.begin(), picked.end());
  return picked;
}

}  // namespace gcpmd
