#pragma once

#include <cstdint>
#include <string_view>
#include <utility>
#include <vector>

namespace feedbench {

/// Explicit, value-semantic RNG state (SplitMix64). Every draw goes through
/// hand-written conversions so sequences are identical across standard
/// library implementations.
class SeedState {
 public:
  constexpr explicit SeedState(std::uint64_t seed = 0) noexcept : state_(seed) {}

  constexpr std::uint64_t next() noexcept {
    std::uint64_t z = (state_ += 0x9E3779B97F4A7C15ULL);
    z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
    z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
    return z ^ (z >> 31);
  }

  /// Uniform double in [0, 1) with 53 bits of resolution.
  constexpr double uniform() noexcept {
    return static_cast<double>(next() >> 11) * 0x1.0p-53;
  }

  /// Unbiased integer in [0, bound). bound must be > 0.
  constexpr std::uint64_t below(std::uint64_t bound) noexcept {
    const std::uint64_t threshold = (0 - bound) % bound;
    for (;;) {
      const std::uint64_t r = next();
      if (r >= threshold) return r % bound;
    }
  }

  constexpr std::uint64_t raw() const noexcept { return state_; }

  friend constexpr bool operator==(const SeedState&, const SeedState&) = default;

 private:
  std::uint64_t state_;
};

/// Stable 64-bit FNV-1a, used to derive sub-seeds from identifiers.
constexpr std::uint64_t fnv1a64(std::string_view text) noexcept {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char c : text) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  return h;
}

/// Independent stream for a (seed, label) pair.
constexpr SeedState derive_seed(std::uint64_t seed, std::string_view label) noexcept {
  SeedState mix(seed ^ fnv1a64(label));
  return SeedState(mix.next());
}

template <typename T>
void seeded_shuffle(std::vector<T>& items, SeedState& rng) {
  for (std::size_t i = items.size(); i > 1; --i) {
    const auto j = static_cast<std::size_t>(rng.below(i));
    using std::swap;
    swap(items[i - 1], items[j]);
  }
}

}  // namespace feedbench
