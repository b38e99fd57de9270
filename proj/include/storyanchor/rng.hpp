#pragma once

#include <cstdint>
#include <random>
#include <span>
#include <string_view>
#include <utility>
#include <vector>

namespace storyanchor {

/// Mixes a root seed with a stream name, so that data preparation, parameter
/// init, scheduled sampling and evaluation sampling draw from independent
/// sequences that are all fixed by one root seed.
uint64_t derive_seed(uint64_t root, std::string_view stream);
uint64_t derive_seed(uint64_t root, uint64_t index);

/// Deterministic RNG. Only the raw mt19937_64 output is used; the conversions
/// below are spelled out so results do not depend on the standard library's
/// distribution implementations.
class Rng {
 public:
  explicit Rng(uint64_t seed) : engine_(seed) {}

  uint64_t next_u64() { return engine_(); }

  /// Uniform in [0, 1) with 53 bits of resolution.
  double uniform() { return static_cast<double>(engine_() >> 11) * 0x1.0p-53; }

  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

  /// Unbiased integer in [0, n) by rejection. n must be positive.
  uint64_t below(uint64_t n);

  /// Standard normal via Box-Muller; no cached spare.
  double normal();

  /// Index drawn proportionally to the (non-negative) weights.
  size_t categorical(std::span<const double> weights);

  template <typename T>
  void shuffle(std::vector<T>& items) {
    for (size_t i = items.size(); i > 1; --i) {
      const auto j = static_cast<size_t>(below(i));
      std::swap(items[i - 1], items[j]);
    }
  }

 private:
  std::mt19937_64 engine_;
};

}  // namespace storyanchor
