#pragma once

#include <cmath>
#include <cstdint>
#include <string_view>

namespace opdf {

/// Deterministic 64-bit stream built on the splitmix64 update
/// (state += 0x9E3779B97F4A7C15; finalize with shift-xor-multiply mixing).
/// Labeled substreams hash the label into the parent's seed, so a substream
/// depends only on (seed, label), never on how many draws happened elsewhere.
class Rng64 {
 public:
  explicit Rng64(std::uint64_t seed) : seed_(seed), state_(seed) {}

  std::uint64_t next_u64() {
    state_ += 0x9E3779B97F4A7C15ULL;
    std::uint64_t z = state_;
    z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
    z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
    return z ^ (z >> 31);
  }

  /// Uniform in [0, 1) with 53 random bits.
  double uniform() {
    return static_cast<double>(next_u64() >> 11) * 0x1.0p-53;
  }

  /// Uniform in [lo, hi).
  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

  /// Uniform integer in [0, n).
  std::uint64_t below(std::uint64_t n) { return n ? next_u64() % n : 0; }

  /// Standard normal via Box-Muller; draws come in deterministic pairs.
  double gaussian() {
    if (have_spare_) {
      have_spare_ = false;
      return spare_;
    }
    // u1 in (0,1] so the log stays finite
    const double u1 = 1.0 - uniform();
    const double u2 = uniform();
    const double r = std::sqrt(-2.0 * std::log(u1));
    const double a = 6.283185307179586476925286766559 * u2;
    spare_ = r * std::sin(a);
    have_spare_ = true;
    return r * std::cos(a);
  }

  /// Independent stream derived from this stream's seed and a label
  /// (FNV-1a over the label bytes folded into the seed).
  Rng64 substream(std::string_view label) const {
    std::uint64_t h = 0xCBF29CE484222325ULL;  // FNV offset basis
    for (char c : label) {
      h ^= static_cast<unsigned char>(c);
      h *= 0x100000001B3ULL;  // FNV prime
    }
    return Rng64(seed_ ^ h);
  }

  std::uint64_t seed() const { return seed_; }

 private:
  std::uint64_t seed_;
  std::uint64_t state_;
  bool have_spare_ = false;
  double spare_ = 0.0;
};

}  // namespace opdf
