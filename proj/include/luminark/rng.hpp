#pragma once

#include <cmath>
#include <cstdint>

namespace luminark {

// SplitMix64: pure-arithmetic PRNG, bit-reproducible across platforms.
// State advances by the golden-ratio increment; output is mixed with the
// standard two xorshift-multiply rounds.
class SplitMix64 {
 public:
  explicit SplitMix64(std::uint64_t seed) : state_(seed) {}

  std::uint64_t next_u64() {
    std::uint64_t z = (state_ += 0x9E3779B97F4A7C15ULL);
    z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
    z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
    return z ^ (z >> 31);
  }

  // Uniform on [0,1) with 53 random mantissa bits.
  double next_unit() { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }

  // +1 or -1 from the top bit of one output.
  int next_sign() { return (next_u64() >> 63) ? 1 : -1; }

  double next_uniform(double lo, double hi) { return lo + next_unit() * (hi - lo); }

  // Box-Muller; consumes two outputs per pair, cos branch returned first.
  double next_gaussian() {
    if (have_spare_) {
      have_spare_ = false;
      return spare_;
    }
    const double u1 = 1.0 - next_unit();  // (0,1], keeps log finite
    const double u2 = next_unit();
    const double r = std::sqrt(-2.0 * std::log(u1));
    const double a = 2.0 * M_PI * u2;
    spare_ = r * std::sin(a);
    have_spare_ = true;
    return r * std::cos(a);
  }

  double next_exponential() { return -std::log(1.0 - next_unit()); }

 private:
  std::uint64_t state_;
  bool have_spare_ = false;
  double spare_ = 0.0;
};

// Stream derivation by counter increment (retry seeds, per-kind attack seeds).
inline std::uint64_t derive_seed(std::uint64_t base, std::uint64_t counter) {
  return base + counter;
}

}  // namespace luminark
