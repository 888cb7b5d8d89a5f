#pragma once

#include <cmath>
#include <cstdint>
#include <vector>

namespace bcdet {

// Pinned 64-bit mixing generator (SplitMix64). All randomness in the project
// flows through this so splits, synthetic data and weight init reproduce
// bit-for-bit across platforms. Constants are the canonical SplitMix64 ones.
class SplitMix64 {
 public:
  explicit SplitMix64(uint64_t seed) : state_(seed) {}

  uint64_t next() {
    uint64_t z = (state_ += 0x9E3779B97F4A7C15ULL);
    z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
    z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
    return z ^ (z >> 31);
  }

  // Uniform in [0, 1), 53-bit resolution.
  double uniform01() { return static_cast<double>(next() >> 11) * 0x1.0p-53; }

  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform01(); }

  // Uniform integer in [0, n). Modulo reduction; the tiny bias is irrelevant
  // for n << 2^64 and keeps the algorithm trivially portable.
  uint64_t uniform_int(uint64_t n) { return n == 0 ? 0 : next() % n; }

  // Standard normal via Box-Muller; second value cached.
  double normal() {
    if (has_cached_) {
      has_cached_ = false;
      return cached_;
    }
    double u1 = uniform01();
    double u2 = uniform01();
    if (u1 <= 0.0) u1 = 0x1.0p-53;
    const double r = std::sqrt(-2.0 * std::log(u1));
    const double t = 6.283185307179586476925286766559 * u2;
    cached_ = r * std::sin(t);
    has_cached_ = true;
    return r * std::cos(t);
  }

  template <typename T>
  void shuffle(std::vector<T>& v) {
    for (size_t i = v.size(); i > 1; --i) {
      size_t j = static_cast<size_t>(uniform_int(i));
      std::swap(v[i - 1], v[j]);
    }
  }

 private:
  uint64_t state_;
  double cached_ = 0.0;
  bool has_cached_ = false;
};

// Derive an independent substream from (seed, id). Substreams depend only on
// the pair, never on how many draws the parent has made.
inline SplitMix64 substream(uint64_t seed, uint64_t id) {
  SplitMix64 mixer(seed ^ (0x9E3779B97F4A7C15ULL * (id + 1)));
  return SplitMix64(mixer.next());
}

}  // namespace bcdet
