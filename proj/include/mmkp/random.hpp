#pragma once

#include <cstdint>
#include <random>

namespace mmkp {

// Draws built on the raw mt19937_64 stream, whose output the standard fixes,
// so seeded runs reproduce bit-for-bit across standard libraries.
class Rng {
 public:
  explicit Rng(std::uint64_t seed) : eng_(seed) {}

  std::uint64_t next() { return eng_(); }
  std::size_t below(std::size_t n) { return static_cast<std::size_t>(eng_() % n); }
  double unit() { return static_cast<double>(eng_() >> 11) * 0x1.0p-53; }
  double uniform(double lo, double hi) { return lo + (hi - lo) * unit(); }

  template <typename It>
  void shuffle(It first, It last) {
    for (auto n = last - first; n > 1; --n) std::swap(first[n - 1], first[below(static_cast<std::size_t>(n))]);
  }

 private:
  std::mt19937_64 eng_;
};

}  // namespace mmkp
