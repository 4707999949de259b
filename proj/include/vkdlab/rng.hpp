// Deterministic RNG built on the SplitMix64 state transition.
//
// All randomness in the project flows through this generator so that a run
// is reproducible bit-for-bit from its seed, independent of platform and
// standard-library implementation (std:: distributions are not portable).

#pragma once

#include <cmath>
#include <cstdint>
#include <vector>

namespace vkdlab {

class Rng {
 public:
  explicit Rng(std::uint64_t seed) : state_(seed) {}

  std::uint64_t next_u64() {
    state_ += 0x9e3779b97f4a7c15ull;
    std::uint64_t z = state_;
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ull;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebull;
    return z ^ (z >> 31);
  }

  // Uniform in [0, 1), 53 bits of mantissa.
  double uniform() { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }

  // Standard normal via Box-Muller. Two uniforms per draw; no cached spare,
  // so the draw sequence is a pure function of the call count.
  double normal() {
    double u1 = (static_cast<double>(next_u64() >> 11) + 1.0) * 0x1.0p-53;  // (0, 1]
    double u2 = uniform();
    return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * 3.141592653589793 * u2);
  }

  // Uniform integer in [0, n). Lemire's multiply-shift; n must be > 0.
  std::uint64_t below(std::uint64_t n) {
    return static_cast<std::uint64_t>(
        (static_cast<unsigned __int128>(next_u64()) * n) >> 64);
  }

  int uniform_int(int n) { return static_cast<int>(below(static_cast<std::uint64_t>(n))); }

  // Derives an independent stream (used e.g. for the real-world entity pool).
  Rng split() { return Rng(next_u64() ^ 0x6a09e667f3bcc909ull); }

  template <typename T>
  void shuffle(std::vector<T>& v) {
    for (std::size_t i = v.size(); i > 1; --i) {
      std::size_t j = static_cast<std::size_t>(below(i));
      std::swap(v[i - 1], v[j]);
    }
  }

 private:
  std::uint64_t state_;
};

}  // namespace vkdlab
