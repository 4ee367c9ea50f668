#pragma once

#include <cstdint>
#include <random>

namespace nvsense {

inline std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

// Independent generator for work item `index` under a run seed. Streams
// depend only on (seed, index), never on scheduling.
inline std::mt19937_64 stream_rng(std::uint64_t seed, std::uint64_t index) {
  const std::uint64_t a = splitmix64(seed ^ 0x6a09e667f3bcc909ULL);
  const std::uint64_t b = splitmix64(a + splitmix64(index + 0x3c6ef372fe94f82bULL));
  std::seed_seq seq{static_cast<std::uint32_t>(b), static_cast<std::uint32_t>(b >> 32),
                    static_cast<std::uint32_t>(a), static_cast<std::uint32_t>(index)};
  return std::mt19937_64(seq);
}

// Box-Muller on top of the raw 64-bit stream so results do not depend on the
// standard library's distribution implementation.
class Gaussian {
 public:
  double operator()(std::mt19937_64& g) {
    if (has_spare_) {
      has_spare_ = false;
      return spare_;
    }
    double u1 = uniform(g);
    while (u1 <= 0.0) u1 = uniform(g);
    const double u2 = uniform(g);
    const double r = std::sqrt(-2.0 * std::log(u1));
    const double th = 6.283185307179586 * u2;
    spare_ = r * std::sin(th);
    has_spare_ = true;
    return r * std::cos(th);
  }

  static double uniform(std::mt19937_64& g) { return static_cast<double>(g() >> 11) * 0x1.0p-53; }

 private:
  double spare_ = 0.0;
  bool has_spare_ = false;
};

}  // namespace nvsense
