#pragma once

#include <cmath>
#include <cstdint>
#include <random>

namespace mfdyn {

// SplitMix64 mixer. Used to derive independent substream seeds from a master
// seed so that parallel chunking cannot change results.
inline std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

inline std::uint64_t substream_seed(std::uint64_t master, std::uint64_t stream) {
  return splitmix64(master ^ splitmix64(stream + 0x7f4a7c15ULL));
}

// Deterministic RNG wrapper. mt19937_64 output is specified exactly by the
// standard; the uniform mapping below avoids the implementation-defined
// std::*_distribution classes so streams are bit-stable across platforms.
class Rng {
 public:
  explicit Rng(std::uint64_t seed) : eng_(seed) {}

  double u01() { return static_cast<double>(eng_() >> 11) * 0x1.0p-53; }

  bool bernoulli(double prob) { return u01() < prob; }

  // +1/-1 with equal probability.
  int sign() { return (eng_() >> 63) ? 1 : -1; }

  // Marsaglia polar method; deterministic given the stream position.
  double gaussian() {
    if (have_spare_) {
      have_spare_ = false;
      return spare_;
    }
    double u, v, s;
    do {
      u = 2.0 * u01() - 1.0;
      v = 2.0 * u01() - 1.0;
      s = u * u + v * v;
    } while (s >= 1.0 || s == 0.0);
    const double r = std::sqrt(-2.0 * std::log(s) / s);
    spare_ = v * r;
    have_spare_ = true;
    return u * r;
  }

  std::uint64_t raw() { return eng_(); }

 private:
  std::mt19937_64 eng_;
  bool have_spare_ = false;
  double spare_ = 0.0;
};

}  // namespace mfdyn
