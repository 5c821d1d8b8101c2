#pragma once

#include <cmath>
#include <cstdint>
#include <numbers>
#include <random>
#include <string_view>

namespace swingctl {

/// FNV-1a over bytes; doubles as the artifact content hash.
inline std::uint64_t fnv1a64(std::string_view s, std::uint64_t h = 1469598103934665603ull) {
  for (unsigned char ch : s) {
    h ^= ch;
    h *= 1099511628211ull;
  }
  return h;
}

/// splitmix64 finalizer.
inline std::uint64_t mix64(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ull;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ull;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebull;
  return x ^ (x >> 31);
}

/// All randomness flows from one root seed through named substreams, so a
/// component's draws can be reproduced without replaying the whole run.
inline std::uint64_t substream(std::uint64_t root, std::string_view name, std::uint64_t index = 0) {
  return mix64(root ^ mix64(fnv1a64(name) + 0x632be59bd9b4e019ull * (index + 1)));
}

/// mt19937_64 with hand-rolled uniform/normal mappings. The engine output is
/// pinned by the standard and the mappings avoid the implementation-defined
/// std distributions, so identical seeds give bitwise-identical streams.
class Rng {
 public:
  explicit Rng(std::uint64_t seed) : gen_(seed) {}

  /// [0, 1)
  double uniform() { return static_cast<double>(gen_() >> 11) * 0x1.0p-53; }

  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

  /// Box-Muller without a cached spare: exactly two raw draws per call.
  double normal() {
    double u1;
    do {
      u1 = uniform();
    } while (u1 <= 0.0);
    const double u2 = uniform();
    return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * std::numbers::pi * u2);
  }

  std::uint64_t raw() { return gen_(); }

 private:
  std::mt19937_64 gen_;
};

}  // namespace swingctl
