#pragma once

#include <cstdint>
#include <initializer_list>
#include <string_view>

#include "hyperfield/common.hpp"

namespace hyperfield {

// Deterministic, portable RNG built on splitmix64. std::mt19937 plus the
// standard distributions are implementation-defined, which would break the
// bit-identical replay guarantees, so everything random in this project goes
// through this type. Streams are derived from (seed, path words), which makes
// per-step / per-ray / per-tensor substreams independent of evaluation order.
class Rng {
 public:
  explicit Rng(uint64_t seed) : state_(mix(seed + kGamma)) {}

  static uint64_t mix(uint64_t z) {
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ull;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebull;
    return z ^ (z >> 31);
  }

  static uint64_t hash_str(std::string_view s) {
    uint64_t h = 0xcbf29ce484222325ull;  // FNV-1a
    for (unsigned char c : s) {
      h ^= c;
      h *= 0x100000001b3ull;
    }
    return h;
  }

  static Rng stream(uint64_t seed, std::initializer_list<uint64_t> path) {
    uint64_t s = mix(seed + kGamma);
    for (uint64_t p : path) s = mix(s ^ mix(p + kGamma));
    return Rng(s);
  }

  uint64_t next_u64() {
    state_ += kGamma;
    return mix(state_);
  }

  // uniform in [0, 1)
  double uniform() { return double(next_u64() >> 11) * 0x1.0p-53; }

  template <typename T>
  T uniform01() {
    return T(uniform());
  }

  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

  uint32_t uniform_index(uint32_t n) { return uint32_t(next_u64() % n); }

  double normal() {
    if (has_spare_) {
      has_spare_ = false;
      return spare_;
    }
    // Box-Muller
    double u1 = 0.0;
    while (u1 <= 0.0) u1 = uniform();
    double u2 = uniform();
    double r = std::sqrt(-2.0 * std::log(u1));
    double a = 2.0 * 3.14159265358979323846 * u2;
    spare_ = r * std::sin(a);
    has_spare_ = true;
    return r * std::cos(a);
  }

 private:
  static constexpr uint64_t kGamma = 0x9e3779b97f4a7c15ull;
  uint64_t state_;
  bool has_spare_ = false;
  double spare_ = 0.0;
};

}  // namespace hyperfield
