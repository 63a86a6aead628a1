#pragma once

#include <cmath>
#include <cstdint>
#include <string_view>

namespace vmtl {

// Deterministic 64-bit random stream with explicit seed derivation.
//
// Every random draw in the library (splits, init, dropout masks, Gumbel noise,
// Monte Carlo noise, batch sampling) flows through this type. Streams are
// derived from a base seed and a tag/index path, so a run is reproducible bit
// for bit from its config and independent of stdlib distribution internals.
class Rng {
 public:
  explicit Rng(std::uint64_t seed) : seed_(seed), state_(seed) {
    // decorrelate trivially related seeds before first use
    next_u64();
  }

  std::uint64_t next_u64() {
    // splitmix64
    std::uint64_t z = (state_ += 0x9e3779b97f4a7c15ULL);
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
    return z ^ (z >> 31);
  }

  // uniform on [0,1), 53-bit resolution
  double uniform() { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }

  // uniform on the open interval (0,1)
  double uniform_open() {
    double u;
    do {
      u = uniform();
    } while (u <= 0.0);
    return u;
  }

  // standard normal via Box-Muller, pair cached
  double normal() {
    if (have_spare_) {
      have_spare_ = false;
      return spare_;
    }
    const double u1 = uniform_open();
    const double u2 = uniform();
    const double r = std::sqrt(-2.0 * std::log(u1));
    const double a = 6.283185307179586476925286766559 * u2;
    spare_ = r * std::sin(a);
    have_spare_ = true;
    return r * std::cos(a);
  }

  // child stream keyed by a tag and up to three indices; derivation uses the
  // original seed, not the current position, so derive() calls commute with
  // draws on the parent
  Rng derive(std::string_view tag, std::uint64_t a = 0, std::uint64_t b = 0,
             std::uint64_t c = 0) const {
    std::uint64_t h = fnv1a(tag);
    h = mix(h ^ seed_);
    h = mix(h ^ (a + 0x9e3779b97f4a7c15ULL));
    h = mix(h ^ (b + 0xbf58476d1ce4e5b9ULL));
    h = mix(h ^ (c + 0x94d049bb133111ebULL));
    return Rng(h);
  }

  std::uint64_t seed() const { return seed_; }

 private:
  static std::uint64_t fnv1a(std::string_view s) {
    std::uint64_t h = 0xcbf29ce484222325ULL;
    for (char ch : s) {
      h ^= static_cast<unsigned char>(ch);
      h *= 0x100000001b3ULL;
    }
    return h;
  }

  static std::uint64_t mix(std::uint64_t z) {
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
    return z ^ (z >> 31);
  }

  std::uint64_t seed_;
  std::uint64_t state_;
  bool have_spare_ = false;
  double spare_ = 0.0;
};

}  // namespace vmtl
