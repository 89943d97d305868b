#pragma once

#include <cmath>
#include <cstdint>
#include <vector>

namespace rectflow::rng {

// Stream tags keep independent random purposes from colliding on one seed.
enum Stream : std::uint64_t {
  kData = 1,
  kNoise = 2,
  kTime = 3,
  kInit = 4,
  kPairs = 5,
  kBatch = 6,
  kEval = 7,
  kProjection = 8,
  kFreshNoise = 9,
  kTokens = 10,
};

inline std::uint64_t splitmix64(std::uint64_t& state) {
  state += 0x9e3779b97f4a7c15ULL;
  std::uint64_t z = state;
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
  return z ^ (z >> 31);
}

// Deterministic counter-based generator: the draw sequence is a pure
// function of (seed, stream, index), so any sample can be regenerated
// in isolation and batches can be partitioned across threads.
class Prng {
 public:
  Prng(std::uint64_t seed, std::uint64_t stream, std::uint64_t index) {
    state_ = seed;
    (void)splitmix64(state_);
    state_ ^= 0x632be59bd9b4e019ULL * (stream + 1);
    (void)splitmix64(state_);
    state_ ^= 0x9e6c63d0876a9a47ULL * (index + 1);
    (void)splitmix64(state_);
  }

  std::uint64_t next_u64() { return splitmix64(state_); }

  // Uniform on the open interval (0, 1).
  double uniform() {
    return (static_cast<double>(next_u64() >> 11) + 0.5) * 0x1.0p-53;
  }

  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

  std::uint64_t uniform_index(std::uint64_t n) {
    // Modulo bias is < 2^-40 for any desk-scale n.
    return next_u64() % n;
  }

  // Standard normal via Box-Muller; the spare value is cached.
  double gauss() {
    if (have_spare_) {
      have_spare_ = false;
      return spare_;
    }
    const double u1 = uniform();
    const double u2 = uniform();
    const double r = std::sqrt(-2.0 * std::log(u1));
    const double a = 6.283185307179586476925286766559 * u2;
    spare_ = r * std::sin(a);
    have_spare_ = true;
    return r * std::cos(a);
  }

  void fill_gauss(double* out, std::size_t n) {
    for (std::size_t i = 0; i < n; ++i) out[i] = gauss();
  }

 private:
  std::uint64_t state_ = 0;
  bool have_spare_ = false;
  double spare_ = 0.0;
};

// FNV-1a over raw bytes; used for config hashes and model fingerprints.
inline std::uint64_t fnv1a64(const void* data, std::size_t n,
                             std::uint64_t h = 0xcbf29ce484222325ULL) {
  const auto* p = static_cast<const unsigned char*>(data);
  for (std::size_t i = 0; i < n; ++i) {
    h ^= p[i];
    h *= 0x100000001b3ULL;
  }
  return h;
}

}  // namespace rectflow::rng
