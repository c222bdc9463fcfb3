#pragma once

// Counter-based deterministic randomness. A stream is fully identified by
// (seed, stream_id): the n-th draw is a pure integer function of those two
// words and n, so any (seed, stream_id) pair reproduces the same sequence
// on every platform, and derived streams never depend on draw order.

#include <cmath>
#include <cstdint>

namespace lrdrop {

namespace detail {
inline std::uint64_t mix64(std::uint64_t z) {
  z += 0x9e3779b97f4a7c15ULL;
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
  return z ^ (z >> 31);
}

inline std::uint64_t hash_combine(std::uint64_t a, std::uint64_t b) {
  return mix64(a ^ (mix64(b) + 0x9e3779b97f4a7c15ULL + (a << 6) + (a >> 2)));
}

// FNV-1a, for deriving stream ids from site names.
inline std::uint64_t fnv1a(const char* s) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (; *s; ++s) h = (h ^ static_cast<unsigned char>(*s)) * 0x100000001b3ULL;
  return h;
}
}  // namespace detail

class RngStream {
 public:
  explicit RngStream(std::uint64_t seed, std::uint64_t stream_id = 0)
      : seed_(seed), stream_id_(stream_id),
        base_(detail::hash_combine(detail::mix64(seed), stream_id)) {}

  std::uint64_t seed() const { return seed_; }
  std::uint64_t stream_id() const { return stream_id_; }

  // Independent stream keyed by (seed, h(stream_id, tag)). Counter state of
  // the parent is irrelevant; forks are reproducible in any order.
  RngStream fork(std::uint64_t tag) const {
    return RngStream(seed_, detail::hash_combine(stream_id_, tag));
  }

  RngStream fork(const char* site) const { return fork(detail::fnv1a(site)); }

  std::uint64_t next_u64() {
    return detail::mix64(base_ + (++counter_) * 0x9e3779b97f4a7c15ULL);
  }

  // [0, 1)
  double uniform() {
    return static_cast<double>(next_u64() >> 11) * 0x1.0p-53;
  }

  bool bernoulli(double p_true) { return uniform() < p_true; }

  // Standard normal via Box-Muller; the sine partner is discarded so the
  // draw count per call is fixed.
  double gaussian() {
    double u1 = uniform();
    while (u1 <= 0.0) u1 = uniform();
    const double u2 = uniform();
    const double two_pi = 6.283185307179586476925286766559;
    return std::sqrt(-2.0 * std::log(u1)) * std::cos(two_pi * u2);
  }

 private:
  std::uint64_t seed_ = 0;
  std::uint64_t stream_id_ = 0;
  std::uint64_t base_ = 0;
  std::uint64_t counter_ = 0;
};

}  // namespace lrdrop
