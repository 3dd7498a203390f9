#pragma once

// Deterministic random number generation.
//
// The stream algorithm is pinned (xoshiro256++ seeded through splitmix64) so
// the same seed reproduces the same draws on every platform, independent of
// the standard library. std::* distributions are deliberately not used: their
// output is implementation-defined.
//
// Substreams come from split(stream_id), derived from the constructor seed
// only, so components that share a parent seed cannot perturb each other by
// consuming draws in a different order.

#include <array>
#include <cmath>
#include <cstdint>
#include <numbers>
#include <vector>

#include "xmlt/core.hpp"

namespace xmlt {

namespace detail {

inline std::uint64_t splitmix64_next(std::uint64_t& state) {
  state += 0x9e3779b97f4a7c15ULL;
  std::uint64_t z = state;
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
  return z ^ (z >> 31);
}

inline std::uint64_t rotl64(std::uint64_t x, int k) {
  return (x << k) | (x >> (64 - k));
}

}  // namespace detail

class Rng {
 public:
  explicit Rng(std::uint64_t seed) : seed_(seed) {
    std::uint64_t sm = seed;
    for (auto& word : state_) word = detail::splitmix64_next(sm);
    if ((state_[0] | state_[1] | state_[2] | state_[3]) == 0) state_[0] = 1;
  }

  std::uint64_t seed() const noexcept { return seed_; }

  /// Child seed as a pure function of (parent seed, stream id).
  static std::uint64_t derive_seed(std::uint64_t parent, std::uint64_t stream) {
    std::uint64_t x = parent ^ (0x9e3779b97f4a7c15ULL * (stream + 1));
    return detail::splitmix64_next(x);
  }

  /// Independent substream; does not consume or depend on this stream's state.
  Rng split(std::uint64_t stream) const { return Rng(derive_seed(seed_, stream)); }

  // xoshiro256++
  std::uint64_t next_u64() {
    const std::uint64_t result = detail::rotl64(state_[0] + state_[3], 23) + state_[0];
    const std::uint64_t t = state_[1] << 17;
    state_[2] ^= state_[0];
    state_[3] ^= state_[1];
    state_[1] ^= state_[2];
    state_[0] ^= state_[3];
    state_[2] ^= t;
    state_[3] = detail::rotl64(state_[3], 45);
    return result;
  }

  /// Unbiased draw in [0, bound) by rejection.
  std::uint64_t next_below(std::uint64_t bound) {
    if (bound == 0) raise(ErrorCode::InvalidInput, "next_below: bound must be > 0");
    const std::uint64_t threshold = (0 - bound) % bound;
    for (;;) {
      const std::uint64_t r = next_u64();
      if (r >= threshold) return r % bound;
    }
  }

  /// Uniform in [0,1) with 53 random bits.
  double next_unit() { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }

  double next_uniform(double lo, double hi) { return lo + (hi - lo) * next_unit(); }

  /// Standard normal via Box-Muller; the paired value is cached.
  double next_gaussian() {
    if (has_cached_) {
      has_cached_ = false;
      return cached_;
    }
    const double u1 = 1.0 - next_unit();  // (0,1], keeps log finite
    const double u2 = next_unit();
    const double radius = std::sqrt(-2.0 * std::log(u1));
    const double angle = 2.0 * std::numbers::pi * u2;
    cached_ = radius * std::sin(angle);
    has_cached_ = true;
    return radius * std::cos(angle);
  }

  /// Uniformly distributed direction on the unit sphere.
  EmbeddingVector next_unit_vector(int dim) {
    for (;;) {
      EmbeddingVector v(static_cast<std::size_t>(dim));
      for (double& x : v) x = next_gaussian();
      const double n = norm(v);
      if (n > kNormEps) {
        for (double& x : v) x /= n;
        return v;
      }
    }
  }

  /// Fisher-Yates shuffle.
  template <class T>
  void shuffle(std::vector<T>& v) {
    for (std::size_t i = v.size(); i > 1; --i) {
      const std::size_t j = static_cast<std::size_t>(next_below(i));
      std::swap(v[i - 1], v[j]);
    }
  }

  /// First k entries of a random permutation of 0..n-1 (partial Fisher-Yates).
  std::vector<int> sample_indices(int n, int k) {
    std::vector<int> idx(static_cast<std::size_t>(n));
    for (int i = 0; i < n; ++i) idx[static_cast<std::size_t>(i)] = i;
    const int take = std::min(k, n);
    for (int i = 0; i < take; ++i) {
      const std::size_t j =
          static_cast<std::size_t>(i) +
          static_cast<std::size_t>(next_below(static_cast<std::uint64_t>(n - i)));
      std::swap(idx[static_cast<std::size_t>(i)], idx[j]);
    }
    idx.resize(static_cast<std::size_t>(take));
    return idx;
  }

 private:
  std::array<std::uint64_t, 4> state_{};
  std::uint64_t seed_ = 0;
  double cached_ = 0.0;
  bool has_cached_ = false;
};

}  // namespace xmlt
