#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <vector>

namespace csa {

/// xoshiro256** seeded through SplitMix64. All distributions are implemented
/// here rather than with <random> so that draws are identical on every
/// standard library.
class Rng {
 public:
  explicit Rng(std::uint64_t seed = 0);

  /// Counter-based substream: the generator for (seed, stream, index) does
  /// not depend on how many other substreams were used before it.
  static Rng substream(std::uint64_t seed, std::uint64_t stream,
                       std::uint64_t index = 0);

  std::uint64_t next();

  /// Uniform on [0, 1) with 53 bits of resolution.
  double uniform();
  /// Uniform on (0, 1].
  double uniform_open_low();
  double normal();
  double normal(double mean, double sd) { return mean + sd * normal(); }
  bool bernoulli(double p) { return uniform() < p; }
  /// Uniform integer in [0, n).
  std::uint64_t below(std::uint64_t n);

  template <typename T>
  void shuffle(std::vector<T>& v) {
    for (std::size_t i = v.size(); i > 1; --i) {
      std::size_t j = static_cast<std::size_t>(below(i));
      std::swap(v[i - 1], v[j]);
    }
  }

 private:
  std::uint64_t s_[4];
  bool has_spare_ = false;
  double spare_ = 0.0;
};

std::uint64_t splitmix64(std::uint64_t& state);

}  // namespace csa
