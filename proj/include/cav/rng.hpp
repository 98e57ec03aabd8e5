#pragma once

#include <cstddef>
#include <cstdint>
#include <limits>

namespace cav {

/// Counter-based generator: output k of stream (seed, stream) is a SplitMix64
/// hash of the key and k, so any draw is reproducible from its coordinates and
/// streams never share state.
class CounterRng {
 public:
  using result_type = std::uint64_t;

  explicit CounterRng(std::uint64_t seed, std::uint64_t stream = 0);

  static constexpr result_type min() { return 0; }
  static constexpr result_type max() { return std::numeric_limits<result_type>::max(); }
  result_type operator()() { return next_u64(); }

  std::uint64_t next_u64();
  double uniform();                     // [0, 1)
  double uniform(double lo, double hi);  // [lo, hi)
  double normal();                      // standard normal, Box-Muller
  std::size_t below(std::size_t n);     // [0, n)

  std::uint64_t counter() const { return counter_; }

 private:
  std::uint64_t key_;
  std::uint64_t counter_ = 0;
  double spare_normal_ = 0.0;
  bool has_spare_ = false;
};

std::uint64_t splitmix64(std::uint64_t x);

}  // namespace cav
