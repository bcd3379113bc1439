// Copyright 2026 The MoEVC Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstdint>
#include <iterator>
#include <random>
#include <string_view>
#include <utility>

namespace moevc {

std::uint64_t splitmix64(std::uint64_t x) noexcept;

/// FNV-1a; used to derive named substreams from one run seed.
std::uint64_t stream_id(std::string_view name) noexcept;

/// Seeded generator with distribution code written out here rather than taken
/// from <random>, whose distributions are implementation-defined. Identical
/// seeds give identical draws on every standard library.
class Rng {
 public:
  explicit Rng(std::uint64_t seed, std::uint64_t stream = 0);
  Rng(std::uint64_t seed, std::string_view stream) : Rng(seed, stream_id(stream)) {}

  std::uint64_t next_u64() { return engine_(); }
  double uniform();  // [0, 1)
  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }
  double normal();   // Box-Muller, one draw per call
  std::size_t index(std::size_t n);  // uniform on [0, n)

  template <typename It>
  void shuffle(It first, It last) {
    auto n = static_cast<std::size_t>(std::distance(first, last));
    for (std::size_t i = n; i > 1; --i) {
      std::size_t j = index(i);
      using std::swap;
      swap(first[i - 1], first[j]);
    }
  }

 private:
  std::mt19937_64 engine_;
};

}  // namespace moevc
