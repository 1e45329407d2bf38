#pragma once

#include <cstdint>
#include <random>
#include <string_view>
#include <vector>

namespace dwtk {

/// Seeded generator with platform-independent draws. The standard
/// distributions are implementation-defined, so all sampling goes through
/// the helpers here.
class Rng {
 public:
  explicit Rng(std::uint64_t seed) : engine_(seed) {}

  std::uint64_t next() { return engine_(); }
  /// Uniform in [0, 1) with 53 random bits.
  double uniform() { return static_cast<double>(engine_() >> 11) * 0x1.0p-53; }
  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }
  /// Uniform integer in [0, n), rejection-sampled to avoid modulo bias.
  std::uint64_t below(std::uint64_t n);
  /// Standard normal via Box-Muller.
  double normal();

 private:
  std::mt19937_64 engine_;
  bool has_spare_ = false;
  double spare_ = 0.0;
};

/// splitmix64 finalizer.
std::uint64_t mix64(std::uint64_t x);

/// Per-subsystem seed: mix64(base ^ fnv1a64(name)).
std::uint64_t derive_seed(std::uint64_t base, std::string_view name);

/// Fisher-Yates permutation of 0..n-1.
std::vector<std::size_t> permutation(std::size_t n, Rng& rng);

}  // namespace dwtk
