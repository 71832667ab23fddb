#pragma once

#include <complex>
#include <cstdint>
#include <random>

namespace exdiff {

/// Deterministic random stream keyed by (seed, stream index).
///
/// Every consumer that needs reproducibility independent of scheduling
/// (Monte-Carlo paths, batch items, corpus pairs) derives its own stream
/// from the shared seed and its own index instead of sharing a generator.
class Rng {
 public:
  explicit Rng(std::uint64_t seed, std::uint64_t stream = 0);

  double uniform();                       // [0, 1)
  double uniform(double lo, double hi);   // [lo, hi)
  double normal();                        // N(0, 1)
  std::size_t index(std::size_t n);       // uniform in [0, n)

  /// Circularly-symmetric complex normal with E|z|^2 = 1.
  std::complex<double> complex_normal();

  std::mt19937_64& engine() { return engine_; }

 private:
  std::mt19937_64 engine_;
  std::normal_distribution<double> normal_{0.0, 1.0};
  std::uniform_real_distribution<double> uniform_{0.0, 1.0};
};

}  // namespace exdiff
