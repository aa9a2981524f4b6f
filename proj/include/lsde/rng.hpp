#pragma once

#include <cstdint>

namespace lsde {

/// Purpose tags keep independent random streams apart under one seed.
enum class Stream : std::uint64_t {
  kWiener = 1,
  kObservationNoise = 2,
  kReparam = 3,
  kValidationReparam = 4,
  kInit = 5,
  kAmbientMap = 6,
  kTest = 7,
};

std::uint64_t splitmix64(std::uint64_t x);

/// Standard normal quantile, accurate to ~1e-15 relative on (0, 1).
double normal_quantile(double p);

/// Counter-based generator: every draw is a pure function of
/// (seed, stream, index), so paths can be regenerated or split across
/// threads without coordination.
class CounterRng {
 public:
  CounterRng(std::uint64_t seed, Stream stream);
  CounterRng(std::uint64_t seed, std::uint64_t stream);

  std::uint64_t bits(std::uint64_t index) const;
  /// Uniform on the open interval (0, 1).
  double uniform(std::uint64_t index) const;
  /// Standard normal via inverse CDF.
  double normal(std::uint64_t index) const;
  /// Student-t with `dof` degrees of freedom built from dof+1 normals at
  /// sub-indices of `index`; dof must be a positive integer.
  double student_t(std::uint64_t index, int dof) const;

  std::uint64_t key() const { return key_; }

 private:
  std::uint64_t key_;
};

}  // namespace lsde
