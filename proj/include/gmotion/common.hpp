#ifndef GMOTION_COMMON_HPP
#define GMOTION_COMMON_HPP

#include <cmath>
#include <cstdint>
#include <random>
#include <stdexcept>
#include <string>

namespace gmotion {

class Error : public std::runtime_error {
public:
  using std::runtime_error::runtime_error;
};

class DegenerateRotation : public Error { public: using Error::Error; };
class LengthMismatch : public Error { public: using Error::Error; };
class EmptyCenterFrame : public Error { public: using Error::Error; };
class OversizeSample : public Error { public: using Error::Error; };
class BehindCamera : public Error { public: using Error::Error; };
class ShapeMismatch : public Error { public: using Error::Error; };
class InvalidN : public Error { public: using Error::Error; };
class ScaleViolation : public Error { public: using Error::Error; };
class EmptySource : public Error { public: using Error::Error; };
class ConfigError : public Error { public: using Error::Error; };
class PoolSizeError : public Error { public: using Error::Error; };
class InsufficientSamples : public Error { public: using Error::Error; };
class ParseError : public Error { public: using Error::Error; };
class VersionError : public Error { public: using Error::Error; };
class IOError : public Error { public: using Error::Error; };

// All randomness flows through one engine type so that seeded runs are
// reproducible. Distribution sampling is hand-rolled: std:: distributions
// are implementation-defined and would break cross-platform determinism.
using Rng = std::mt19937_64;

/// Uniform double in [0,1).
inline double rand_uniform(Rng& rng) {
  return static_cast<double>(rng() >> 11) * 0x1.0p-53;
}

/// Uniform double in [lo,hi).
inline double rand_uniform(Rng& rng, double lo, double hi) {
  return lo + (hi - lo) * rand_uniform(rng);
}

/// Standard normal via Box-Muller (one value per call, no cached state).
inline double rand_normal(Rng& rng) {
  double u1 = 0.0;
  do {
    u1 = rand_uniform(rng);
  } while (u1 <= 0.0);
  const double u2 = rand_uniform(rng);
  return std::sqrt(-2.0 * std::log(u1)) * std::cos(6.283185307179586476925286766559 * u2);
}

/// Unbiased integer in [0,n) by rejection.
inline std::uint64_t rand_index(Rng& rng, std::uint64_t n) {
  if (n == 0) throw Error("rand_index: n must be positive");
  const std::uint64_t limit = UINT64_MAX - UINT64_MAX % n;
  std::uint64_t x = rng();
  while (x >= limit) x = rng();
  return x % n;
}

inline bool rand_bernoulli(Rng& rng, double p) { return rand_uniform(rng) < p; }

constexpr double kPi = 3.14159265358979323846264338327950288;

} // namespace gmotion

#endif
