#pragma once

#include <atomic>
#include <cstdint>
#include <random>
#include <stdexcept>
#include <string>

namespace tamba {

// Error taxonomy. The CLI maps ValidationError (and subclasses) to exit code 2
// and NumericError to exit code 3; anything else is a plain failure.
struct Error : std::runtime_error {
  using std::runtime_error::runtime_error;
};
struct DimensionError : Error {
  using Error::Error;
};
struct ValidationError : Error {
  using Error::Error;
};
struct ConfigError : ValidationError {
  using ValidationError::ValidationError;
};
struct CheckpointError : ValidationError {
  using ValidationError::ValidationError;
};
struct NumericError : Error {
  using Error::Error;
};
// Raised when a test oracle itself misbehaves (e.g. a non-deterministic
// objective under finite differencing), as opposed to the code under test.
struct OracleError : Error {
  using Error::Error;
};

// Deterministic RNG. Transforms are hand-rolled on top of raw mt19937_64
// draws so streams are reproducible across standard library implementations
// (std::uniform_real_distribution makes no such promise).
class Rng {
 public:
  explicit Rng(uint64_t seed) : eng_(seed) {}

  uint64_t next_u64() { return eng_(); }

  // [0, 1)
  double uniform() {
    return static_cast<double>(next_u64() >> 11) * 0x1.0p-53;
  }

  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

  // inclusive range, unbiased via rejection
  int64_t uniform_int(int64_t lo, int64_t hi) {
    if (hi < lo) throw DimensionError("uniform_int: empty range");
    uint64_t span = static_cast<uint64_t>(hi - lo) + 1;
    if (span == 0) return static_cast<int64_t>(next_u64());  // full 64-bit range
    uint64_t limit = UINT64_MAX - UINT64_MAX % span;
    uint64_t x;
    do {
      x = next_u64();
    } while (x >= limit);
    return lo + static_cast<int64_t>(x % span);
  }

  // Box-Muller, deterministic
  double normal() {
    double u1 = uniform();
    double u2 = uniform();
    while (u1 <= 1e-300) u1 = uniform();
    return std::sqrt(-2.0 * std::log(u1)) * std::cos(6.283185307179586 * u2);
  }

  // Derived stream with decorrelated seed (splitmix64 of parent draw + tag).
  Rng fork(uint64_t tag) {
    uint64_t z = next_u64() + 0x9e3779b97f4a7c15ULL * (tag + 1);
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
    return Rng(z ^ (z >> 31));
  }

 private:
  std::mt19937_64 eng_;
};

// Non-finite guards on op outputs. On by default; the scaling benchmark turns
// them off around its timed region so measurements stay clean.
bool finite_checks_enabled();
void set_finite_checks(bool on);

// Thread-local FLOP meter. Ops add their cost while enabled; the analytic
// estimator in metrics uses the same conventions, declared here so both
// routes share one definition of "a FLOP".
namespace flopmeter {

void set_enabled(bool on);
bool enabled();
void reset();
uint64_t total();
void add(uint64_t n);

// Conventions: multiply-accumulate-dominant terms only, 2 FLOPs per MAC.
// Bias adds, normalization, activations and softmax count as zero.
inline uint64_t affine(uint64_t rows, uint64_t in, uint64_t out) {
  return 2 * rows * in * out;
}
inline uint64_t matmul(uint64_t rows, uint64_t inner, uint64_t cols) {
  return 2 * rows * inner * cols;
}
inline uint64_t conv_depthwise(uint64_t len, uint64_t channels, uint64_t width) {
  return 2 * len * channels * width;
}
// Recurrence cost is charged at the dense-state convention (n^2 for the state
// map) regardless of the diagonal parameterization, matching the estimator.
inline uint64_t scan(uint64_t len, uint64_t n, uint64_t m, uint64_t p) {
  return 2 * len * (n * n + n * m + p * n + p * m);
}
inline uint64_t scan_update(uint64_t rows, uint64_t n, uint64_t m) {
  return 2 * rows * (n * n + n * m);
}
inline uint64_t scan_output(uint64_t rows, uint64_t n, uint64_t m, uint64_t p) {
  return 2 * rows * (p * n + p * m);
}

}  // namespace flopmeter

}  // namespace tamba
