#pragma once

#include <Eigen/Dense>

#include <cstdint>
#include <random>
#include <stdexcept>
#include <string>

namespace evgen {

/// 15-minute slots in one day.
inline constexpr int kSlots = 96;
inline constexpr double kSlotHours = 0.25;
inline constexpr int kSlotMinutes = 15;

/// Row-major so that each sample (row) is contiguous.
using Matrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using Vector = Eigen::VectorXd;

/// Bad input data, bad arguments or malformed files. Maps to CLI exit code 2.
class InputError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Numerical failure (non-finite loss or likelihood). Maps to CLI exit code 3.
class DivergenceError : public std::runtime_error {
 public:
  explicit DivergenceError(const std::string& what, std::string checkpoint = {})
      : std::runtime_error(what), checkpoint_(std::move(checkpoint)) {}

  const std::string& checkpoint() const { return checkpoint_; }

 private:
  std::string checkpoint_;
};

/// Seeded random source with platform-independent transforms.
///
/// The standard distributions are implementation-defined, so uniform and
/// normal draws are derived from the raw 64-bit engine output directly.
class Rng {
 public:
  explicit Rng(std::uint64_t seed) : engine_(seed) {}

  /// Uniform on [0, 1).
  double uniform() { return static_cast<double>(engine_() >> 11) * 0x1.0p-53; }

  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

  /// Standard normal via Box-Muller.
  double normal();

  double normal(double mean, double stddev) { return mean + stddev * normal(); }

  /// Uniform integer on [0, n).
  std::uint64_t below(std::uint64_t n);

  /// Derive an independent stream (used to give each stochastic step its own seed).
  std::uint64_t split() { return engine_(); }

 private:
  std::mt19937_64 engine_;
};

}  // namespace evgen
