#pragma once

#include <Eigen/Dense>

#include <cstdint>
#include <limits>
#include <random>
#include <stdexcept>
#include <string>

namespace charbeta {

using Matrix = Eigen::MatrixXd;
using Vector = Eigen::VectorXd;
using MatrixRef = Eigen::Ref<const Matrix>;
using VectorRef = Eigen::Ref<const Vector>;

/// Invalid user configuration (bad dimensions, out-of-range knobs).
class ConfigError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

/// Malformed or inconsistent input data.
class DataError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// A matrix that had to be inverted was singular or too ill-conditioned.
class SingularMatrixError : public std::runtime_error {
 public:
  SingularMatrixError(const std::string& what, double condition)
      : std::runtime_error(what), condition_(condition) {}
  double condition() const noexcept { return condition_; }

 private:
  double condition_;
};

namespace rng {

// SplitMix64 finalizer; used only to decorrelate seeds, never as a generator.
constexpr std::uint64_t mix(std::uint64_t z) noexcept {
  z += 0x9E3779B97F4A7C15ull;
  z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ull;
  z = (z ^ (z >> 27)) * 0x94D049BB133111EBull;
  return z ^ (z >> 31);
}

/// Seed of the stream identified by (seed, a, b). Each index path gives an
/// independent generator, so results never depend on execution order.
constexpr std::uint64_t derive(std::uint64_t seed, std::uint64_t a,
                               std::uint64_t b = 0) noexcept {
  return mix(mix(mix(seed) ^ (a * 0xD1B54A32D192ED03ull)) ^
             (b * 0x8CB92BA72F3D8DD7ull + 1));
}

using Engine = std::mt19937_64;

inline Engine stream(std::uint64_t seed, std::uint64_t a, std::uint64_t b = 0) {
  return Engine(derive(seed, a, b));
}

}  // namespace rng

namespace detail {

// Symmetric inverse through an eigendecomposition, refusing matrices whose
// condition number exceeds `cap`.
inline Matrix checked_spd_inverse(const MatrixRef& a, double cap,
                                  const char* what) {
  Eigen::SelfAdjointEigenSolver<Matrix> es(a);
  const Vector& ev = es.eigenvalues();
  const double lo = ev.minCoeff();
  const double hi = ev.maxCoeff();
  const double cond = lo > 0.0 ? hi / lo : std::numeric_limits<double>::infinity();
  if (!(hi > 0.0) || !(cond <= cap)) {
    throw SingularMatrixError(std::string(what) + " is singular or ill-conditioned (condition " +
                                  std::to_string(cond) + ")",
                              cond);
  }
  return es.eigenvectors() * ev.cwiseInverse().asDiagonal() * es.eigenvectors().transpose();
}

}  // namespace detail

}  // namespace charbeta
