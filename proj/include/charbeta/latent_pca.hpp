#pragma once

#include "charbeta/common.hpp"
#include "charbeta/sieve_basis.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <span>
#include <string>
#include <vector>

namespace charbeta {

enum class SignConvention {
  kLargestCoordinate,    // largest-|.| entry of each factor column is positive
  kPositiveMeanLoading,  // cross-sectional mean of each loading column is positive
};

struct LatentFactorEstimate {
  Matrix f_hat;              // k_n x K, (1/(k_nΔ)) F̂'F̂ = I
  Vector v_hat;              // leading K eigenvalues, decreasing
  Vector eigenvalue_ratios;  // λ_k / λ_{k+1} diagnostic, k = 1..min(2K, k_n-1)
  double eigen_gap = 0.0;    // (λ_K - λ_{K+1}) / λ_1
  bool degenerate = false;
  std::vector<std::string> warnings;
};

namespace detail {

inline LatentFactorEstimate pca_of_projected(const Matrix& projected, int K, double delta_n, SignConvention sign) {
  const auto p = projected.rows();
  const auto kn = projected.cols();
  if (K < 1 || K > kn) throw ConfigError("projected_pca: need 1 <= K <= k_n");
  const double window = static_cast<double>(kn) * delta_n;
  const Matrix m = (projected.transpose() * projected) / (static_cast<double>(p) * window);
  Eigen::SelfAdjointEigenSolver<Matrix> es(m);
  const Vector& ev = es.eigenvalues();  // ascending

  LatentFactorEstimate out;
  out.v_hat.resize(K);
  out.f_hat.resize(kn, K);
  const double scale = std::sqrt(window);
  for (int k = 0; k < K; ++k) {
    const auto src = kn - 1 - k;
    out.v_hat(k) = ev(src);
    out.f_hat.col(k) = scale * es.eigenvectors().col(src);
  }
  for (int k = 0; k < K; ++k) {
    double s = 1.0;
    if (sign == SignConvention::kLargestCoordinate) {
      Eigen::Index arg = 0;
      out.f_hat.col(k).cwiseAbs().maxCoeff(&arg);
      s = out.f_hat(arg, k) < 0.0 ? -1.0 : 1.0;
    } else {
      s = (projected * out.f_hat.col(k)).sum() < 0.0 ? -1.0 : 1.0;
    }
    out.f_hat.col(k) *= s;
  }

  const double top = std::max(ev(kn - 1), std::numeric_limits<double>::min());
  const double next = K < kn ? ev(kn - 1 - K) : 0.0;
  out.eigen_gap = (out.v_hat(K - 1) - next) / top;
  const int nratio = static_cast<int>(std::min<Eigen::Index>(2 * K, kn - 1));
  out.eigenvalue_ratios.resize(std::max(nratio, 0));
  for (int k = 0; k < nratio; ++k) {
    const double denom = ev(kn - 2 - k);
    out.eigenvalue_ratios(k) = denom > 0.0 ? ev(kn - 1 - k) / denom : std::numeric_limits<double>::infinity();
  }
  constexpr double tie_tol = 1e-8;
  for (int k = 0; k + 1 < K; ++k)
    if (out.v_hat(k) - out.v_hat(k + 1) <= tie_tol * top) {
      out.degenerate = true;
      out.warnings.push_back("eigenvalues " + std::to_string(k + 1) + " and " + std::to_string(k + 2) +
                             " are tied; order follows the solver");
    }
  if (out.eigen_gap <= tie_tol) {
    out.degenerate = true;
    out.warnings.push_back("no spectral gap after the leading K eigenvalues");
  }
  return out;
}

}  // namespace detail

/// Principal components of sieve-projected increments in one window.
/// `y` is p×k_n; every interval uses the same anchor projection.
inline LatentFactorEstimate projected_pca(const MatrixRef& y, const ProjectionOperator& op, int K, double delta_n,
                                          SignConvention sign = SignConvention::kLargestCoordinate) {
  if (y.rows() != op.p()) throw ConfigError("projected_pca: panel rows do not match the basis");
  if (K > op.J()) throw ConfigError("projected_pca: K exceeds the sieve dimension J");
  return detail::pca_of_projected(op.project(y), K, delta_n, sign);
}

/// Variant with one projection per interval of the window.
inline LatentFactorEstimate projected_pca(const MatrixRef& y, std::span<const ProjectionOperator* const> ops, int K,
                                          double delta_n,
                                          SignConvention sign = SignConvention::kLargestCoordinate) {
  if (static_cast<Eigen::Index>(ops.size()) != y.cols())
    throw ConfigError("projected_pca: need one operator per interval");
  Matrix projected(y.rows(), y.cols());
  for (Eigen::Index i = 0; i < y.cols(); ++i) {
    const auto& op = *ops[static_cast<std::size_t>(i)];
    if (K > op.J()) throw ConfigError("projected_pca: K exceeds the sieve dimension J");
    projected.col(i) = op.project(y.col(i));
  }
  return detail::pca_of_projected(projected, K, delta_n, sign);
}

struct LatentLoadings {
  Matrix beta_hat;   // (1/(k_nΔ)) ΔY F̂
  Matrix g_hat;      // P beta_hat
  Matrix gamma_hat;  // (I - P) beta_hat
};

inline LatentLoadings estimate_g_latent(const MatrixRef& y, const MatrixRef& f_hat, const ProjectionOperator& op,
                                        double delta_n) {
  if (y.cols() != f_hat.rows()) throw ConfigError("estimate_g_latent: window lengths differ");
  if (y.rows() != op.p()) throw ConfigError("estimate_g_latent: panel rows do not match the basis");
  LatentLoadings out;
  out.beta_hat = (y * f_hat) / (static_cast<double>(y.cols()) * delta_n);
  out.g_hat = op.project(out.beta_hat);
  out.gamma_hat = out.beta_hat - out.g_hat;
  return out;
}

/// ΔÛ = ΔY − β̂ F̂' (p×k_n).
inline Matrix latent_residuals(const MatrixRef& y, const MatrixRef& f_hat, const MatrixRef& beta_hat) {
  return y - beta_hat * f_hat.transpose();
}

namespace detail {

// (1/p) V̂⁻¹ Ĝ' P (C P_{·,l}) given C·P_{·,l} already formed.
inline Vector bias_from_weighted(const Vector& c_times_col, const VectorRef& v_hat, const MatrixRef& g_hat,
                                 const ProjectionOperator& op) {
  const Vector z = op.project(c_times_col);
  return (g_hat.transpose() * z).cwiseQuotient(v_hat) / static_cast<double>(op.p());
}

}  // namespace detail

/// Bias estimate of the latent ĝ_l when the idiosyncratic covariance is
/// treated as diagonal (residual variances only).
inline Vector bias_case1(const MatrixRef& residuals, const VectorRef& v_hat, const MatrixRef& g_hat,
                         const ProjectionOperator& op, int target, double delta_n) {
  if (residuals.rows() != op.p() || g_hat.rows() != op.p())
    throw ConfigError("bias_case1: row dimensions do not match p");
  if (g_hat.cols() != v_hat.size()) throw ConfigError("bias_case1: K mismatch between g_hat and v_hat");
  const Vector diag = residuals.rowwise().squaredNorm() / (static_cast<double>(residuals.cols()) * delta_n);
  return detail::bias_from_weighted(diag.cwiseProduct(op.column(target)), v_hat, g_hat, op);
}

enum class ThresholdKind { kSoft, kHard };

struct SparseCovEstimate {
  Matrix matrix;
  double threshold_constant = 0.0;
  double omega_np = 0.0;
  double kept_fraction = 0.0;  // share of off-diagonal entries left nonzero
};

/// Thresholded residual covariance with entry-adaptive levels
/// ϱ_dl = c_bar·sqrt(s_dd s_ll)·ω, ω = sqrt(log p / k_n) + (1/p)·max_j‖φ_j‖²·sqrt(log J).
inline SparseCovEstimate threshold_covariance(const MatrixRef& residuals, double delta_n, int J, double max_phi_norm2,
                                              double c_bar = 0.5, ThresholdKind kind = ThresholdKind::kSoft) {
  const auto p = residuals.rows();
  const auto kn = residuals.cols();
  if (kn < 2) throw ConfigError("threshold_covariance: need k_n >= 2");
  if (c_bar < 0.0) throw ConfigError("threshold_covariance: c_bar must be nonnegative");
  SparseCovEstimate out;
  out.threshold_constant = c_bar;
  out.omega_np = std::sqrt(std::log(static_cast<double>(p)) / static_cast<double>(kn)) +
                 max_phi_norm2 / static_cast<double>(p) * std::sqrt(std::log(static_cast<double>(std::max(J, 1))));
  out.matrix = (residuals * residuals.transpose()) / (static_cast<double>(kn) * delta_n);
  const Vector sd = out.matrix.diagonal().cwiseMax(0.0).cwiseSqrt();
  std::size_t kept = 0;
  for (Eigen::Index l = 0; l < p; ++l)
    for (Eigen::Index d = l + 1; d < p; ++d) {
      const double s = out.matrix(d, l);
      const double rho = c_bar * sd(d) * sd(l) * out.omega_np;
      double v = 0.0;
      if (std::abs(s) > rho) v = kind == ThresholdKind::kSoft ? std::copysign(std::abs(s) - rho, s) : s;
      if (v != 0.0) ++kept;
      out.matrix(d, l) = v;
      out.matrix(l, d) = v;
    }
  const double pairs = 0.5 * static_cast<double>(p) * static_cast<double>(p - 1);
  out.kept_fraction = pairs > 0.0 ? static_cast<double>(kept) / pairs : 0.0;
  return out;
}

inline SparseCovEstimate threshold_covariance(const MatrixRef& residuals, double delta_n, const ProjectionOperator& op,
                                              double c_bar = 0.5, ThresholdKind kind = ThresholdKind::kSoft) {
  return threshold_covariance(residuals, delta_n, op.J(), op.max_row_norm2(), c_bar, kind);
}

/// Bias estimate using a full (thresholded) idiosyncratic covariance.
inline Vector bias_case2(const SparseCovEstimate& cov, const VectorRef& v_hat, const MatrixRef& g_hat,
                         const ProjectionOperator& op, int target) {
  if (cov.matrix.rows() != op.p() || g_hat.rows() != op.p())
    throw ConfigError("bias_case2: row dimensions do not match p");
  return detail::bias_from_weighted(cov.matrix * op.column(target), v_hat, g_hat, op);
}

/// Evaluation aid relating estimated and true factors.
struct RotationAligner {
  Matrix upsilon_hat;       // argmin_A ‖F̂ − ΔF A‖: F̂ ≈ ΔF·Υ̂
  Matrix loading_rotation;  // H = Υ̂' ĉ_FF, so that the latent ĝ_l targets H g_l
};

/// `f_hat` and `f_true` are k_n×K factor increments of the same window.
inline RotationAligner align_rotation(const MatrixRef& f_hat, const MatrixRef& f_true, double delta_n) {
  if (f_hat.rows() != f_true.rows()) throw ConfigError("align_rotation: window lengths differ");
  const Matrix ff = f_true.transpose() * f_true;
  const Matrix ff_inv = detail::checked_spd_inverse(ff, 1e12, "true factor Gram");
  RotationAligner r;
  r.upsilon_hat = ff_inv * (f_true.transpose() * f_hat);
  r.loading_rotation = r.upsilon_hat.transpose() * ff / (static_cast<double>(f_true.rows()) * delta_n);
  return r;
}

}  // namespace charbeta
