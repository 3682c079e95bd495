#pragma once

#include "charbeta/common.hpp"
#include "charbeta/panel_core.hpp"
#include "charbeta/sieve_basis.hpp"

#include <memory>
#include <vector>

namespace charbeta {

struct KnownBetaFit {
  Matrix beta_hat;  // p x K
  Matrix ff_qv;     // K x K realized factor covariation over the window
};

/// Time-series regression of each asset's increments on factor increments.
/// `y` is p×k_n, `f` is K×k_n (columns are intervals).
inline KnownBetaFit estimate_beta_known(const MatrixRef& y, const MatrixRef& f, double delta_n,
                                        double condition_cap = 1e12) {
  if (y.cols() != f.cols()) throw ConfigError("estimate_beta_known: window lengths differ");
  if (f.rows() < 1) throw ConfigError("estimate_beta_known: need at least one factor");
  if (f.cols() < f.rows()) throw ConfigError("estimate_beta_known: k_n must be >= K");
  const Matrix ff = f * f.transpose();
  const Matrix ff_inv = detail::checked_spd_inverse(ff, condition_cap, "factor Gram sum(dF dF')");
  return {(y * f.transpose()) * ff_inv, ff / (static_cast<double>(f.cols()) * delta_n)};
}

struct BetaDecomposition {
  Matrix beta_hat;   // p x K
  Matrix g_hat;      // P beta_hat
  Matrix gamma_hat;  // (I - P) beta_hat
  Matrix ff_qv;      // optional K x K factor covariation of the window
  LocalWindow window;
};

inline BetaDecomposition split_characteristic(const Matrix& beta_hat, const ProjectionOperator& op,
                                              LocalWindow window = {}, Matrix ff_qv = {}) {
  if (beta_hat.rows() != op.p()) throw ConfigError("split_characteristic: beta rows do not match p");
  BetaDecomposition d;
  d.g_hat = op.project(beta_hat);
  d.gamma_hat = beta_hat - d.g_hat;
  d.beta_hat = beta_hat;
  d.ff_qv = std::move(ff_qv);
  d.window = window;
  return d;
}

/// Both steps on one window of a panel; `factors` is K×n aligned with the panel.
inline BetaDecomposition estimate_known_window(const IncrementPanel& panel, const MatrixRef& factors,
                                               const LocalWindow& w, const ProjectionOperator& op) {
  w.validate(panel.n());
  if (factors.cols() != panel.n()) throw ConfigError("factor increments must cover every interval");
  auto fit = estimate_beta_known(w.slice(panel.data()), w.slice(factors), panel.delta_n());
  return split_characteristic(fit.beta_hat, op, w, std::move(fit.ff_qv));
}

/// Per-asset regression coefficients for every stride-1 window, computed from
/// running sums so each window costs O(pK²).
class RollingBetas {
 public:
  RollingBetas(const MatrixRef& y, const MatrixRef& f, int k_n) : k_n_(k_n) {
    if (y.cols() != f.cols()) throw ConfigError("RollingBetas: y and f lengths differ");
    if (k_n < f.rows() || k_n > y.cols()) throw ConfigError("RollingBetas: need K <= k_n <= n");
    const auto n = y.cols();
    const auto p = y.rows();
    const auto k = f.rows();
    yf_.assign(static_cast<std::size_t>(n + 1), Matrix::Zero(p, k));
    ff_.assign(static_cast<std::size_t>(n + 1), Matrix::Zero(k, k));
    for (Eigen::Index i = 0; i < n; ++i) {
      const auto s = static_cast<std::size_t>(i);
      yf_[s + 1] = yf_[s] + y.col(i) * f.col(i).transpose();
      ff_[s + 1] = ff_[s] + f.col(i) * f.col(i).transpose();
    }
  }

  int window_count() const noexcept { return static_cast<int>(yf_.size()) - k_n_; }

  /// β̂ for the window whose first interval is column `first` (0-based).
  Matrix beta(int first) const {
    const auto a = static_cast<std::size_t>(first);
    const auto b = a + static_cast<std::size_t>(k_n_);
    const Matrix ff = ff_[b] - ff_[a];
    return (yf_[b] - yf_[a]) * detail::checked_spd_inverse(ff, 1e12, "factor Gram sum(dF dF')");
  }

 private:
  int k_n_;
  std::vector<Matrix> yf_;
  std::vector<Matrix> ff_;
};

/// How the overlapping spot estimates are weighted in the time integral.
enum class EdgeRule {
  kWindowsOnly,  // Σ_w ĝ_w Δ_n over windows 1..n-k_n+1
  kExtendLast,   // additionally carries the last window over the final k_n-1 intervals
};

/// Integration weights of the stride-1 windows.
inline Vector window_weights(int n, int k_n, double delta_n, EdgeRule edge) {
  const int count = n - k_n + 1;
  Vector w = Vector::Constant(count, delta_n);
  if (edge == EdgeRule::kExtendLast) w(count - 1) = delta_n * k_n;
  return w;
}

struct IntegratedG {
  Vector value;  // K-vector
  int windows_used = 0;
  double delta_n = 0.0;
};

using OperatorSchedule = std::vector<std::shared_ptr<const ProjectionOperator>>;

/// Integrated characteristic beta of asset `target` over the panel span from
/// stride-1 spot estimates. `ops[w]` is the projection anchored at window w;
/// windows may share an operator.
inline IntegratedG integrated_g(const IncrementPanel& panel, const MatrixRef& factors, const OperatorSchedule& ops,
                                int k_n, int target, EdgeRule edge = EdgeRule::kExtendLast) {
  const int n = panel.n();
  if (n <= k_n) throw ConfigError("integrated_g: need n > k_n");
  if (factors.cols() != n) throw ConfigError("integrated_g: factor increments must cover every interval");
  const int count = n - k_n + 1;
  if (static_cast<int>(ops.size()) != count)
    throw ConfigError("integrated_g: expected " + std::to_string(count) + " operators, got " +
                      std::to_string(ops.size()));
  const RollingBetas rb(panel.data(), factors, k_n);
  const Vector weights = window_weights(n, k_n, panel.delta_n(), edge);
  IntegratedG out;
  out.value = Vector::Zero(factors.rows());
  for (int w = 0; w < count; ++w) {
    const auto& op = *ops[static_cast<std::size_t>(w)];
    out.value += weights(w) * (rb.beta(w).transpose() * op.column(target));
  }
  out.windows_used = count;
  out.delta_n = panel.delta_n();
  return out;
}

}  // namespace charbeta
