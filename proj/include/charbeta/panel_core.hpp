#pragma once

#include "charbeta/common.hpp"

#include <boost/math/distributions/normal.hpp>

#include <algorithm>
#include <cmath>
#include <string>
#include <vector>

namespace charbeta {

/// Per-interval increments of p series on a regular grid. Column i holds the
/// increment over ((i)Δ, (i+1)Δ] relative to t0.
class IncrementPanel {
 public:
  IncrementPanel() = default;

  IncrementPanel(Matrix data, double delta_n, std::vector<std::string> asset_ids = {},
                 double t0 = 0.0)
      : data_(std::move(data)), delta_n_(delta_n), asset_ids_(std::move(asset_ids)), t0_(t0) {
    if (data_.rows() < 1 || data_.cols() < 1) throw ConfigError("panel must have p >= 1 and n >= 1");
    if (!(delta_n_ > 0.0)) throw ConfigError("delta_n must be positive");
    if (!data_.allFinite()) {
      for (Eigen::Index j = 0; j < data_.cols(); ++j)
        for (Eigen::Index i = 0; i < data_.rows(); ++i)
          if (!std::isfinite(data_(i, j)))
            throw DataError("non-finite increment at asset " + std::to_string(i) + ", interval " +
                            std::to_string(j + 1));
    }
    if (asset_ids_.empty()) {
      asset_ids_.reserve(static_cast<std::size_t>(data_.rows()));
      for (Eigen::Index i = 0; i < data_.rows(); ++i) asset_ids_.push_back(std::to_string(i));
    } else if (static_cast<Eigen::Index>(asset_ids_.size()) != data_.rows()) {
      throw ConfigError("asset_ids size does not match panel rows");
    }
  }

  const Matrix& data() const noexcept { return data_; }
  double delta_n() const noexcept { return delta_n_; }
  double t0() const noexcept { return t0_; }
  const std::vector<std::string>& asset_ids() const noexcept { return asset_ids_; }
  int p() const noexcept { return static_cast<int>(data_.rows()); }
  int n() const noexcept { return static_cast<int>(data_.cols()); }

 private:
  Matrix data_;
  double delta_n_ = 1.0;
  std::vector<std::string> asset_ids_;
  double t0_ = 0.0;
};

/// Intervals start_index .. start_index + k_n - 1 (1-based, inclusive).
struct LocalWindow {
  int start_index = 1;
  int k_n = 1;

  int first() const noexcept { return start_index - 1; }  // 0-based column
  int last() const noexcept { return start_index + k_n - 2; }

  void validate(int n) const {
    if (start_index < 1 || k_n < 1 || start_index + k_n - 1 > n)
      throw ConfigError("window [" + std::to_string(start_index) + ", " +
                        std::to_string(start_index + k_n - 1) + "] outside 1.." + std::to_string(n));
  }

  template <typename Derived>
  auto slice(const Eigen::MatrixBase<Derived>& m) const {
    return m.middleCols(first(), k_n);
  }
};

/// Windows starting at 1, 1+stride, ... while the window fits inside 1..n.
inline std::vector<LocalWindow> make_windows(int n, int k_n, int stride = 1) {
  if (k_n < 1 || k_n > n) throw ConfigError("make_windows: need 1 <= k_n <= n");
  if (stride < 1) throw ConfigError("make_windows: stride must be >= 1");
  std::vector<LocalWindow> out;
  for (int s = 1; s + k_n - 1 <= n; s += stride) out.push_back({s, k_n});
  return out;
}

enum class IvEstimateMode { kTrimmedRv, kBipower };

struct TruncationRule {
  double varpi = 0.49;
  double c_mult = 4.0;
  IvEstimateMode iv_mode = IvEstimateMode::kTrimmedRv;
  double trim_fraction = 0.05;  // share of largest |Δ| discarded by the trimmed RV

  void validate() const {
    if (!(varpi > 0.0 && varpi < 0.5)) throw ConfigError("truncation varpi must lie in (0, 1/2)");
    if (!(c_mult > 0.0)) throw ConfigError("truncation c_mult must be positive");
    if (!(trim_fraction >= 0.0 && trim_fraction < 1.0))
      throw ConfigError("trim_fraction must lie in [0, 1)");
  }
};

namespace detail {

// E[Z^2 1{|Z| <= c}] for c the (1 - trim/2) normal quantile: rescales a
// trimmed sum of squares so it is unbiased for Gaussian increments.
inline double trimmed_second_moment(double trim) {
  if (trim <= 0.0) return 1.0;
  boost::math::normal_distribution<double> z;
  const double c = boost::math::quantile(z, 1.0 - trim / 2.0);
  return (1.0 - trim) - 2.0 * c * boost::math::pdf(z, c);
}

inline double integrated_variance(const Eigen::Ref<const Eigen::RowVectorXd>& x,
                                  const TruncationRule& rule) {
  const Eigen::Index n = x.size();
  if (rule.iv_mode == IvEstimateMode::kBipower) {
    if (n < 2) return x.squaredNorm();
    double s = 0.0;
    for (Eigen::Index i = 1; i < n; ++i) s += std::abs(x(i)) * std::abs(x(i - 1));
    return (M_PI / 2.0) * s * static_cast<double>(n) / static_cast<double>(n - 1);
  }
  std::vector<double> sq(static_cast<std::size_t>(n));
  for (Eigen::Index i = 0; i < n; ++i) sq[static_cast<std::size_t>(i)] = x(i) * x(i);
  const auto drop = static_cast<std::size_t>(std::floor(rule.trim_fraction * static_cast<double>(n)));
  if (drop == 0) {
    double s = 0.0;
    for (double v : sq) s += v;
    return s;
  }
  const auto keep = sq.size() - drop;
  std::nth_element(sq.begin(), sq.begin() + static_cast<std::ptrdiff_t>(keep), sq.end());
  double s = 0.0;
  for (std::size_t i = 0; i < keep; ++i) s += sq[i];
  const double realized_trim = static_cast<double>(drop) / static_cast<double>(n);
  return s / trimmed_second_moment(realized_trim);
}

}  // namespace detail

/// Per-row truncation levels ψ_l = c_mult · sqrt(IV_l / T) · Δ_n^varpi, with
/// IV_l pre-estimated over the whole panel span T = nΔ_n.
inline Vector truncation_levels(const IncrementPanel& panel, const TruncationRule& rule) {
  rule.validate();
  const double span = panel.n() * panel.delta_n();
  const double scale = rule.c_mult * std::pow(panel.delta_n(), rule.varpi);
  Vector psi(panel.p());
  for (int l = 0; l < panel.p(); ++l) {
    const double iv = detail::integrated_variance(panel.data().row(l), rule);
    psi(l) = scale * std::sqrt(std::max(iv, 0.0) / span);
  }
  return psi;
}

/// Zero every increment with |Δ| above its row's level; alignment is kept.
inline IncrementPanel truncate_at(const IncrementPanel& panel, const VectorRef& psi) {
  if (psi.size() != panel.p()) throw ConfigError("truncate_at: one level per row required");
  Matrix out = panel.data();
  for (Eigen::Index j = 0; j < out.cols(); ++j)
    for (Eigen::Index i = 0; i < out.rows(); ++i)
      if (std::abs(out(i, j)) > psi(i)) out(i, j) = 0.0;
  return IncrementPanel(std::move(out), panel.delta_n(), panel.asset_ids(), panel.t0());
}

inline IncrementPanel truncate(const IncrementPanel& panel, const TruncationRule& rule = {}) {
  return truncate_at(panel, truncation_levels(panel, rule));
}

/// Spot covariation (1/(k_nΔ_n)) Σ_i Δ_i a Δ_i b' of two window blocks whose
/// columns are intervals.
inline Matrix realized_qcov(const MatrixRef& a, const MatrixRef& b, double delta_n) {
  if (a.cols() != b.cols()) throw ConfigError("realized_qcov: windows of different length");
  if (a.cols() < 1) throw ConfigError("realized_qcov: empty window");
  if (!(delta_n > 0.0)) throw ConfigError("realized_qcov: delta_n must be positive");
  return (a * b.transpose()) / (static_cast<double>(a.cols()) * delta_n);
}

}  // namespace charbeta
