#pragma once

#include "charbeta/common.hpp"

#include <algorithm>
#include <cmath>
#include <optional>
#include <span>
#include <string>
#include <vector>

namespace charbeta {

/// Characteristics of p assets at one anchor time (rows = assets).
struct CharacteristicPanel {
  Matrix values;

  int p() const noexcept { return static_cast<int>(values.rows()); }
  int k_x() const noexcept { return static_cast<int>(values.cols()); }

  void validate() const {
    if (values.cols() < 1) throw ConfigError("characteristics need at least one column");
    if (values.rows() <= values.cols()) throw ConfigError("characteristics need p > K_x");
    if (!values.allFinite()) throw DataError("non-finite characteristic value");
  }

  /// Observed [min, max] per column.
  std::vector<std::pair<double, double>> bounds() const {
    std::vector<std::pair<double, double>> b;
    for (Eigen::Index j = 0; j < values.cols(); ++j)
      b.emplace_back(values.col(j).minCoeff(), values.col(j).maxCoeff());
    return b;
  }
};

enum class SieveFamily { kLinear, kBSpline, kPolynomial };

struct SieveBasisSpec {
  SieveFamily family = SieveFamily::kLinear;
  int degree = 3;          // B-spline degree
  int interior_knots = 4;  // B-spline interior knots per column
  int order = 2;           // polynomial order per column
  bool standardize = true;
  bool intercept = true;
  double condition_cap = 1e10;

  static SieveBasisSpec linear(bool intercept = true) {
    SieveBasisSpec s;
    s.intercept = intercept;
    return s;
  }
  static SieveBasisSpec bspline(int degree, int interior_knots) {
    SieveBasisSpec s;
    s.family = SieveFamily::kBSpline;
    s.degree = degree;
    s.interior_knots = interior_knots;
    return s;
  }
  static SieveBasisSpec polynomial(int order) {
    SieveBasisSpec s;
    s.family = SieveFamily::kPolynomial;
    s.order = order;
    return s;
  }

  /// Functions contributed by one characteristic (intercept excluded).
  int per_column() const {
    switch (family) {
      case SieveFamily::kLinear: return 1;
      case SieveFamily::kPolynomial: return order;
      case SieveFamily::kBSpline: return degree + interior_knots;  // one dropped for the constant
    }
    return 0;
  }

  /// Total dimension J for K_x characteristics. Without an intercept the
  /// B-spline family keeps the dropped function of the first column so the
  /// span (which contains constants) is unchanged.
  int basis_dim(int k_x) const {
    int j = k_x * per_column();
    if (intercept || family == SieveFamily::kBSpline) j += 1;
    return j;
  }

  void validate() const {
    if (family == SieveFamily::kBSpline && (degree < 0 || interior_knots < 0))
      throw ConfigError("bspline degree and knot count must be nonnegative");
    if (family == SieveFamily::kPolynomial && order < 1)
      throw ConfigError("polynomial order must be >= 1");
    if (!(condition_cap > 1.0)) throw ConfigError("condition_cap must exceed 1");
  }
};

namespace detail {

// Cox-de Boor evaluation of all clamped B-spline functions at x.
inline void bspline_values(double x, const std::vector<double>& knots, int degree,
                           std::vector<double>& out) {
  const int nb = static_cast<int>(knots.size()) - degree - 1;
  out.assign(static_cast<std::size_t>(nb), 0.0);
  const double lo = knots[static_cast<std::size_t>(degree)];
  const double hi = knots[static_cast<std::size_t>(nb)];
  x = std::clamp(x, lo, hi);
  // locate the span [t_s, t_{s+1}) with the right boundary folded into the last span
  int s = degree;
  while (s < nb - 1 && x >= knots[static_cast<std::size_t>(s + 1)]) ++s;
  std::vector<double> n(static_cast<std::size_t>(degree + 1), 0.0);
  n[0] = 1.0;
  std::vector<double> left(static_cast<std::size_t>(degree + 1)),
      right(static_cast<std::size_t>(degree + 1));
  for (int d = 1; d <= degree; ++d) {
    left[static_cast<std::size_t>(d)] = x - knots[static_cast<std::size_t>(s + 1 - d)];
    right[static_cast<std::size_t>(d)] = knots[static_cast<std::size_t>(s + d)] - x;
    double saved = 0.0;
    for (int r = 0; r < d; ++r) {
      const double denom = right[static_cast<std::size_t>(r + 1)] + left[static_cast<std::size_t>(d - r)];
      const double t = denom != 0.0 ? n[static_cast<std::size_t>(r)] / denom : 0.0;
      n[static_cast<std::size_t>(r)] = saved + right[static_cast<std::size_t>(r + 1)] * t;
      saved = left[static_cast<std::size_t>(d - r)] * t;
    }
    n[static_cast<std::size_t>(d)] = saved;
  }
  for (int r = 0; r <= degree; ++r) out[static_cast<std::size_t>(s - degree + r)] = n[static_cast<std::size_t>(r)];
}

}  // namespace detail

/// Fitted characteristic-to-basis map: column centering/scaling and knot
/// placement are learned once, then applied to any rows.
class SieveTransform {
 public:
  static SieveTransform fit(const CharacteristicPanel& chars, const SieveBasisSpec& spec) {
    chars.validate();
    spec.validate();
    SieveTransform t;
    t.spec_ = spec;
    const auto kx = chars.k_x();
    t.center_ = Vector::Zero(kx);
    t.scale_ = Vector::Ones(kx);
    if (spec.standardize) {
      const double p = chars.p();
      for (int j = 0; j < kx; ++j) {
        const auto col = chars.values.col(j);
        const double mean = col.mean();
        const double var = (col.array() - mean).square().sum() / p;
        t.center_(j) = mean;
        t.scale_(j) = var > 0.0 ? std::sqrt(var) : 1.0;
      }
    }
    if (spec.family == SieveFamily::kBSpline) {
      for (int j = 0; j < kx; ++j) {
        std::vector<double> z(static_cast<std::size_t>(chars.p()));
        for (int i = 0; i < chars.p(); ++i)
          z[static_cast<std::size_t>(i)] = (chars.values(i, j) - t.center_(j)) / t.scale_(j);
        std::sort(z.begin(), z.end());
        std::vector<double> knots(static_cast<std::size_t>(spec.degree + 1), z.front());
        for (int k = 1; k <= spec.interior_knots; ++k) {
          const double q = static_cast<double>(k) / (spec.interior_knots + 1);
          const double pos = q * static_cast<double>(z.size() - 1);
          const auto lo = static_cast<std::size_t>(std::floor(pos));
          const auto hi = std::min(lo + 1, z.size() - 1);
          knots.push_back(z[lo] + (pos - static_cast<double>(lo)) * (z[hi] - z[lo]));
        }
        knots.insert(knots.end(), static_cast<std::size_t>(spec.degree + 1), z.back());
        t.knots_.push_back(std::move(knots));
      }
    }
    t.build_labels(kx);
    return t;
  }

  int dim() const noexcept { return static_cast<int>(labels_.size()); }
  const std::vector<std::string>& labels() const noexcept { return labels_; }

  Matrix apply(const MatrixRef& x) const {
    if (x.cols() != center_.size()) throw ConfigError("SieveTransform: characteristic count mismatch");
    Matrix phi(x.rows(), dim());
    std::vector<double> bs;
    for (Eigen::Index i = 0; i < x.rows(); ++i) {
      int c = 0;
      if (spec_.intercept) phi(i, c++) = 1.0;
      for (Eigen::Index j = 0; j < x.cols(); ++j) {
        const double z = (x(i, j) - center_(j)) / scale_(j);
        switch (spec_.family) {
          case SieveFamily::kLinear: phi(i, c++) = z; break;
          case SieveFamily::kPolynomial: {
            double pw = 1.0;
            for (int k = 1; k <= spec_.order; ++k) phi(i, c++) = (pw *= z);
            break;
          }
          case SieveFamily::kBSpline: {
            detail::bspline_values(z, knots_[static_cast<std::size_t>(j)], spec_.degree, bs);
            const std::size_t skip = (spec_.intercept || j > 0) ? 1 : 0;
            for (std::size_t b = skip; b < bs.size(); ++b) phi(i, c++) = bs[b];
            break;
          }
        }
      }
    }
    return phi;
  }

 private:
  void build_labels(int kx) {
    labels_.clear();
    if (spec_.intercept) labels_.emplace_back("1");
    for (int j = 0; j < kx; ++j) {
      const std::string x = "x" + std::to_string(j + 1);
      switch (spec_.family) {
        case SieveFamily::kLinear: labels_.push_back(x); break;
        case SieveFamily::kPolynomial:
          for (int k = 1; k <= spec_.order; ++k) labels_.push_back(k == 1 ? x : x + "^" + std::to_string(k));
          break;
        case SieveFamily::kBSpline: {
          const int nb = spec_.degree + spec_.interior_knots + 1;
          for (int b = (spec_.intercept || j > 0) ? 1 : 0; b < nb; ++b)
            labels_.push_back("bs" + std::to_string(b) + "(" + x + ")");
          break;
        }
      }
    }
  }

  SieveBasisSpec spec_;
  Vector center_, scale_;
  std::vector<std::vector<double>> knots_;
  std::vector<std::string> labels_;
};

/// Cross-sectional projection onto span(Φ). P = Φ(Φ'Φ)⁻¹Φ' is only ever
/// applied, never stored.
class ProjectionOperator {
 public:
  static ProjectionOperator from_basis(Matrix phi, double condition_cap = 1e10,
                                       std::vector<std::string> labels = {}) {
    const auto p = phi.rows();
    const auto j = phi.cols();
    if (j < 1) throw ConfigError("basis has no columns");
    if (p < j) throw ConfigError("basis has more columns (" + std::to_string(j) + ") than rows (" +
                                 std::to_string(p) + ")");
    if (!phi.allFinite()) throw DataError("non-finite basis entry");
    if (labels.empty())
      for (Eigen::Index c = 0; c < j; ++c) labels.push_back("phi" + std::to_string(c + 1));

    Eigen::ColPivHouseholderQR<Matrix> qr(phi);
    qr.setThreshold(1e-10);
    if (qr.rank() < j) {
      std::string names;
      const auto& perm = qr.colsPermutation().indices();
      for (Eigen::Index c = qr.rank(); c < j; ++c) {
        if (!names.empty()) names += ", ";
        names += labels[static_cast<std::size_t>(perm(c))];
      }
      throw SingularMatrixError("rank-deficient sieve basis (rank " + std::to_string(qr.rank()) + " < J=" +
                                    std::to_string(j) + "); dependent columns: " + names,
                                std::numeric_limits<double>::infinity());
    }

    ProjectionOperator op;
    const Matrix gram = phi.transpose() * phi;
    Eigen::SelfAdjointEigenSolver<Matrix> es(gram);
    const Vector& ev = es.eigenvalues();
    op.condition_ = ev(0) > 0.0 ? ev(j - 1) / ev(0) : std::numeric_limits<double>::infinity();
    if (!(op.condition_ <= condition_cap))
      throw SingularMatrixError("basis Gram condition number " + std::to_string(op.condition_) +
                                    " exceeds cap " + std::to_string(condition_cap),
                                op.condition_);
    op.gram_inv_ = es.eigenvectors() * ev.cwiseInverse().asDiagonal() * es.eigenvectors().transpose();
    op.eig_lo_ = ev(0) / static_cast<double>(p);
    op.eig_hi_ = ev(j - 1) / static_cast<double>(p);
    op.phi_ = std::move(phi);
    op.labels_ = std::move(labels);
    if (j * j > p)
      op.warnings_.push_back("J^2 = " + std::to_string(j * j) + " exceeds p = " + std::to_string(p) +
                             "; sieve rate condition J^2 = O(p) is strained");
    return op;
  }

  int p() const noexcept { return static_cast<int>(phi_.rows()); }
  int J() const noexcept { return static_cast<int>(phi_.cols()); }
  const Matrix& phi() const noexcept { return phi_; }
  const Matrix& gram_inv() const noexcept { return gram_inv_; }
  const std::vector<std::string>& labels() const noexcept { return labels_; }
  const std::vector<std::string>& warnings() const noexcept { return warnings_; }
  double condition_number() const noexcept { return condition_; }
  /// Smallest and largest eigenvalue of (1/p)Φ'Φ.
  std::pair<double, double> gram_eigen_bounds() const noexcept { return {eig_lo_, eig_hi_}; }

  Matrix project(const MatrixRef& v) const {
    if (v.rows() != phi_.rows()) throw ConfigError("project: row count does not match p");
    return phi_ * (gram_inv_ * (phi_.transpose() * v));
  }

  /// Column l of P, i.e. (h_{1l}, ..., h_{pl}) / p.
  Vector column(int l) const {
    check_index(l);
    return phi_ * (gram_inv_ * phi_.row(l).transpose());
  }

  double leverage(int l, int m) const {
    check_index(l);
    check_index(m);
    return static_cast<double>(p()) * phi_.row(l).dot(gram_inv_ * phi_.row(m).transpose());
  }

  Vector leverage_column(int l) const { return static_cast<double>(p()) * column(l); }

  Vector leverage_diag() const {
    return static_cast<double>(p()) * (phi_ * gram_inv_).cwiseProduct(phi_).rowwise().sum();
  }

  /// Operator on a subset (or resample) of rows.
  ProjectionOperator rows(std::span<const int> idx, double condition_cap = 1e10) const {
    Matrix sub(static_cast<Eigen::Index>(idx.size()), phi_.cols());
    for (std::size_t r = 0; r < idx.size(); ++r) {
      check_index(idx[r]);
      sub.row(static_cast<Eigen::Index>(r)) = phi_.row(idx[r]);
    }
    return from_basis(std::move(sub), condition_cap, labels_);
  }

  /// max over assets of ||φ_j||² (used by the covariance threshold rate).
  double max_row_norm2() const { return phi_.rowwise().squaredNorm().maxCoeff(); }

 private:
  void check_index(int l) const {
    if (l < 0 || l >= p()) throw ConfigError("asset index " + std::to_string(l) + " out of range");
  }

  Matrix phi_;
  Matrix gram_inv_;
  std::vector<std::string> labels_;
  std::vector<std::string> warnings_;
  double condition_ = 1.0;
  double eig_lo_ = 0.0, eig_hi_ = 0.0;
};

inline ProjectionOperator build_basis(const CharacteristicPanel& chars, const SieveBasisSpec& spec = {}) {
  const auto t = SieveTransform::fit(chars, spec);
  return ProjectionOperator::from_basis(t.apply(chars.values), spec.condition_cap, t.labels());
}

}  // namespace charbeta
