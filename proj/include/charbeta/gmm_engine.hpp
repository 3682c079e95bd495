#pragma once

#include "charbeta/common.hpp"
#include "charbeta/panel_core.hpp"
#include "charbeta/sieve_basis.hpp"

#include <functional>
#include <string>
#include <vector>

namespace charbeta {

/// Moment function Ψ(β, c) that is linear in β. `c` is the K_z×K_z spot
/// covariation of the asset's observables Z; gradients with respect to c
/// are taken entrywise over vec(c) in column-major order.
struct MomentSpec {
  std::string name;
  int K = 1;
  int K_z = 1;
  int K_psi = 1;
  std::function<Vector(const Vector& beta, const Matrix& c)> psi;
  std::function<Matrix(const Matrix& c)> grad_beta;                   // K_psi × K
  std::function<Matrix(const Vector& beta, const Matrix& c)> grad_c;  // K_psi × K_z²

  void validate() const {
    if (K < 1 || K_z < 1 || K_psi < K) throw ConfigError("moment spec '" + name + "': need K_psi >= K >= 1");
    if (!psi || !grad_beta || !grad_c) throw ConfigError("moment spec '" + name + "' is incomplete");
  }
};

/// Z = (Y, F_1..F_K): Ψ = c_FF β − c_FY.
inline MomentSpec linear_regression_moment(int K) {
  if (K < 1) throw ConfigError("linear_regression_moment: K must be >= 1");
  MomentSpec s;
  s.name = "linear_regression";
  s.K = K;
  s.K_z = K + 1;
  s.K_psi = K;
  s.psi = [K](const Vector& beta, const Matrix& c) -> Vector {
    return c.block(1, 1, K, K) * beta - c.block(1, 0, K, 1);
  };
  s.grad_beta = [K](const Matrix& c) -> Matrix { return c.block(1, 1, K, K); };
  s.grad_c = [K](const Vector& beta, const Matrix&) -> Matrix {
    const int kz = K + 1;
    Matrix g = Matrix::Zero(K, kz * kz);
    for (int k = 0; k < K; ++k) {
      g(k, (1 + k) + 0 * kz) = -1.0;
      for (int j = 0; j < K; ++j) g(k, (1 + k) + (1 + j) * kz) = beta(j);
    }
    return g;
  };
  return s;
}

/// Scalar idiosyncratic-variance beta on the first of K_F factors:
/// Ψ = β c_FF1 + c̄ + c_FY' c_FF⁻¹ c_FY − c_YY with Z = (Y, F_1..F_KF).
inline MomentSpec idio_variance_moment(double c_bar, int k_factors = 1) {
  if (k_factors < 1) throw ConfigError("idio_variance_moment: need at least one factor");
  MomentSpec s;
  s.name = "idio_variance";
  s.K = 1;
  s.K_z = k_factors + 1;
  s.K_psi = 1;
  const int kf = k_factors;
  s.psi = [c_bar, kf](const Vector& beta, const Matrix& c) -> Vector {
    const Matrix a = c.block(1, 1, kf, kf);
    const Vector cfy = c.block(1, 0, kf, 1);
    const auto lu = a.fullPivLu();
    if (lu.rank() < kf) throw SingularMatrixError("idio_variance_moment: singular c_FF block", lu.rcond());
    Vector out(1);
    out(0) = beta(0) * c(1, 1) + c_bar + cfy.dot(lu.solve(cfy)) - c(0, 0);
    return out;
  };
  s.grad_beta = [](const Matrix& c) -> Matrix { return Matrix::Constant(1, 1, c(1, 1)); };
  s.grad_c = [kf](const Vector& beta, const Matrix& c) -> Matrix {
    const int kz = kf + 1;
    const Matrix a = c.block(1, 1, kf, kf);
    const Vector cfy = c.block(1, 0, kf, 1);
    const auto lu = a.partialPivLu();
    const Vector right = lu.solve(cfy);                                 // A⁻¹ c
    const Vector left = a.transpose().partialPivLu().solve(cfy);        // A⁻ᵀ c
    Matrix g = Matrix::Zero(1, kz * kz);
    g(0, 0) = -1.0;
    g(0, 1 + 1 * kz) += beta(0);
    for (int i = 0; i < kf; ++i) {
      g(0, (1 + i) + 0 * kz) += right(i) + left(i);
      for (int j = 0; j < kf; ++j) g(0, (1 + i) + (1 + j) * kz) -= left(i) * right(j);
    }
    return g;
  };
  return s;
}

struct GmmSolution {
  Vector beta;
  double objective = 0.0;       // Ψ(β̂)'ΩΨ(β̂)
  double normal_condition = 1;  // condition number of ∇β'Ω∇β
};

/// Closed-form minimizer of Ψ(β, ĉ)'ΩΨ(β, ĉ) over β.
inline GmmSolution gmm_solve_linear(const MomentSpec& spec, const Matrix& c_hat, const Matrix& omega,
                                    double condition_cap = 1e12) {
  if (c_hat.rows() != spec.K_z || c_hat.cols() != spec.K_z)
    throw ConfigError("gmm_solve_linear: c_hat must be K_z x K_z");
  if (omega.rows() != spec.K_psi || omega.cols() != spec.K_psi)
    throw ConfigError("gmm_solve_linear: weight must be K_psi x K_psi");
  const Matrix d = spec.grad_beta(c_hat);
  const Vector psi0 = spec.psi(Vector::Zero(spec.K), c_hat);
  const Matrix dw = d.transpose() * omega;
  const Matrix normal = dw * d;
  GmmSolution sol;
  Eigen::JacobiSVD<Matrix> svd(normal);
  const auto& sv = svd.singularValues();
  sol.normal_condition = sv(sv.size() - 1) > 0.0 ? sv(0) / sv(sv.size() - 1) : std::numeric_limits<double>::infinity();
  if (!(sol.normal_condition <= condition_cap))
    throw SingularMatrixError("GMM normal matrix grad_beta' W grad_beta is singular (condition " +
                                  std::to_string(sol.normal_condition) + ")",
                              sol.normal_condition);
  sol.beta = -normal.partialPivLu().solve(dw * psi0);
  const Vector r = spec.psi(sol.beta, c_hat);
  sol.objective = r.dot(omega * r);
  return sol;
}

/// Sample covariance over the window of vec((1/Δ) ΔZ_i ΔZ_i'), K_z² × K_z².
inline Matrix estimate_v_mt(const MatrixRef& z, double delta_n) {
  const auto kz = z.rows();
  const auto kn = z.cols();
  if (kn < 2) throw ConfigError("estimate_v_mt: need at least two intervals");
  Matrix vecs(kz * kz, kn);
  for (Eigen::Index i = 0; i < kn; ++i) {
    const Matrix outer = z.col(i) * z.col(i).transpose() / delta_n;
    vecs.col(i) = Eigen::Map<const Vector>(outer.data(), kz * kz);
  }
  const Vector mean = vecs.rowwise().mean();
  const Matrix centered = vecs.colwise() - mean;
  return centered * centered.transpose() / static_cast<double>(kn);
}

struct WeightResult {
  Matrix omega;
  bool fell_back = false;
  std::string warning;
};

/// Ω = (∇cΨ V ∇cΨ')⁻¹ evaluated at `beta`; identity when the inner matrix
/// cannot be inverted.
inline WeightResult optimal_weight(const MomentSpec& spec, const Vector& beta, const Matrix& c_hat, const Matrix& v_hat,
                                   double condition_cap = 1e12) {
  const Matrix gc = spec.grad_c(beta, c_hat);
  if (v_hat.rows() != gc.cols() || v_hat.cols() != gc.cols())
    throw ConfigError("optimal_weight: V must be K_z^2 x K_z^2");
  const Matrix inner = gc * v_hat * gc.transpose();
  WeightResult out;
  try {
    out.omega = detail::checked_spd_inverse(0.5 * (inner + inner.transpose()), condition_cap, "optimal-weight inner matrix");
  } catch (const SingularMatrixError& e) {
    out.omega = Matrix::Identity(spec.K_psi, spec.K_psi);
    out.fell_back = true;
    out.warning = std::string(e.what()) + "; using identity weight";
  }
  return out;
}

struct WeightRule {
  enum class Mode { kIdentity, kUser, kOptimal };
  Mode mode = Mode::kIdentity;
  std::function<Matrix(int asset)> user;  // Ω for asset l when mode == kUser
};

struct GmmFit {
  Matrix beta_hat;  // p × K
  Matrix g_hat;
  Matrix gamma_hat;
  std::vector<Matrix> c_hat;  // per-asset K_z × K_z
  Vector objective;           // per-asset minimized criterion
  std::vector<std::string> warnings;
};

using SpecProvider = std::function<const MomentSpec&(int asset)>;

/// Z_l = (ΔY_l; ΔF) stacked per asset, for factor-model moment specs.
inline std::vector<Matrix> stack_asset_observables(const MatrixRef& y, const MatrixRef& f) {
  if (y.cols() != f.cols()) throw ConfigError("stack_asset_observables: window lengths differ");
  std::vector<Matrix> z;
  z.reserve(static_cast<std::size_t>(y.rows()));
  for (Eigen::Index l = 0; l < y.rows(); ++l) {
    Matrix m(f.rows() + 1, f.cols());
    m.row(0) = y.row(l);
    m.bottomRows(f.rows()) = f;
    z.push_back(std::move(m));
  }
  return z;
}

/// Step 1: per-asset GMM on realized covariations of each Z_l window.
inline GmmFit gmm_step1(const SpecProvider& spec_for, const std::vector<Matrix>& z_windows, double delta_n,
                        const WeightRule& rule = {}) {
  const int p = static_cast<int>(z_windows.size());
  if (p < 1) throw ConfigError("gmm_step1: no assets");
  GmmFit fit;
  const int K = spec_for(0).K;
  fit.beta_hat.resize(p, K);
  fit.objective.resize(p);
  fit.c_hat.reserve(static_cast<std::size_t>(p));
  for (int l = 0; l < p; ++l) {
    const MomentSpec& spec = spec_for(l);
    spec.validate();
    if (spec.K != K) throw ConfigError("gmm_step1: every asset's spec must share K");
    const Matrix& z = z_windows[static_cast<std::size_t>(l)];
    if (z.rows() != spec.K_z) throw ConfigError("gmm_step1: Z rows do not match K_z for asset " + std::to_string(l));
    Matrix c = realized_qcov(z, z, delta_n);
    Matrix omega = Matrix::Identity(spec.K_psi, spec.K_psi);
    if (rule.mode == WeightRule::Mode::kUser) {
      omega = rule.user(l);
    } else if (rule.mode == WeightRule::Mode::kOptimal) {
      const GmmSolution prelim = gmm_solve_linear(spec, c, omega);
      auto w = optimal_weight(spec, prelim.beta, c, estimate_v_mt(z, delta_n));
      if (w.fell_back) fit.warnings.push_back("asset " + std::to_string(l) + ": " + w.warning);
      omega = std::move(w.omega);
    }
    const GmmSolution sol = gmm_solve_linear(spec, c, omega);
    fit.beta_hat.row(l) = sol.beta.transpose();
    fit.objective(l) = sol.objective;
    fit.c_hat.push_back(std::move(c));
  }
  return fit;
}

/// Step 2: Ĝ = Pβ̂, Γ̂ = (I−P)β̂.
inline GmmFit two_step_g(GmmFit fit, const ProjectionOperator& op) {
  if (fit.beta_hat.rows() != op.p()) throw ConfigError("two_step_g: asset count does not match the basis");
  fit.g_hat = op.project(fit.beta_hat);
  fit.gamma_hat = fit.beta_hat - fit.g_hat;
  return fit;
}

inline GmmFit estimate_gmm(const SpecProvider& spec_for, const std::vector<Matrix>& z_windows, double delta_n,
                           const ProjectionOperator& op, const WeightRule& rule = {}) {
  return two_step_g(gmm_step1(spec_for, z_windows, delta_n, rule), op);
}

/// Decomposition of ĝ_l − g_l into the first-step term (a), the
/// cross-sectional term (b) = Σ_m P_ml γ_m, and what is left over.
struct ExpansionTerms {
  Vector first_step;     // a; enters with a minus sign
  Vector cross_section;  // b
  Vector sieve_error;    // (P g)_l − g_l
  Vector remainder;      // ĝ_l − g_l − (−a + b + sieve_error)
};

/// Requires true spot covariations and true β = g + γ per asset (simulation only).
inline ExpansionTerms expansion_terms(const SpecProvider& spec_for, const std::vector<Matrix>& c_true,
                                      const std::vector<Matrix>& c_hat, const Matrix& g_true, const Matrix& gamma_true,
                                      const Vector& g_hat_target, const ProjectionOperator& op, int target) {
  const int p = op.p();
  const int K = static_cast<int>(g_true.cols());
  const Vector col = op.column(target);
  ExpansionTerms t;
  t.first_step = Vector::Zero(K);
  for (int m = 0; m < p; ++m) {
    const MomentSpec& spec = spec_for(m);
    const auto sm = static_cast<std::size_t>(m);
    const Vector beta = (g_true.row(m) + gamma_true.row(m)).transpose();
    const Matrix d = spec.grad_beta(c_true[sm]);
    const Matrix a = (d.transpose() * d).partialPivLu().solve(d.transpose());  // identity weight
    const Matrix diff = c_hat[sm] - c_true[sm];
    const Vector dvec = Eigen::Map<const Vector>(diff.data(), diff.size());
    t.first_step += col(m) * (a * (spec.grad_c(beta, c_true[sm]) * dvec));
  }
  t.cross_section = gamma_true.transpose() * col;
  t.sieve_error = g_true.transpose() * col - g_true.row(target).transpose();
  t.remainder = g_hat_target - g_true.row(target).transpose() - (-t.first_step + t.cross_section + t.sieve_error);
  return t;
}

}  // namespace charbeta
