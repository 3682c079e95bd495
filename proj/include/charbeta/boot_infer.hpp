#pragma once

#include "charbeta/common.hpp"
#include "charbeta/factor_estim.hpp"
#include "charbeta/gmm_engine.hpp"
#include "charbeta/latent_pca.hpp"
#include "charbeta/sieve_basis.hpp"

#include <boost/math/distributions/normal.hpp>

#include <algorithm>
#include <cmath>
#include <map>
#include <optional>
#include <string>
#include <thread>
#include <vector>

namespace charbeta {

/// Disjoint blocks covering 0..p-1.
struct BlockPartition {
  std::vector<std::vector<int>> blocks;

  static BlockPartition contiguous(int p, int size) {
    if (size < 1) throw ConfigError("block size must be >= 1");
    BlockPartition b;
    for (int s = 0; s < p; s += size) {
      std::vector<int> blk;
      for (int l = s; l < std::min(p, s + size); ++l) blk.push_back(l);
      b.blocks.push_back(std::move(blk));
    }
    return b;
  }

  void validate(int p) const {
    std::vector<int> seen(static_cast<std::size_t>(p), 0);
    for (const auto& blk : blocks) {
      if (blk.empty()) throw ConfigError("block partition contains an empty block");
      for (int l : blk) {
        if (l < 0 || l >= p) throw ConfigError("block partition index out of range");
        if (seen[static_cast<std::size_t>(l)]++) throw ConfigError("block partition blocks overlap");
      }
    }
    for (int c : seen)
      if (c != 1) throw ConfigError("block partition does not cover every asset");
  }

  int block_of(int l) const {
    for (std::size_t h = 0; h < blocks.size(); ++h)
      if (std::find(blocks[h].begin(), blocks[h].end(), l) != blocks[h].end()) return static_cast<int>(h);
    throw ConfigError("asset not found in block partition");
  }
};

struct BootstrapPlan {
  int B = 500;
  int target = 0;
  Vector v;  // K-direction; empty means e_1
  double level = 0.95;
  std::uint64_t seed = 1;
  int max_retries = 100;
  int threads = 1;
  double condition_cap = 1e10;
  std::optional<BlockPartition> partition;  // used by the block bootstrap
  bool keep_draws = false;
  bool keep_indices = false;

  Vector direction(int K) const {
    if (v.size() == 0) {
      Vector e = Vector::Zero(K);
      e(0) = 1.0;
      return e;
    }
    if (v.size() != K) throw ConfigError("plan direction v must have K entries");
    return v;
  }

  void validate(int p) const {
    if (B < 1) throw ConfigError("bootstrap B must be >= 1");
    if (!(level > 0.0 && level < 1.0)) throw ConfigError("bootstrap level must lie in (0, 1)");
    if (target < 0 || target >= p) throw ConfigError("bootstrap target index out of range");
    if (v.size() > 0 && !(v.norm() > 0.0)) throw ConfigError("bootstrap direction v must be nonzero");
    if (max_retries < 0 || threads < 1) throw ConfigError("bootstrap retries/threads out of range");
  }
};

struct ConfidenceInterval {
  double lo = 0.0;
  double hi = 0.0;
  double level = 0.95;
  std::string method;
  double q_tau = 0.0;  // half-width (bootstrap critical value or z·s.e.)
  double point = 0.0;
  int retries = 0;
  std::string note;

  bool contains(double x) const noexcept { return lo <= x && x <= hi; }
  double width() const noexcept { return hi - lo; }
};

struct BootstrapResult {
  ConfidenceInterval ci;
  double estimate = 0.0;                  // uncorrected v'ĝ the draws are centered on
  std::vector<double> draws;              // v'ĝ* per replicate (keep_draws)
  std::vector<std::vector<int>> indices;  // resampled rows per replicate (keep_indices)
};

/// The statistic v'ĝ_target as a function of which rows enter the
/// cross-section. Every supported estimator is of the form
///   Σ_g φ_{g,target}' (Φ*_g'Φ*_g)⁻¹ Σ_j φ_{g,m_j} c_{g,m_j},
/// one term per distinct projection g, with per-asset scalars c_{g,m}
/// that do not change under resampling (first-step fits are never redone).
struct LinearStatistic {
  std::vector<Matrix> phi;   // per group, p × J
  std::vector<Vector> coef;  // per group, p

  int p() const { return static_cast<int>(phi.front().rows()); }

  /// nullopt when some resampled Gram matrix is numerically singular.
  std::optional<double> evaluate(const std::vector<int>& rows, int target_pos, double cap) const {
    double total = 0.0;
    for (std::size_t g = 0; g < phi.size(); ++g) {
      const Matrix& ph = phi[g];
      const Vector& cf = coef[g];
      const auto J = ph.cols();
      Matrix gram = Matrix::Zero(J, J);
      Vector rhs = Vector::Zero(J);
      for (int m : rows) {
        const auto row = ph.row(m).transpose();
        gram.selfadjointView<Eigen::Lower>().rankUpdate(row);
        rhs.noalias() += cf(m) * row;
      }
      Eigen::LLT<Matrix> llt(gram.selfadjointView<Eigen::Lower>());
      if (llt.info() != Eigen::Success || !(llt.rcond() * cap >= 1.0)) return std::nullopt;
      total += ph.row(rows[static_cast<std::size_t>(target_pos)]).dot(llt.solve(rhs));
    }
    return total;
  }

  double original(int target) const {
    std::vector<int> rows(static_cast<std::size_t>(p()));
    for (int l = 0; l < p(); ++l) rows[static_cast<std::size_t>(l)] = l;
    auto v = evaluate(rows, target, std::numeric_limits<double>::infinity());
    if (!v) throw SingularMatrixError("original-sample basis Gram is singular", std::numeric_limits<double>::infinity());
    return *v;
  }
};

namespace detail {

// Draws the resampled row list and the target's position in it.
class Resampler {
 public:
  Resampler(int p, int target, const BlockPartition* partition) : p_(p), target_(target), partition_(partition) {
    if (partition_) {
      partition_->validate(p);
      home_ = partition_->block_of(target);
    }
  }

  int draw(rng::Engine& eng, std::vector<int>& rows) const {
    rows.clear();
    if (!partition_) {
      std::uniform_int_distribution<int> pick(0, p_ - 1);
      for (int j = 0; j < p_; ++j) rows.push_back(j == target_ ? target_ : pick(eng));
      return target_;
    }
    const auto& blocks = partition_->blocks;
    rows.push_back(target_);
    for (int l : blocks[static_cast<std::size_t>(home_)])
      if (l != target_) rows.push_back(l);
    std::uniform_int_distribution<int> pick(0, static_cast<int>(blocks.size()) - 1);
    for (std::size_t h = 1; h < blocks.size(); ++h)
      for (int l : blocks[static_cast<std::size_t>(pick(eng))]) rows.push_back(l);
    return 0;
  }

 private:
  int p_, target_;
  const BlockPartition* partition_;
  int home_ = 0;
};

inline std::size_t order_statistic_index(double level, int B) {
  const double r = std::ceil(level * B - 1e-9);
  return static_cast<std::size_t>(std::clamp(r, 1.0, static_cast<double>(B))) - 1;
}

inline BootstrapResult run_bootstrap(const LinearStatistic& stat, const BootstrapPlan& plan, bool blocks,
                                     const std::string& method, double bias = 0.0) {
  const int p = stat.p();
  plan.validate(p);
  if (blocks && !plan.partition) throw ConfigError("block bootstrap requires a partition");
  const Resampler sampler(p, plan.target, blocks ? &*plan.partition : nullptr);
  const double centre = stat.original(plan.target);

  const auto B = static_cast<std::size_t>(plan.B);
  std::vector<double> draws(B);
  std::vector<int> retries(B, 0);
  std::vector<std::vector<int>> kept(plan.keep_indices ? B : 0);
  auto work = [&](std::size_t lo, std::size_t hi) {
    std::vector<int> rows;
    for (std::size_t b = lo; b < hi; ++b) {
      rng::Engine eng = rng::stream(plan.seed, 0xB007, b);
      for (;;) {
        const int pos = sampler.draw(eng, rows);
        if (auto val = stat.evaluate(rows, pos, plan.condition_cap)) {
          draws[b] = *val;
          break;
        }
        if (++retries[b] > plan.max_retries)
          throw SingularMatrixError("resampled basis stayed rank-deficient after " + std::to_string(plan.max_retries) +
                                        " redraws",
                                    std::numeric_limits<double>::infinity());
      }
      if (plan.keep_indices) kept[b] = rows;
    }
  };
  const auto nthreads = static_cast<std::size_t>(std::min<int>(plan.threads, plan.B));
  if (nthreads <= 1) {
    work(0, B);
  } else {
    std::vector<std::thread> pool;
    std::vector<std::exception_ptr> errors(nthreads);
    for (std::size_t t = 0; t < nthreads; ++t)
      pool.emplace_back([&, t] {
        try {
          work(B * t / nthreads, B * (t + 1) / nthreads);
        } catch (...) {
          errors[t] = std::current_exception();
        }
      });
    for (auto& th : pool) th.join();
    for (auto& e : errors)
      if (e) std::rethrow_exception(e);
  }

  std::vector<double> dev(B);
  for (std::size_t b = 0; b < B; ++b) dev[b] = std::abs(draws[b] - centre);
  const auto k = order_statistic_index(plan.level, plan.B);
  std::nth_element(dev.begin(), dev.begin() + static_cast<std::ptrdiff_t>(k), dev.end());

  BootstrapResult res;
  res.estimate = centre;
  res.ci.method = method;
  res.ci.level = plan.level;
  res.ci.q_tau = dev[k];
  res.ci.point = centre - bias;
  res.ci.lo = res.ci.point - res.ci.q_tau;
  res.ci.hi = res.ci.point + res.ci.q_tau;
  for (int r : retries) res.ci.retries += r;
  if (plan.keep_draws) res.draws = std::move(draws);
  if (plan.keep_indices) res.indices = std::move(kept);
  return res;
}

}  // namespace detail

/// One window of a known-factor panel: y is p×k_n, f is K×k_n.
struct KnownFactorWindow {
  Matrix y;
  Matrix f;
  double delta_n = 1.0;
};

/// One window with estimated factors; `bias` (K) is subtracted from the
/// reported point (zero vector or empty for no correction).
struct LatentWindow {
  Matrix y;
  Matrix f_hat;  // k_n × K
  double delta_n = 1.0;
  Vector bias;
};

inline LinearStatistic spot_statistic(const ProjectionOperator& op, const Matrix& beta_hat, const Vector& v) {
  if (beta_hat.rows() != op.p()) throw ConfigError("bootstrap: coefficient rows do not match the basis");
  return LinearStatistic{{op.phi()}, {beta_hat * v}};
}

inline LinearStatistic known_statistic(const KnownFactorWindow& w, const ProjectionOperator& op, const Vector& v) {
  return spot_statistic(op, estimate_beta_known(w.y, w.f, w.delta_n).beta_hat, v);
}

inline LinearStatistic latent_statistic(const LatentWindow& w, const ProjectionOperator& op, const Vector& v) {
  return spot_statistic(op, estimate_g_latent(w.y, w.f_hat, op, w.delta_n).beta_hat, v);
}

namespace detail {
inline double latent_bias(const LatentWindow& w, const Vector& v) {
  if (w.bias.size() == 0) return 0.0;
  if (w.bias.size() != v.size()) throw ConfigError("latent bias must have K entries");
  return v.dot(w.bias);
}
}  // namespace detail

/// Independent cross-sectional bootstrap with the target row pinned.
inline BootstrapResult cs_bootstrap_ci(const KnownFactorWindow& w, const ProjectionOperator& op,
                                       const BootstrapPlan& plan) {
  const Vector v = plan.direction(static_cast<int>(w.f.rows()));
  return detail::run_bootstrap(known_statistic(w, op, v), plan, false, "cs_bootstrap");
}

inline BootstrapResult cs_bootstrap_ci(const LatentWindow& w, const ProjectionOperator& op, const BootstrapPlan& plan) {
  const Vector v = plan.direction(static_cast<int>(w.f_hat.cols()));
  return detail::run_bootstrap(latent_statistic(w, op, v), plan, false, "cs_bootstrap", detail::latent_bias(w, v));
}

/// Block bootstrap: the target's block is kept, the other H−1 blocks are
/// drawn with replacement.
inline BootstrapResult block_bootstrap_ci(const KnownFactorWindow& w, const ProjectionOperator& op,
                                          const BootstrapPlan& plan) {
  const Vector v = plan.direction(static_cast<int>(w.f.rows()));
  return detail::run_bootstrap(known_statistic(w, op, v), plan, true, "block_bootstrap");
}

inline BootstrapResult block_bootstrap_ci(const LatentWindow& w, const ProjectionOperator& op,
                                          const BootstrapPlan& plan) {
  const Vector v = plan.direction(static_cast<int>(w.f_hat.cols()));
  return detail::run_bootstrap(latent_statistic(w, op, v), plan, true, "block_bootstrap", detail::latent_bias(w, v));
}

/// Resamples (β̂_m, φ_m) pairs of a GMM fit; first-step fits are reused.
inline BootstrapResult gmm_bootstrap_ci(const GmmFit& fit, const ProjectionOperator& op, const BootstrapPlan& plan) {
  const Vector v = plan.direction(static_cast<int>(fit.beta_hat.cols()));
  return detail::run_bootstrap(spot_statistic(op, fit.beta_hat, v), plan, plan.partition.has_value(), "gmm_bootstrap");
}

/// Statistic of the integrated estimator: windows sharing an operator are
/// pooled so each resample costs one Gram solve per distinct operator.
inline LinearStatistic integrated_statistic(const IncrementPanel& panel, const MatrixRef& factors,
                                            const OperatorSchedule& ops, int k_n, const Vector& v, EdgeRule edge) {
  const int n = panel.n();
  if (n <= k_n) throw ConfigError("integrated bootstrap: need n > k_n");
  const int count = n - k_n + 1;
  if (static_cast<int>(ops.size()) != count) throw ConfigError("integrated bootstrap: one operator per window required");
  const RollingBetas rb(panel.data(), factors, k_n);
  const Vector weights = window_weights(n, k_n, panel.delta_n(), edge);
  std::map<const ProjectionOperator*, std::size_t> slot;
  LinearStatistic stat;
  for (int w = 0; w < count; ++w) {
    const ProjectionOperator* op = ops[static_cast<std::size_t>(w)].get();
    if (op->p() != panel.p()) throw ConfigError("integrated bootstrap: operator size does not match p");
    auto [it, fresh] = slot.try_emplace(op, stat.phi.size());
    if (fresh) {
      stat.phi.push_back(op->phi());
      stat.coef.push_back(Vector::Zero(panel.p()));
    }
    stat.coef[it->second] += weights(w) * (rb.beta(w) * v);
  }
  return stat;
}

inline BootstrapResult integrated_bootstrap_ci(const IncrementPanel& panel, const MatrixRef& factors,
                                               const OperatorSchedule& ops, int k_n, const BootstrapPlan& plan,
                                               EdgeRule edge = EdgeRule::kExtendLast) {
  const Vector v = plan.direction(static_cast<int>(factors.rows()));
  return detail::run_bootstrap(integrated_statistic(panel, factors, ops, k_n, v, edge), plan, false, "integrated");
}

/// Full bootstrap law for tiny p: every row tuple with the target pinned.
struct ExactBootstrapLaw {
  std::vector<std::vector<int>> atoms;  // resampled rows
  std::vector<double> values;           // v'ĝ* per atom
  std::vector<double> probability;      // renormalized over usable atoms
  int rank_deficient = 0;               // atoms dropped for singular Gram

  double mean() const {
    double m = 0.0;
    for (std::size_t a = 0; a < values.size(); ++a) m += probability[a] * values[a];
    return m;
  }
  double variance() const {
    const double m = mean();
    double s = 0.0;
    for (std::size_t a = 0; a < values.size(); ++a) s += probability[a] * (values[a] - m) * (values[a] - m);
    return s;
  }
};

inline ExactBootstrapLaw exact_bootstrap_law(const LinearStatistic& stat, int target, double cap = 1e10) {
  const int p = stat.p();
  if (target < 0 || target >= p) throw ConfigError("exact_bootstrap_law: target out of range");
  double total = 1.0;
  for (int j = 1; j < p; ++j) total *= p;
  if (total > 2e6) throw ConfigError("exact_bootstrap_law: p^(p-1) atoms is too many to enumerate");
  ExactBootstrapLaw law;
  std::vector<int> free(static_cast<std::size_t>(p - 1), 0);
  for (;;) {
    std::vector<int> rows;
    for (int j = 0, f = 0; j < p; ++j) rows.push_back(j == target ? target : free[static_cast<std::size_t>(f++)]);
    if (auto val = stat.evaluate(rows, target, cap)) {
      law.atoms.push_back(rows);
      law.values.push_back(*val);
    } else {
      ++law.rank_deficient;
    }
    std::size_t d = 0;
    while (d < free.size() && ++free[d] == p) free[d++] = 0;
    if (d == free.size()) break;
  }
  law.probability.assign(law.values.size(), 1.0 / static_cast<double>(law.values.size()));
  return law;
}

namespace detail {

// (1/(k_n p)) v'V̂_u v from residual cross terms.
inline double naive_variance(const BetaDecomposition& d, const KnownFactorWindow& w, const ProjectionOperator& op,
                             int target, const Vector& v) {
  const Matrix resid = w.y - d.beta_hat * w.f;  // p × k_n
  const double kn = static_cast<double>(w.y.cols());
  const double p = static_cast<double>(op.p());
  const Matrix ff = w.f * w.f.transpose() / (kn * w.delta_n);
  const Vector h = op.leverage_column(target);
  const Eigen::RowVectorXd weighted = h.transpose() * resid;  // Σ_m h_ml ΔÛ_m,i per interval
  Matrix s = Matrix::Zero(w.f.rows(), w.f.rows());
  for (Eigen::Index i = 0; i < w.f.cols(); ++i) {
    const Vector zeta = w.f.col(i) * weighted(i) / (w.delta_n * std::sqrt(p));
    s.noalias() += zeta * zeta.transpose();
  }
  s /= kn;
  const Vector a = ff.ldlt().solve(v);
  return a.dot(s * a) / (kn * p);
}

inline ConfidenceInterval normal_interval(double point, double var, double level, std::string method) {
  boost::math::normal_distribution<double> z;
  ConfidenceInterval ci;
  ci.method = std::move(method);
  ci.level = level;
  ci.point = point;
  ci.q_tau = boost::math::quantile(z, 0.5 + level / 2.0) * std::sqrt(std::max(var, 0.0));
  ci.lo = point - ci.q_tau;
  ci.hi = point + ci.q_tau;
  return ci;
}

}  // namespace detail

/// Normal interval using the time-series variance term only.
inline ConfidenceInterval plugin_ci_naive(const BetaDecomposition& d, const KnownFactorWindow& w,
                                          const ProjectionOperator& op, const BootstrapPlan& plan) {
  plan.validate(op.p());
  const Vector v = plan.direction(static_cast<int>(w.f.rows()));
  const double point = v.dot(d.g_hat.row(plan.target).transpose());
  return detail::normal_interval(point, detail::naive_variance(d, w, op, plan.target, v), plan.level, "plugin_naive");
}

/// Normal interval adding the White-type cross-sectional term
/// Σ_m (h_ml/p)² (v'γ̂_m)².
inline ConfidenceInterval plugin_ci_full(const BetaDecomposition& d, const KnownFactorWindow& w,
                                         const ProjectionOperator& op, const BootstrapPlan& plan) {
  plan.validate(op.p());
  const Vector v = plan.direction(static_cast<int>(w.f.rows()));
  const double point = v.dot(d.g_hat.row(plan.target).transpose());
  const Vector col = op.column(plan.target);
  const Vector gv = d.gamma_hat * v;
  const double var_gamma = col.cwiseProduct(gv).squaredNorm();
  auto ci = detail::normal_interval(point, detail::naive_variance(d, w, op, plan.target, v) + var_gamma, plan.level,
                                    "plugin_full");
  if (var_gamma == 0.0) ci.note = "cross-sectional variance term is exactly zero";
  return ci;
}

}  // namespace charbeta
