#pragma once

#include "charbeta/common.hpp"
#include "charbeta/panel_core.hpp"

#include <cmath>
#include <optional>
#include <random>
#include <vector>

namespace charbeta {

/// Characteristic-beta function g(x): K outputs of K_x characteristics.
struct GSpec {
  enum class Family { kLinear, kSmooth };
  Family family = Family::kLinear;
  Vector intercept;  // K
  Matrix slope;      // K × K_x

  /// g_k(x) = a_k + Σ_j b_kj x_j (linear) or a_k + Σ_j b_kj sin(x_j) (smooth).
  Vector evaluate(const Eigen::Ref<const Eigen::RowVectorXd>& x) const {
    if (family == Family::kLinear) return intercept + slope * x.transpose();
    return intercept + slope * x.transpose().array().sin().matrix();
  }

  static GSpec standard(int K, int K_x, Family family = Family::kLinear) {
    GSpec g;
    g.family = family;
    g.intercept.resize(K);
    g.slope.resize(K, K_x);
    for (int k = 0; k < K; ++k) {
      g.intercept(k) = k == 0 ? 1.0 : 0.6 / k;
      for (int j = 0; j < K_x; ++j) g.slope(k, j) = ((k + j) % 2 == 0 ? 0.3 : -0.2) / (1.0 + 0.5 * j);
    }
    return g;
  }
};

struct JumpSpec {
  double intensity = 1.0;   // expected jumps per unit time, per series
  double size = 0.01;       // jump magnitude; sign is ±1 with equal odds
  bool on_factors = false;  // also add jumps to the factors
};

/// Contiguous blocks of `size` assets (last block may be shorter).
struct BlockSpec {
  int size = 4;
  double gamma_corr = 0.0;  // within-block correlation of the γ shocks
  double u_corr = 0.0;      // within-block correlation of the idiosyncratic shocks
  double x_share = 0.0;     // share of characteristic variance common to the block
};

/// Idiosyncratic variance σ²_u,lt = b_lt·c_FF,11 + floor with
/// b_lt = intercept + slope'x_lt + gamma_strength·ξ_lt, ξ a unit OU field.
struct IdioVarianceSpec {
  double intercept = 1.0;
  Vector slope;         // K_x; empty means zeros
  double floor = 4e-2;  // the constant c̄ in the moment condition
};

struct DgpConfig {
  int p = 200;
  int n = 78;
  double delta_n = 1.0 / (252.0 * 78.0);
  int K = 2;
  int K_x = 3;
  GSpec g_spec;  // empty means GSpec::standard(K, K_x)
  double gamma_strength = 0.0;
  double gamma_mean_reversion = 5.0;  // κ of the unit OU γ field, per unit time
  double gamma_factor_corr = 0.0;     // correlation of γ shocks with the matching factor shock
  double vol_u = 0.3;
  double vol_u_dispersion = 0.0;      // log-normal dispersion of per-asset vol_u
  Matrix vol_f;                       // K×K; empty means diag(0.2, 0.15, ...)
  double drift_scale = 0.05;
  std::optional<JumpSpec> jump_spec;
  double x_dynamics = 0.1;            // stationary s.d. of the moving characteristic part
  double x_mean_reversion = 2.0;
  int x_refresh = 1;                  // characteristics update every x_refresh intervals
  std::optional<BlockSpec> block_spec;
  std::optional<IdioVarianceSpec> idio_variance;
  std::uint64_t seed = 1;

  Matrix factor_vol() const {
    if (vol_f.size() > 0) return vol_f;
    Matrix v = Matrix::Zero(K, K);
    for (int k = 0; k < K; ++k) v(k, k) = 0.2 - 0.05 * std::min(k, 2);
    return v;
  }
  GSpec g() const { return g_spec.intercept.size() > 0 ? g_spec : GSpec::standard(K, K_x); }

  void validate() const {
    if (K < 1 || K_x < 1) throw ConfigError("DgpConfig: need K >= 1 and K_x >= 1");
    if (p < K + 1) throw ConfigError("DgpConfig: need p >= K + 1");
    if (n < 2) throw ConfigError("DgpConfig: need n >= 2");
    if (!(delta_n > 0.0)) throw ConfigError("DgpConfig: delta_n must be positive");
    if (!(gamma_strength >= 0.0)) throw ConfigError("DgpConfig: gamma_strength must be nonnegative");
    if (!(vol_u >= 0.0) || !(drift_scale >= 0.0) || !(x_dynamics >= 0.0))
      throw ConfigError("DgpConfig: scales must be nonnegative");
    if (gamma_mean_reversion < 0.0 || x_mean_reversion < 0.0) throw ConfigError("DgpConfig: negative mean reversion");
    if (std::abs(gamma_factor_corr) > 1.0) throw ConfigError("DgpConfig: |gamma_factor_corr| must be <= 1");
    if (x_refresh < 1) throw ConfigError("DgpConfig: x_refresh must be >= 1");
    const Matrix vf = factor_vol();
    if (vf.rows() != K || vf.cols() != K) throw ConfigError("DgpConfig: vol_f must be K x K");
    if (!vf.isApprox(vf.transpose(), 1e-12)) throw ConfigError("DgpConfig: vol_f must be symmetric");
    Eigen::SelfAdjointEigenSolver<Matrix> es(vf);
    if (es.eigenvalues().minCoeff() <= 0.0) throw ConfigError("DgpConfig: vol_f must be positive definite");
    const GSpec gs = g();
    if (gs.intercept.size() != K || gs.slope.rows() != K || gs.slope.cols() != K_x)
      throw ConfigError("DgpConfig: g_spec dimensions must be K and K x K_x");
    if (block_spec) {
      if (block_spec->size < 1) throw ConfigError("BlockSpec: size must be >= 1");
      for (double r : {block_spec->gamma_corr, block_spec->u_corr, block_spec->x_share})
        if (r < 0.0 || r > 1.0) throw ConfigError("BlockSpec: correlations and shares must lie in [0, 1]");
    }
    if (jump_spec && (jump_spec->intensity < 0.0)) throw ConfigError("JumpSpec: negative intensity");
    if (idio_variance) {
      if (idio_variance->slope.size() != 0 && idio_variance->slope.size() != K_x)
        throw ConfigError("IdioVarianceSpec: slope must have K_x entries");
      if (!(idio_variance->floor > 0.0)) throw ConfigError("IdioVarianceSpec: floor must be positive");
    }
  }
};

/// Time-indexed arrays hold the value at the start of each interval.
struct SimulatedPanel {
  IncrementPanel y;
  Matrix f;                      // K × n factor increments
  std::vector<Matrix> x;         // n × (p × K_x)
  std::vector<Matrix> g;         // n × (p × K)
  std::vector<Matrix> gamma;     // n × (p × K)
  Matrix cuu;                    // p × p spot idiosyncratic covariance (time 0)
  Matrix jumps;                  // p × n jump part of y (zero without jumps)
  std::vector<Vector> iv_beta;   // n × p idiosyncratic-variance beta (idio_variance only)
  std::vector<Vector> iv_g;      // n × p its characteristic part
  Vector drift;                  // p

  Matrix beta(int i) const { return g[static_cast<std::size_t>(i)] + gamma[static_cast<std::size_t>(i)]; }
};

namespace detail {

inline std::vector<int> block_of(int p, const std::optional<BlockSpec>& bs) {
  std::vector<int> out(static_cast<std::size_t>(p));
  const int size = bs ? bs->size : 1;
  for (int l = 0; l < p; ++l) out[static_cast<std::size_t>(l)] = l / size;
  return out;
}

}  // namespace detail

inline SimulatedPanel simulate_factor_panel(const DgpConfig& cfg) {
  cfg.validate();
  const int p = cfg.p, n = cfg.n, K = cfg.K, kx = cfg.K_x;
  const double dt = cfg.delta_n;
  const double sdt = std::sqrt(dt);
  const GSpec gspec = cfg.g();
  const Matrix vol_f = cfg.factor_vol();
  const auto block = detail::block_of(p, cfg.block_spec);
  const int nblocks = block.back() + 1;
  const double rho_g = cfg.block_spec ? cfg.block_spec->gamma_corr : 0.0;
  const double rho_u = cfg.block_spec ? cfg.block_spec->u_corr : 0.0;
  const double x_share = cfg.block_spec ? cfg.block_spec->x_share : 0.0;
  const double rho_f = cfg.gamma_factor_corr;

  rng::Engine eng = rng::stream(cfg.seed, 0x51D0);
  std::normal_distribution<double> normal;
  auto draw = [&](Eigen::Index rows, Eigen::Index cols) {
    Matrix m(rows, cols);
    for (Eigen::Index j = 0; j < cols; ++j)
      for (Eigen::Index i = 0; i < rows; ++i) m(i, j) = normal(eng);
    return m;
  };
  // mixes common block shocks into individual shocks with correlation rho
  auto blend = [&](const Matrix& ind, const Matrix& common, double rho) {
    Matrix out(ind.rows(), ind.cols());
    const double a = std::sqrt(rho), b = std::sqrt(1.0 - rho);
    for (Eigen::Index l = 0; l < ind.rows(); ++l)
      out.row(l) = a * common.row(block[static_cast<std::size_t>(l)]) + b * ind.row(l);
    return out;
  };

  SimulatedPanel sim;
  // static draws
  sim.drift = cfg.drift_scale * draw(p, 1).col(0);
  const Matrix x_fixed = blend(draw(p, kx), draw(nblocks, kx), x_share);
  Vector sigma_u = Vector::Constant(p, cfg.vol_u);
  {
    const Vector disp = draw(p, 1).col(0);
    if (cfg.vol_u_dispersion > 0.0)
      for (int l = 0; l < p; ++l) sigma_u(l) *= std::exp(cfg.vol_u_dispersion * disp(l) - 0.5 * cfg.vol_u_dispersion * cfg.vol_u_dispersion);
  }
  Matrix x_move = cfg.x_dynamics * draw(p, kx);
  Matrix gamma_unit = blend(draw(p, K), draw(nblocks, K), rho_g);
  Vector xi_unit = draw(p, 1).col(0);

  const double phi_g = std::exp(-cfg.gamma_mean_reversion * dt);
  const double sd_g = std::sqrt(1.0 - phi_g * phi_g);
  const double hx = dt * cfg.x_refresh;
  const double phi_x = std::exp(-cfg.x_mean_reversion * hx);
  const double sd_x = cfg.x_dynamics * std::sqrt(1.0 - phi_x * phi_x);
  const double c_ff11 = (vol_f * vol_f.transpose())(0, 0);
  const IdioVarianceSpec ivs = cfg.idio_variance.value_or(IdioVarianceSpec{});
  const Vector iv_slope = ivs.slope.size() == kx ? ivs.slope : Vector::Zero(kx);

  sim.cuu = Matrix::Zero(p, p);
  for (int l = 0; l < p; ++l)
    for (int m = 0; m < p; ++m) {
      if (l == m) sim.cuu(l, m) = sigma_u(l) * sigma_u(l);
      else if (block[static_cast<std::size_t>(l)] == block[static_cast<std::size_t>(m)])
        sim.cuu(l, m) = rho_u * sigma_u(l) * sigma_u(m);
    }

  Matrix y(p, n);
  sim.f.resize(K, n);
  sim.jumps = Matrix::Zero(p, n);
  sim.x.reserve(static_cast<std::size_t>(n));
  sim.g.reserve(static_cast<std::size_t>(n));
  sim.gamma.reserve(static_cast<std::size_t>(n));
  const double lam = cfg.jump_spec ? cfg.jump_spec->intensity * dt : 0.0;
  std::poisson_distribution<int> poisson(lam > 0.0 ? lam : 1.0);
  std::bernoulli_distribution coin(0.5);

  for (int i = 0; i < n; ++i) {
    if (i > 0 && i % cfg.x_refresh == 0) x_move = phi_x * x_move + sd_x * draw(p, kx);
    Matrix x = x_fixed + x_move;
    Matrix g(p, K);
    for (int l = 0; l < p; ++l) g.row(l) = gspec.evaluate(x.row(l)).transpose();
    Matrix gam = cfg.gamma_strength * gamma_unit;

    // idiosyncratic spot variance for this interval
    Vector var_u = sigma_u.array().square();
    if (cfg.idio_variance) {
      Vector b(p), bg(p);
      for (int l = 0; l < p; ++l) {
        bg(l) = ivs.intercept + iv_slope.dot(x.row(l).transpose());
        b(l) = bg(l) + cfg.gamma_strength * xi_unit(l);
        var_u(l) = std::max(b(l) * c_ff11 + ivs.floor, 1e-4 * ivs.floor);
      }
      sim.iv_beta.push_back(std::move(b));
      sim.iv_g.push_back(std::move(bg));
    }

    const Vector zf = draw(K, 1).col(0);
    Vector df = cfg.drift_scale * dt * Vector::Ones(K) + sdt * (vol_f * zf);
    const Matrix zu = blend(draw(p, 1), draw(nblocks, 1), rho_u);
    Vector du(p);
    for (int l = 0; l < p; ++l) du(l) = std::sqrt(var_u(l)) * sdt * zu(l, 0);

    if (cfg.jump_spec) {
      for (int l = 0; l < p; ++l) {
        const int cnt = poisson(eng);
        for (int c = 0; c < cnt; ++c) sim.jumps(l, i) += coin(eng) ? cfg.jump_spec->size : -cfg.jump_spec->size;
      }
      if (cfg.jump_spec->on_factors)
        for (int k = 0; k < K; ++k) {
          const int cnt = poisson(eng);
          for (int c = 0; c < cnt; ++c) df(k) += coin(eng) ? cfg.jump_spec->size : -cfg.jump_spec->size;
        }
    }

    sim.f.col(i) = df;
    y.col(i) = sim.drift * dt + (g + gam) * df + du + sim.jumps.col(i);

    // advance the unit γ and ξ fields
    Matrix shock = blend(draw(p, K), draw(nblocks, K), rho_g);
    if (rho_f != 0.0)
      for (int k = 0; k < K; ++k)
        shock.col(k) = rho_f * zf(k) * Vector::Ones(p) + std::sqrt(1.0 - rho_f * rho_f) * shock.col(k);
    gamma_unit = phi_g * gamma_unit + sd_g * shock;
    xi_unit = phi_g * xi_unit + sd_g * draw(p, 1).col(0);

    sim.x.push_back(std::move(x));
    sim.g.push_back(std::move(g));
    sim.gamma.push_back(std::move(gam));
  }
  sim.y = IncrementPanel(std::move(y), dt);
  return sim;
}

/// Discrete one-factor panel y_mt = (x_m'θ + γ_m) f_t + u_mt with
/// γ_m = b·γ̄_m, x_m ~ N(0, I), f_t ~ N(0, 1) and u_mt ~ N(0, u_scale²).
struct ToyPanel {
  Matrix y;      // p × T
  Vector f;      // T
  Matrix x;      // p × d
  Vector gamma;  // p
  Matrix u;      // p × T
};

inline ToyPanel simulate_discrete_toy(int p, int T, const Vector& theta, double gamma_strength, std::uint64_t seed,
                                      double u_scale = 1.0) {
  if (p < 2 || T < 2) throw ConfigError("simulate_discrete_toy: need p >= 2 and T >= 2");
  if (theta.size() < 1) throw ConfigError("simulate_discrete_toy: theta must be non-empty");
  rng::Engine eng = rng::stream(seed, 0x70F);
  std::normal_distribution<double> normal;
  ToyPanel t;
  const auto d = theta.size();
  t.x.resize(p, d);
  for (Eigen::Index j = 0; j < d; ++j)
    for (int m = 0; m < p; ++m) t.x(m, j) = normal(eng);
  t.f.resize(T);
  for (int s = 0; s < T; ++s) t.f(s) = normal(eng);
  t.gamma.resize(p);
  for (int m = 0; m < p; ++m) t.gamma(m) = gamma_strength * normal(eng);
  t.u.resize(p, T);
  for (int s = 0; s < T; ++s)
    for (int m = 0; m < p; ++m) t.u(m, s) = u_scale * normal(eng);
  t.y = ((t.x * theta + t.gamma) * t.f.transpose()) + t.u;
  return t;
}

/// The toy estimator and the two pieces of its error θ̂ − θ = a + b.
struct ToyEstimate {
  Vector theta_hat;
  Vector term_a;  // time-series noise piece, from u
  Vector term_b;  // cross-sectional piece, from γ
};

inline ToyEstimate toy_estimate(const ToyPanel& t) {
  const double p = static_cast<double>(t.y.rows());
  const double T = static_cast<double>(t.y.cols());
  const double s_f = t.f.squaredNorm() / T;
  const Matrix s_x = t.x.transpose() * t.x / p;
  const auto lu = s_x.partialPivLu();
  ToyEstimate e;
  e.theta_hat = lu.solve(t.x.transpose() * (t.y * t.f)) / (p * T * s_f);
  e.term_a = lu.solve(t.x.transpose() * (t.u * t.f)) / (p * T * s_f);
  e.term_b = lu.solve(t.x.transpose() * t.gamma) / p;
  return e;
}

}  // namespace charbeta
