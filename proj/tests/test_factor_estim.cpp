#include "charbeta/dgp_sim.hpp"
#include "charbeta/factor_estim.hpp"

#include <gtest/gtest.h>

#include <random>

using namespace charbeta;

namespace {

Matrix gaussian(Eigen::Index rows, Eigen::Index cols, double scale, std::uint64_t seed) {
  rng::Engine eng = rng::stream(seed, 3);
  std::normal_distribution<double> z;
  Matrix m(rows, cols);
  for (Eigen::Index j = 0; j < cols; ++j)
    for (Eigen::Index i = 0; i < rows; ++i) m(i, j) = scale * z(eng);
  return m;
}

double r_squared(const Vector& fit, const Vector& truth) {
  const double ss = (truth.array() - truth.mean()).square().sum();
  return 1.0 - (truth - fit).squaredNorm() / ss;
}

}  // namespace

TEST(EstimateBetaKnown, ExactLinearData) {
  const Matrix b = gaussian(10, 3, 1.0, 1);
  const Matrix f = gaussian(3, 30, 0.01, 2);
  const auto fit = estimate_beta_known(b * f, f, 0.001);
  EXPECT_LT((fit.beta_hat - b).cwiseAbs().maxCoeff(), 1e-12);
  EXPECT_LT((fit.ff_qv - f * f.transpose() / (30 * 0.001)).norm(), 1e-14);
}

TEST(EstimateBetaKnown, TinyHandCase) {
  Matrix y(1, 2), f(1, 2);
  y << 0.3, -0.1;
  f << 0.2, 0.5;
  const double expect = (0.3 * 0.2 + -0.1 * 0.5) / (0.2 * 0.2 + 0.5 * 0.5);
  EXPECT_NEAR(estimate_beta_known(y, f, 1.0).beta_hat(0, 0), expect, 1e-15);
}

TEST(EstimateBetaKnown, SingularFactorsReported) {
  Matrix f = gaussian(2, 10, 1.0, 3);
  f.row(1) = 2.0 * f.row(0);
  try {
    estimate_beta_known(gaussian(4, 10, 1.0, 4), f, 1.0);
    FAIL() << "expected SingularMatrixError";
  } catch (const SingularMatrixError& e) {
    EXPECT_GT(e.condition(), 1e12);
  }
  EXPECT_THROW(estimate_beta_known(gaussian(4, 1, 1.0, 5), gaussian(2, 1, 1.0, 6), 1.0), ConfigError);
}

TEST(EstimateBetaKnown, FactorRotationEquivariance) {
  const Matrix y = gaussian(8, 40, 1.0, 7), f = gaussian(2, 40, 1.0, 8);
  Matrix a(2, 2);
  a << 2.0, 0.5, -1.0, 1.5;
  const Matrix b1 = estimate_beta_known(y, f, 1.0).beta_hat;
  const Matrix b2 = estimate_beta_known(y, a * f, 1.0).beta_hat;
  EXPECT_LT((b2 - b1 * a.inverse()).norm(), 1e-8);
  EXPECT_LT((b2 * (a * f) - b1 * f).norm(), 1e-8);
}

TEST(EstimateBetaKnown, RmseShrinksAtRootKn) {
  DgpConfig cfg;
  cfg.p = 20;
  cfg.n = 156;
  cfg.x_dynamics = 0.0;  // constant betas, so only sampling error remains
  cfg.drift_scale = 0.0;
  const std::vector<int> kns{39, 78, 156};
  std::vector<double> mse(3, 0.0);
  for (std::uint64_t s = 0; s < 1000; ++s) {
    cfg.seed = 500 + s;
    const auto sim = simulate_factor_panel(cfg);
    for (std::size_t k = 0; k < kns.size(); ++k) {
      const LocalWindow w{1, kns[k]};
      const Matrix b = estimate_beta_known(w.slice(sim.y.data()), w.slice(sim.f), cfg.delta_n).beta_hat;
      mse[k] += (b - sim.beta(0)).squaredNorm();
    }
  }
  // Least-squares slope of log RMSE on log k_n.
  double sx = 0, sy = 0, sxx = 0, sxy = 0;
  for (std::size_t k = 0; k < 3; ++k) {
    const double x = std::log(kns[k]), y = 0.5 * std::log(mse[k]);
    sx += x, sy += y, sxx += x * x, sxy += x * y;
  }
  const double slope = (3 * sxy - sx * sy) / (3 * sxx - sx * sx);
  EXPECT_NEAR(slope, -0.5, 0.1);
}

TEST(SplitCharacteristic, SpanAndOrthogonalInputs) {
  const auto op = build_basis(CharacteristicPanel{gaussian(40, 2, 1.0, 9)});
  const Matrix in_span = op.phi() * gaussian(op.J(), 2, 1.0, 10);
  const auto d1 = split_characteristic(in_span, op);
  EXPECT_LT(d1.gamma_hat.norm(), 1e-10);
  EXPECT_LT((d1.g_hat - in_span).norm(), 1e-10);
  const Matrix raw = gaussian(40, 2, 1.0, 11);
  const Matrix orth = raw - op.project(raw);
  EXPECT_LT(split_characteristic(orth, op).g_hat.norm(), 1e-10);
}

TEST(SplitCharacteristic, DecompositionIdentityAndOrthogonality) {
  const auto op = build_basis(CharacteristicPanel{gaussian(60, 3, 1.0, 12)}, SieveBasisSpec::polynomial(2));
  const Matrix beta = gaussian(60, 2, 1.0, 13);
  const auto d = split_characteristic(beta, op);
  EXPECT_LE((d.g_hat + d.gamma_hat - beta).cwiseAbs().maxCoeff(), 1e-12);
  EXPECT_LT((op.phi().transpose() * d.gamma_hat).cwiseAbs().maxCoeff(), 1e-8);
  EXPECT_THROW(split_characteristic(gaussian(59, 2, 1.0, 14), op), ConfigError);
}

TEST(SplitCharacteristic, ProjectionDenoisesTowardG) {
  DgpConfig cfg;
  cfg.p = 200;
  cfg.gamma_strength = 1.0;
  int wins = 0;
  for (std::uint64_t s = 0; s < 200; ++s) {
    cfg.seed = 900 + s;
    const auto sim = simulate_factor_panel(cfg);
    const auto op = build_basis(CharacteristicPanel{sim.x[0]});
    const auto d = estimate_known_window(sim.y, sim.f, {1, cfg.n}, op);
    const double r2_g = r_squared(d.g_hat.col(0), sim.g[0].col(0));
    const double r2_b = r_squared(d.beta_hat.col(0), sim.g[0].col(0));
    wins += r2_g > r2_b;
  }
  EXPECT_EQ(wins, 200);
}

TEST(IntegratedG, ConstantNoiseFree) {
  const int p = 30, n = 120, k_n = 20;
  const double dt = 1.0 / 120.0;
  const Matrix x = gaussian(p, 2, 1.0, 15);
  const auto op = std::make_shared<const ProjectionOperator>(build_basis(CharacteristicPanel{x}));
  Matrix g(p, 2);  // linear in the characteristics, so inside the sieve span
  g.col(0) = (1.0 + 0.3 * x.col(0).array()).matrix();
  g.col(1) = (0.5 - 0.2 * x.col(1).array()).matrix();
  const Matrix f = gaussian(2, n, std::sqrt(dt), 16);
  const IncrementPanel y(g * f, dt);
  const OperatorSchedule ops(static_cast<std::size_t>(n - k_n + 1), op);
  const auto out = integrated_g(y, f, ops, k_n, 4);
  EXPECT_LT((out.value - n * dt * g.row(4).transpose()).norm(), 1e-10);
  EXPECT_EQ(out.windows_used, n - k_n + 1);
  // The literal window sum covers only (n - k_n + 1) intervals.
  const auto lit = integrated_g(y, f, ops, k_n, 4, EdgeRule::kWindowsOnly);
  EXPECT_LT((lit.value - (n - k_n + 1) * dt * g.row(4).transpose()).norm(), 1e-10);
  EXPECT_THROW(integrated_g(y, f, OperatorSchedule(3, op), k_n, 4), ConfigError);
  EXPECT_THROW(integrated_g(y, f, ops, n, 4), ConfigError);
}

namespace {

// Common beta a + b·t for every asset, one factor, optional noise. Returns the
// mean estimation error of ∫g dt over `seeds` panels.
double linear_in_time_bias(int n, int k_n, double noise, int seeds, double T = 1.0) {
  const int p = 30;
  const double dt = T / n, a = 1.0, b = 2.0;
  const auto op = std::make_shared<const ProjectionOperator>(build_basis(CharacteristicPanel{gaussian(p, 1, 1.0, 17)}));
  const OperatorSchedule ops(static_cast<std::size_t>(n - k_n + 1), op);
  double err = 0.0;
  for (int s = 0; s < seeds; ++s) {
    const Matrix f = gaussian(1, n, 0.2 * std::sqrt(dt), 2000 + static_cast<std::uint64_t>(s));
    Matrix y = noise * std::sqrt(dt) * gaussian(p, n, 1.0, 7000 + static_cast<std::uint64_t>(s));
    for (int i = 0; i < n; ++i) y.col(i).array() += (a + b * i * dt) * f(0, i);
    const auto out = integrated_g(IncrementPanel(y, dt), f, ops, k_n, 0);
    err += out.value(0) - (a * T + b * T * T / 2.0);
  }
  return err / seeds;
}

}  // namespace

TEST(IntegratedG, LinearInTimeWithinEdgeBound) {
  const int n = 200, k_n = 20;
  const double bias = linear_in_time_bias(n, k_n, 0.0, 1);
  const double h = static_cast<double>(k_n) / n;
  EXPECT_LE(std::abs(bias), h * 3.0);  // k_nΔ·max|g|
  // Without noise each window's β̂ is the ΔF²-weighted average of g over the
  // window; the last window is extended to the end of the span.
  const double dt = 1.0 / n;
  const Matrix f = gaussian(1, n, 0.2 * std::sqrt(dt), 2000);
  double closed = 0.0;
  for (int w = 0; w <= n - k_n; ++w) {
    double num = 0.0, den = 0.0;
    for (int i = w; i < w + k_n; ++i) {
      num += (1.0 + 2.0 * i * dt) * f(0, i) * f(0, i);
      den += f(0, i) * f(0, i);
    }
    const double avg = num / den;
    closed += (w == n - k_n ? k_n : 1) * dt * avg;
  }
  EXPECT_NEAR(bias, closed - 2.0, 1e-9);
}

TEST(IntegratedG, BiasHalvesWithInterval) {
  const double b1 = linear_in_time_bias(200, 20, 0.05, 500);
  const double b2 = linear_in_time_bias(400, 20, 0.05, 500);
  EXPECT_GT(b1, 0.0);
  EXPECT_NEAR(b2 / b1, 0.5, 0.1);
}

TEST(RollingBetas, MatchesDirectFits) {
  const Matrix y = gaussian(5, 50, 1.0, 18), f = gaussian(2, 50, 1.0, 19);
  const RollingBetas rb(y, f, 10);
  EXPECT_EQ(rb.window_count(), 41);
  for (int w : {0, 17, 40})
    EXPECT_LT((rb.beta(w) - estimate_beta_known(y.middleCols(w, 10), f.middleCols(w, 10), 1.0).beta_hat).norm(),
              1e-10);
}

TEST(WindowWeights, SumToSpanUnderExtension) {
  EXPECT_NEAR(window_weights(390, 78, 0.01, EdgeRule::kExtendLast).sum(), 3.9, 1e-12);
  EXPECT_NEAR(window_weights(390, 78, 0.01, EdgeRule::kWindowsOnly).sum(), 3.13, 1e-12);
}
