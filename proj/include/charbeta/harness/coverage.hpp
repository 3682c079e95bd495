#pragma once

#include "charbeta/boot_infer.hpp"
#include "charbeta/dgp_sim.hpp"
#include "charbeta/factor_estim.hpp"
#include "charbeta/gmm_engine.hpp"
#include "charbeta/harness/config.hpp"
#include "charbeta/latent_pca.hpp"

#include "json.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <fstream>
#include <limits>
#include <memory>
#include <thread>
#include <vector>

namespace charbeta {

/// Outcome of one method on one simulated trial.
struct TrialOutcome {
  bool covered = false;
  double width = 0.0;
  double error = 0.0;      // reported point − truth
  double raw_error = 0.0;  // uncorrected estimate − truth (differs only with bias correction)
  double seconds = 0.0;
};

struct CoverageCell {
  std::string method;
  double gamma_strength = 0.0;
  std::string gamma_label;
  int trials = 0;
  int hits = 0;
  double coverage = 0.0;
  double miss_rate = 0.0;
  double mc_se = 0.0;
  double median_width = 0.0;
  double mean_bias = 0.0;
  double rmse = 0.0;
  double mean_raw_bias = 0.0;
  double runtime_sec = 0.0;
};

struct CoverageReport {
  std::vector<CoverageCell> cells;

  const CoverageCell& at(Method m, std::size_t strength_index) const {
    std::size_t seen = 0;
    for (const auto& c : cells)
      if (c.method == to_string(m) && seen++ == strength_index) return c;
    throw ConfigError(std::string("no report cell for ") + to_string(m));
  }
};

namespace detail {

inline CoverageCell summarize(std::string method, double strength, std::string label,
                              const std::vector<TrialOutcome>& outcomes) {
  CoverageCell c;
  c.method = std::move(method);
  c.gamma_strength = strength;
  c.gamma_label = std::move(label);
  c.trials = static_cast<int>(outcomes.size());
  std::vector<double> widths;
  double se2 = 0.0;
  for (const auto& o : outcomes) {
    c.hits += o.covered ? 1 : 0;
    widths.push_back(o.width);
    c.mean_bias += o.error;
    c.mean_raw_bias += o.raw_error;
    se2 += o.error * o.error;
    c.runtime_sec += o.seconds;
  }
  const double t = static_cast<double>(c.trials);
  c.coverage = c.hits / t;
  c.miss_rate = static_cast<double>(c.trials - c.hits) / t;
  c.mc_se = std::sqrt(c.coverage * (1.0 - c.coverage) / t);
  c.mean_bias /= t;
  c.mean_raw_bias /= t;
  c.rmse = std::sqrt(se2 / t);
  std::sort(widths.begin(), widths.end());
  const auto m = widths.size();
  c.median_width = m % 2 ? widths[m / 2] : 0.5 * (widths[m / 2 - 1] + widths[m / 2]);
  return c;
}

inline Vector direction_for(const ExperimentConfig& cfg) {
  const int K = cfg.gmm_moment == GmmMoment::kIdioVariance ? 1 : cfg.dgp.K;
  if (cfg.v.size() == K) return cfg.v;
  Vector e = Vector::Zero(K);
  e(0) = 1.0;
  return e;
}

inline OperatorSchedule window_operators(const SimulatedPanel& sim, int k_n, const SieveBasisSpec& spec) {
  const int count = sim.y.n() - k_n + 1;
  OperatorSchedule ops;
  ops.reserve(static_cast<std::size_t>(count));
  for (int w = 0; w < count; ++w) {
    const auto& x = sim.x[static_cast<std::size_t>(w)];
    if (w > 0 && x == sim.x[static_cast<std::size_t>(w - 1)]) {
      ops.push_back(ops.back());
    } else {
      ops.push_back(std::make_shared<const ProjectionOperator>(build_basis(CharacteristicPanel{x}, spec)));
    }
  }
  return ops;
}

/// One simulated trial at one strength, every configured method.
inline std::vector<TrialOutcome> run_trial(const ExperimentConfig& cfg, double strength, int trial) {
  using clock = std::chrono::steady_clock;
  DgpConfig dgp = cfg.dgp;
  dgp.gamma_strength = strength;
  dgp.seed = rng::derive(cfg.seed, 0xD6, static_cast<std::uint64_t>(trial));
  const SimulatedPanel sim = simulate_factor_panel(dgp);

  const LocalWindow win{cfg.window_start, cfg.k_n};
  const int anchor = win.first();
  const ProjectionOperator op = build_basis(CharacteristicPanel{sim.x[static_cast<std::size_t>(anchor)]}, cfg.basis);
  const Matrix y = win.slice(sim.y.data());
  const Matrix f = win.slice(sim.f);
  const Vector v = direction_for(cfg);
  const int l = cfg.target;

  BootstrapPlan plan;
  plan.B = cfg.B;
  plan.target = l;
  plan.v = v;
  plan.level = cfg.level;
  plan.seed = rng::derive(cfg.seed, 0xB5, static_cast<std::uint64_t>(trial));
  const int bs = cfg.effective_block_size();
  if (bs > 1) plan.partition = BlockPartition::contiguous(dgp.p, bs);

  std::vector<TrialOutcome> out;
  out.reserve(cfg.methods.size());
  auto finish = [&](const ConfidenceInterval& ci, double truth, double raw, clock::time_point t0) {
    TrialOutcome o;
    o.covered = ci.contains(truth);
    o.width = ci.width();
    o.error = ci.point - truth;
    o.raw_error = raw - truth;
    o.seconds = std::chrono::duration<double>(clock::now() - t0).count();
    out.push_back(o);
  };

  if (cfg.factor_mode == FactorMode::kLatent) {
    const auto t0 = clock::now();
    const auto pca = projected_pca(y, op, dgp.K, dgp.delta_n, cfg.sign);
    const auto load = estimate_g_latent(y, pca.f_hat, op, dgp.delta_n);
    const auto rot = align_rotation(pca.f_hat, f.transpose(), dgp.delta_n);
    const double truth = v.dot(rot.loading_rotation * sim.g[static_cast<std::size_t>(anchor)].row(l).transpose());
    Vector bias = Vector::Zero(dgp.K);
    if (cfg.bias_correction != BiasCorrection::kNone) {
      const Matrix resid = latent_residuals(y, pca.f_hat, load.beta_hat);
      if (cfg.bias_correction == BiasCorrection::kCase1) {
        bias = bias_case1(resid, pca.v_hat, load.g_hat, op, l, dgp.delta_n);
      } else {
        const auto cov = threshold_covariance(resid, dgp.delta_n, op, cfg.c_bar, cfg.threshold);
        bias = bias_case2(cov, pca.v_hat, load.g_hat, op, l);
      }
    }
    const double setup = std::chrono::duration<double>(clock::now() - t0).count();
    const LatentWindow lw{y, pca.f_hat, dgp.delta_n, bias};
    const double raw = v.dot(load.g_hat.row(l).transpose());
    for (Method m : cfg.methods) {
      const auto t1 = clock::now();
      const auto res = m == Method::kBlockBootstrap ? block_bootstrap_ci(lw, op, plan) : cs_bootstrap_ci(lw, op, plan);
      finish(res.ci, truth, raw, t1);
      out.back().seconds += setup;
    }
    return out;
  }

  const KnownFactorWindow kw{y, f, dgp.delta_n};
  const double truth_g = v.dot(sim.g[static_cast<std::size_t>(anchor)].row(l).transpose());
  for (Method m : cfg.methods) {
    const auto t0 = clock::now();
    switch (m) {
      case Method::kCsBootstrap:
      case Method::kBlockBootstrap: {
        const auto res = m == Method::kCsBootstrap ? cs_bootstrap_ci(kw, op, plan) : block_bootstrap_ci(kw, op, plan);
        finish(res.ci, truth_g, res.ci.point, t0);
        break;
      }
      case Method::kGmmBootstrap: {
        if (cfg.gmm_moment == GmmMoment::kLinearRegression) {
          const MomentSpec spec = linear_regression_moment(dgp.K);
          const auto fit = estimate_gmm([&](int) -> const MomentSpec& { return spec; },
                                        stack_asset_observables(y, f), dgp.delta_n, op);
          BootstrapPlan p2 = plan;
          p2.partition.reset();
          const auto res = gmm_bootstrap_ci(fit, op, p2);
          finish(res.ci, truth_g, res.ci.point, t0);
        } else {
          const MomentSpec spec = idio_variance_moment(dgp.idio_variance->floor, dgp.K);
          const auto fit = estimate_gmm([&](int) -> const MomentSpec& { return spec; },
                                        stack_asset_observables(y, f), dgp.delta_n, op);
          BootstrapPlan p2 = plan;
          p2.partition.reset();
          p2.v = Vector::Ones(1);
          const auto res = gmm_bootstrap_ci(fit, op, p2);
          const double truth = sim.iv_g[static_cast<std::size_t>(anchor)](l);
          finish(res.ci, truth, res.ci.point, t0);
        }
        break;
      }
      case Method::kIntegrated: {
        const auto ops = window_operators(sim, cfg.k_n, cfg.basis);
        BootstrapPlan p2 = plan;
        p2.partition.reset();
        const auto res = integrated_bootstrap_ci(sim.y, sim.f, ops, cfg.k_n, p2, cfg.edge);
        double truth = 0.0;
        for (const auto& g : sim.g) truth += dgp.delta_n * v.dot(g.row(l).transpose());
        finish(res.ci, truth, res.ci.point, t0);
        break;
      }
      case Method::kPluginNaive:
      case Method::kPluginFull: {
        const auto fit = estimate_beta_known(y, f, dgp.delta_n);
        const auto dec = split_characteristic(fit.beta_hat, op, win, fit.ff_qv);
        BootstrapPlan p2 = plan;
        p2.partition.reset();
        const auto ci = m == Method::kPluginNaive ? plugin_ci_naive(dec, kw, op, p2) : plugin_ci_full(dec, kw, op, p2);
        finish(ci, truth_g, ci.point, t0);
        break;
      }
    }
  }
  return out;
}

}  // namespace detail

/// Simulates `trials` panels per strength and scores every method's interval
/// against the simulated truth. Trials are distributed over `threads`
/// workers; each trial owns derived RNG streams, so the report does not
/// depend on the thread count.
inline CoverageReport run_coverage_study(const ExperimentConfig& cfg) {
  cfg.validate();
  CoverageReport report;
  const auto T = static_cast<std::size_t>(cfg.trials);
  for (std::size_t s = 0; s < cfg.gamma_grid.size(); ++s) {
    std::vector<std::vector<TrialOutcome>> results(T);
    auto work = [&](std::size_t worker, std::size_t nworkers) {
      for (std::size_t t = worker; t < T; t += nworkers)
        results[t] = detail::run_trial(cfg, cfg.gamma_grid[s], static_cast<int>(t));
    };
    const auto nthreads = std::min<std::size_t>(static_cast<std::size_t>(cfg.threads), T);
    if (nthreads <= 1) {
      work(0, 1);
    } else {
      std::vector<std::thread> pool;
      std::vector<std::exception_ptr> errors(nthreads);
      for (std::size_t w = 0; w < nthreads; ++w)
        pool.emplace_back([&, w] {
          try {
            work(w, nthreads);
          } catch (...) {
            errors[w] = std::current_exception();
          }
        });
      for (auto& th : pool) th.join();
      for (auto& e : errors)
        if (e) std::rethrow_exception(e);
    }
    for (std::size_t m = 0; m < cfg.methods.size(); ++m) {
      std::vector<TrialOutcome> col;
      col.reserve(T);
      for (const auto& r : results) col.push_back(r[m]);
      report.cells.push_back(detail::summarize(to_string(cfg.methods[m]), cfg.gamma_grid[s], cfg.gamma_labels[s], col));
    }
  }
  return report;
}

inline nlohmann::json to_json(const CoverageCell& c, bool timing = true) {
  nlohmann::json j{{"method", c.method},       {"gamma_strength", c.gamma_strength},
                   {"gamma_label", c.gamma_label}, {"trials", c.trials},
                   {"hits", c.hits},           {"coverage", c.coverage},
                   {"miss_rate", c.miss_rate}, {"mc_se", c.mc_se},
                   {"median_width", c.median_width}, {"mean_bias", c.mean_bias},
                   {"rmse", c.rmse},           {"mean_raw_bias", c.mean_raw_bias}};
  if (timing) j["runtime_sec"] = c.runtime_sec;
  return j;
}

inline std::string report_csv(const CoverageReport& r, bool timing = true) {
  std::string s = "method,gamma_strength,gamma_label,trials,hits,coverage,miss_rate,mc_se,median_width,mean_bias,rmse,mean_raw_bias";
  if (timing) s += ",runtime_sec";
  s += '\n';
  for (const auto& c : r.cells) {
    const auto num = [](double v) { return nlohmann::json(v).dump(); };
    s += c.method + ',' + num(c.gamma_strength) + ',' + c.gamma_label + ',' + std::to_string(c.trials) + ',' +
         std::to_string(c.hits) + ',' + num(c.coverage) + ',' + num(c.miss_rate) + ',' + num(c.mc_se) + ',' +
         num(c.median_width) + ',' + num(c.mean_bias) + ',' + num(c.rmse) + ',' + num(c.mean_raw_bias);
    if (timing) s += ',' + num(c.runtime_sec);
    s += '\n';
  }
  return s;
}

inline std::string report_jsonl(const CoverageReport& r, bool timing = true) {
  std::string s;
  for (const auto& c : r.cells) s += to_json(c, timing).dump() + '\n';
  return s;
}

/// Writes the CSV table and/or line-delimited JSON records.
inline void emit_report(const CoverageReport& r, const OutputPaths& paths, bool timing = true) {
  auto write = [](const std::string& path, const std::string& body) {
    if (path.empty()) return;
    std::ofstream out(path);
    if (!out) throw DataError("cannot write report '" + path + "'");
    out << body;
    if (!out) throw DataError("failed while writing '" + path + "'");
  };
  write(paths.csv, report_csv(r, timing));
  write(paths.jsonl, report_jsonl(r, timing));
}

}  // namespace charbeta
