// Command-line front end: simulate, estimate, ci, coverage, ingest-check.

#include "charbeta/harness/coverage.hpp"
#include "charbeta/harness/csv_panel.hpp"

#include "CLI11.hpp"
#include "json.hpp"

#include <fstream>
#include <iostream>

namespace cb = charbeta;
using nlohmann::json;

namespace {

struct PanelArgs {
  std::string path;
  double delta_n = 1.0 / (252.0 * 78.0);
  bool drop_incomplete = false;
  bool truncate = false;
};

struct WindowArgs {
  int k_n = 0;  // 0: whole panel
  int start = 1;
  std::string family = "linear";
  int degree = 3;
  int knots = 4;
  int order = 2;
  bool no_intercept = false;
  std::string factors = "known";
  int K = 1;
  std::string sign = "positive_mean_loading";
};

void add_panel_flags(CLI::App* app, PanelArgs& a) {
  app->add_option("--panel", a.path, "long-format CSV panel")->required()->check(CLI::ExistingFile);
  app->add_option("--delta-n", a.delta_n, "interval length in time units");
  app->add_flag("--drop-incomplete", a.drop_incomplete, "drop assets missing any interval instead of failing");
  app->add_flag("--truncate", a.truncate, "zero out jump increments before estimation");
}

void add_window_flags(CLI::App* app, WindowArgs& w) {
  app->add_option("--k-n", w.k_n, "window length in intervals (default: all)");
  app->add_option("--start", w.start, "first interval of the window (1-based)");
  app->add_option("--basis", w.family, "linear | bspline | polynomial")
      ->check(CLI::IsMember({"linear", "bspline", "polynomial"}));
  app->add_option("--degree", w.degree, "B-spline degree");
  app->add_option("--knots", w.knots, "B-spline interior knots");
  app->add_option("--order", w.order, "polynomial order");
  app->add_flag("--no-intercept", w.no_intercept, "omit the constant column");
  app->add_option("--factors", w.factors, "known | latent")->check(CLI::IsMember({"known", "latent"}));
  app->add_option("--K", w.K, "number of latent factors");
  app->add_option("--sign", w.sign, "latent sign rule")
      ->check(CLI::IsMember({"largest_coordinate", "positive_mean_loading"}));
}

cb::SieveBasisSpec basis_of(const WindowArgs& w) {
  cb::SieveBasisSpec s;
  if (w.family == "bspline") s = cb::SieveBasisSpec::bspline(w.degree, w.knots);
  else if (w.family == "polynomial") s = cb::SieveBasisSpec::polynomial(w.order);
  s.intercept = !w.no_intercept;
  s.validate();
  return s;
}

// Everything the estimate/ci verbs need for one window.
struct WindowData {
  cb::IngestedPanel panel;
  cb::LocalWindow window;
  cb::ProjectionOperator op;
  cb::Matrix y, f;  // f empty in latent mode
  cb::LatentFactorEstimate pca;
  bool latent = false;
};

WindowData load_window(const PanelArgs& pa, const WindowArgs& wa) {
  cb::CsvSchema schema;
  schema.delta_n = pa.delta_n;
  schema.drop_incomplete_assets = pa.drop_incomplete;
  auto panel = cb::ingest_csv_panel(pa.path, schema);
  if (pa.truncate) panel.y = cb::truncate(panel.y);
  const cb::LocalWindow win{wa.start, wa.k_n > 0 ? wa.k_n : panel.y.n() - wa.start + 1};
  win.validate(panel.y.n());
  auto op = cb::build_basis(cb::CharacteristicPanel{panel.x[static_cast<std::size_t>(win.first())]}, basis_of(wa));
  for (const auto& w : op.warnings()) std::cerr << "warning: " << w << '\n';
  WindowData d{std::move(panel), win, std::move(op), {}, {}, {}, wa.factors == "latent"};
  d.y = win.slice(d.panel.y.data());
  if (d.latent) {
    const auto sign = wa.sign == "largest_coordinate" ? cb::SignConvention::kLargestCoordinate
                                                      : cb::SignConvention::kPositiveMeanLoading;
    d.pca = cb::projected_pca(d.y, d.op, wa.K, pa.delta_n, sign);
    for (const auto& w : d.pca.warnings) std::cerr << "warning: " << w << '\n';
  } else {
    if (!d.panel.f) throw cb::DataError("known-factor estimation needs f_1.. columns in the panel");
    d.f = win.slice(*d.panel.f);
  }
  return d;
}

int asset_index(const cb::IncrementPanel& y, const std::string& id) {
  const auto& ids = y.asset_ids();
  for (std::size_t l = 0; l < ids.size(); ++l)
    if (ids[l] == id) return static_cast<int>(l);
  throw cb::ConfigError("unknown asset '" + id + "'");
}

cb::DgpConfig load_dgp(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw cb::ConfigError("cannot open config file '" + path + "'");
  json j;
  try {
    in >> j;
  } catch (const json::parse_error& e) {
    throw cb::ConfigError("config '" + path + "' is not valid JSON: " + e.what());
  }
  // Either an experiment file (dgp under "dgp") or a bare dgp object.
  return cb::parse_dgp(j.contains("dgp") ? j["dgp"] : j);
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Characteristic-beta estimation and cross-sectional bootstrap inference"};
  app.require_subcommand(1);

  // simulate
  auto* sim = app.add_subcommand("simulate", "simulate a panel and write it as CSV");
  std::string sim_config, sim_out;
  std::optional<double> sim_strength;
  std::optional<std::uint64_t> sim_seed;
  bool sim_no_factors = false;
  sim->add_option("--config", sim_config, "JSON with a dgp object (or a bare dgp)")->check(CLI::ExistingFile);
  sim->add_option("--out", sim_out, "output CSV path")->required();
  sim->add_option("--gamma-strength", sim_strength, "override dgp.gamma_strength");
  sim->add_option("--seed", sim_seed, "override dgp.seed");
  sim->add_flag("--no-factors", sim_no_factors, "omit f_k columns");

  // ingest-check
  auto* ing = app.add_subcommand("ingest-check", "validate a CSV panel and print its dimensions");
  PanelArgs ing_panel;
  add_panel_flags(ing, ing_panel);

  // estimate
  auto* est = app.add_subcommand("estimate", "per-asset beta split for one window");
  PanelArgs est_panel;
  WindowArgs est_win;
  std::string est_out;
  add_panel_flags(est, est_panel);
  add_window_flags(est, est_win);
  est->add_option("--out", est_out, "CSV output (default: stdout)");

  // ci
  auto* ci = app.add_subcommand("ci", "confidence interval for v'g of one asset");
  PanelArgs ci_panel;
  WindowArgs ci_win;
  std::string ci_method = "cs_bootstrap", ci_target, ci_bias = "none";
  std::vector<double> ci_v;
  int ci_B = 500, ci_block = 4, ci_threads = 1;
  double ci_level = 0.95, ci_cbar = 0.5;
  std::uint64_t ci_seed = 1;
  add_panel_flags(ci, ci_panel);
  add_window_flags(ci, ci_win);
  ci->add_option("--method", ci_method, "cs_bootstrap | block_bootstrap | gmm_bootstrap | plugin_naive | plugin_full")
      ->check(CLI::IsMember({"cs_bootstrap", "block_bootstrap", "gmm_bootstrap", "plugin_naive", "plugin_full"}));
  ci->add_option("--target", ci_target, "asset_id of the target asset")->required();
  ci->add_option("--v", ci_v, "direction over factors (default e1)");
  ci->add_option("--B", ci_B, "bootstrap replications");
  ci->add_option("--level", ci_level, "nominal coverage");
  ci->add_option("--seed", ci_seed, "bootstrap seed");
  ci->add_option("--block-size", ci_block, "contiguous block size for block_bootstrap");
  ci->add_option("--threads", ci_threads, "bootstrap worker threads");
  ci->add_option("--bias", ci_bias, "latent bias correction: none | case1 | case2")
      ->check(CLI::IsMember({"none", "case1", "case2"}));
  ci->add_option("--c-bar", ci_cbar, "threshold constant for case2");

  // coverage
  auto* cov = app.add_subcommand("coverage", "Monte Carlo coverage study from a JSON config");
  std::string cov_config, cov_csv, cov_jsonl;
  std::optional<int> cov_trials, cov_B, cov_threads;
  std::optional<std::uint64_t> cov_seed;
  bool cov_no_timing = false;
  cov->add_option("--config", cov_config, "experiment JSON")->required()->check(CLI::ExistingFile);
  cov->add_option("--trials", cov_trials, "override trials");
  cov->add_option("--B", cov_B, "override B");
  cov->add_option("--threads", cov_threads, "override threads");
  cov->add_option("--seed", cov_seed, "override seed");
  cov->add_option("--csv", cov_csv, "write the CSV table here");
  cov->add_option("--jsonl", cov_jsonl, "write JSON lines here");
  cov->add_flag("--no-timing", cov_no_timing, "omit runtime columns (byte-stable reports)");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int rc = app.exit(e);
    return rc == 0 ? 0 : 2;
  }

  try {
    if (*sim) {
      cb::DgpConfig dgp = sim_config.empty() ? cb::DgpConfig{} : load_dgp(sim_config);
      if (sim_strength) dgp.gamma_strength = *sim_strength;
      if (sim_seed) dgp.seed = *sim_seed;
      const auto panel = cb::simulate_factor_panel(dgp);
      cb::export_csv_panel(sim_out, panel, !sim_no_factors);
      std::cout << "wrote " << dgp.p << " assets x " << dgp.n << " intervals to " << sim_out << '\n';
    } else if (*ing) {
      cb::CsvSchema schema;
      schema.delta_n = ing_panel.delta_n;
      schema.drop_incomplete_assets = ing_panel.drop_incomplete;
      const auto panel = cb::ingest_csv_panel(ing_panel.path, schema);
      json j{{"p", panel.y.p()},
             {"n", panel.y.n()},
             {"K_x", panel.x.front().cols()},
             {"K", panel.f ? panel.f->rows() : 0},
             {"first_interval", panel.intervals.front()},
             {"last_interval", panel.intervals.back()},
             {"dropped", panel.dropped}};
      std::cout << j.dump() << '\n';
    } else if (*est) {
      const auto d = load_window(est_panel, est_win);
      cb::Matrix beta, g, gamma;
      if (d.latent) {
        const auto load = cb::estimate_g_latent(d.y, d.pca.f_hat, d.op, est_panel.delta_n);
        beta = load.beta_hat, g = load.g_hat, gamma = load.gamma_hat;
      } else {
        const auto fit = cb::estimate_beta_known(d.y, d.f, est_panel.delta_n);
        const auto dec = cb::split_characteristic(fit.beta_hat, d.op, d.window, fit.ff_qv);
        beta = dec.beta_hat, g = dec.g_hat, gamma = dec.gamma_hat;
      }
      std::ofstream file;
      if (!est_out.empty()) {
        file.open(est_out);
        if (!file) throw cb::DataError("cannot write '" + est_out + "'");
      }
      std::ostream& out = est_out.empty() ? std::cout : file;
      out << "asset_id";
      for (const char* part : {"beta", "g", "gamma"})
        for (Eigen::Index k = 0; k < beta.cols(); ++k) out << ',' << part << '_' << k + 1;
      out << '\n';
      out.precision(17);
      for (int l = 0; l < d.panel.y.p(); ++l) {
        out << d.panel.y.asset_ids()[static_cast<std::size_t>(l)];
        for (const cb::Matrix* m : {&beta, &g, &gamma})
          for (Eigen::Index k = 0; k < m->cols(); ++k) out << ',' << (*m)(l, k);
        out << '\n';
      }
    } else if (*ci) {
      const auto d = load_window(ci_panel, ci_win);
      cb::BootstrapPlan plan;
      plan.B = ci_B;
      plan.level = ci_level;
      plan.seed = ci_seed;
      plan.threads = ci_threads;
      plan.target = asset_index(d.panel.y, ci_target);
      if (!ci_v.empty()) plan.v = Eigen::Map<const cb::Vector>(ci_v.data(), static_cast<Eigen::Index>(ci_v.size()));
      if (ci_method == "block_bootstrap") plan.partition = cb::BlockPartition::contiguous(d.panel.y.p(), ci_block);
      cb::ConfidenceInterval interval;
      if (d.latent) {
        if (ci_method != "cs_bootstrap" && ci_method != "block_bootstrap")
          throw cb::ConfigError("method " + ci_method + " needs known factors");
        const double dn = ci_panel.delta_n;
        const auto load = cb::estimate_g_latent(d.y, d.pca.f_hat, d.op, dn);
        cb::Vector bias = cb::Vector::Zero(ci_win.K);
        if (ci_bias != "none") {
          const cb::Matrix resid = cb::latent_residuals(d.y, d.pca.f_hat, load.beta_hat);
          bias = ci_bias == "case1"
                     ? cb::bias_case1(resid, d.pca.v_hat, load.g_hat, d.op, plan.target, dn)
                     : cb::bias_case2(cb::threshold_covariance(resid, dn, d.op, ci_cbar), d.pca.v_hat, load.g_hat,
                                      d.op, plan.target);
        }
        const cb::LatentWindow lw{d.y, d.pca.f_hat, dn, bias};
        interval = ci_method == "cs_bootstrap" ? cb::cs_bootstrap_ci(lw, d.op, plan).ci
                                               : cb::block_bootstrap_ci(lw, d.op, plan).ci;
      } else {
        if (ci_bias != "none") throw cb::ConfigError("--bias applies to latent factors only");
        const cb::KnownFactorWindow kw{d.y, d.f, ci_panel.delta_n};
        if (ci_method == "cs_bootstrap") {
          interval = cb::cs_bootstrap_ci(kw, d.op, plan).ci;
        } else if (ci_method == "block_bootstrap") {
          interval = cb::block_bootstrap_ci(kw, d.op, plan).ci;
        } else if (ci_method == "gmm_bootstrap") {
          const auto spec = cb::linear_regression_moment(static_cast<int>(d.f.rows()));
          const auto fit = cb::estimate_gmm([&](int) -> const cb::MomentSpec& { return spec; },
                                            cb::stack_asset_observables(d.y, d.f), ci_panel.delta_n, d.op);
          interval = cb::gmm_bootstrap_ci(fit, d.op, plan).ci;
        } else {
          const auto fit = cb::estimate_beta_known(d.y, d.f, ci_panel.delta_n);
          const auto dec = cb::split_characteristic(fit.beta_hat, d.op, d.window, fit.ff_qv);
          interval = ci_method == "plugin_naive" ? cb::plugin_ci_naive(dec, kw, d.op, plan)
                                                 : cb::plugin_ci_full(dec, kw, d.op, plan);
        }
      }
      json j{{"target", ci_target}, {"method", interval.method}, {"level", interval.level},
             {"point", interval.point}, {"lo", interval.lo},        {"hi", interval.hi},
             {"q_tau", interval.q_tau}, {"retries", interval.retries}};
      if (!interval.note.empty()) j["note"] = interval.note;
      std::cout << j.dump() << '\n';
    } else if (*cov) {
      auto cfg = cb::load_experiment(cov_config);
      if (cov_trials) cfg.trials = *cov_trials;
      if (cov_B) cfg.B = *cov_B;
      if (cov_threads) cfg.threads = *cov_threads;
      if (cov_seed) cfg.seed = *cov_seed;
      if (!cov_csv.empty()) cfg.output.csv = cov_csv;
      if (!cov_jsonl.empty()) cfg.output.jsonl = cov_jsonl;
      if (cov_no_timing) cfg.timing = false;
      const auto report = cb::run_coverage_study(cfg);
      cb::emit_report(report, cfg.output, cfg.timing);
      if (cfg.output.csv.empty() && cfg.output.jsonl.empty()) std::cout << cb::report_csv(report, cfg.timing);
    }
  } catch (const cb::ConfigError& e) {
    std::cerr << "config error: " << e.what() << '\n';
    return 2;
  } catch (const cb::DataError& e) {
    std::cerr << "data error: " << e.what() << '\n';
    return 3;
  } catch (const cb::SingularMatrixError& e) {
    std::cerr << "data error: " << e.what() << '\n';
    return 3;
  }
  return 0;
}
