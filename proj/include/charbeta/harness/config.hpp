#pragma once

#include "charbeta/boot_infer.hpp"
#include "charbeta/dgp_sim.hpp"
#include "charbeta/latent_pca.hpp"
#include "charbeta/sieve_basis.hpp"

#include "json.hpp"

#include <cmath>
#include <fstream>
#include <set>
#include <string>
#include <vector>

namespace charbeta {

enum class Method { kCsBootstrap, kBlockBootstrap, kGmmBootstrap, kIntegrated, kPluginNaive, kPluginFull };
enum class FactorMode { kKnown, kLatent };
enum class BiasCorrection { kNone, kCase1, kCase2 };
enum class GmmMoment { kLinearRegression, kIdioVariance };

inline const char* to_string(Method m) {
  switch (m) {
    case Method::kCsBootstrap: return "cs_bootstrap";
    case Method::kBlockBootstrap: return "block_bootstrap";
    case Method::kGmmBootstrap: return "gmm_bootstrap";
    case Method::kIntegrated: return "integrated";
    case Method::kPluginNaive: return "plugin_naive";
    case Method::kPluginFull: return "plugin_full";
  }
  return "?";
}

inline Method parse_method(const std::string& s) {
  for (Method m : {Method::kCsBootstrap, Method::kBlockBootstrap, Method::kGmmBootstrap, Method::kIntegrated,
                   Method::kPluginNaive, Method::kPluginFull})
    if (s == to_string(m)) return m;
  throw ConfigError("unknown method '" + s + "'");
}

struct OutputPaths {
  std::string csv;
  std::string jsonl;
};

struct ExperimentConfig {
  DgpConfig dgp;
  int k_n = 78;
  int window_start = 1;
  std::vector<double> gamma_grid{0.0};
  std::vector<std::string> gamma_labels;  // as written in the config, for reports
  std::vector<Method> methods{Method::kCsBootstrap};
  int trials = 100;
  int B = 500;
  double level = 0.95;
  FactorMode factor_mode = FactorMode::kKnown;
  BiasCorrection bias_correction = BiasCorrection::kNone;
  SieveBasisSpec basis;
  int target = 0;
  Vector v;  // empty means e_1
  std::uint64_t seed = 1;
  int threads = 1;
  double c_bar = 0.5;
  ThresholdKind threshold = ThresholdKind::kSoft;
  int block_size = 0;  // 0: take dgp.block_spec.size, else 1
  EdgeRule edge = EdgeRule::kExtendLast;
  GmmMoment gmm_moment = GmmMoment::kLinearRegression;
  SignConvention sign = SignConvention::kPositiveMeanLoading;
  OutputPaths output;
  bool timing = true;

  int effective_block_size() const {
    if (block_size > 0) return block_size;
    return dgp.block_spec ? dgp.block_spec->size : 1;
  }

  /// Rejects infeasible combinations before any simulation runs.
  void validate() const {
    dgp.validate();
    if (trials < 1) throw ConfigError("trials must be >= 1");
    if (methods.empty()) throw ConfigError("methods must be non-empty");
    if (gamma_grid.empty()) throw ConfigError("gamma_grid must be non-empty");
    for (double g : gamma_grid)
      if (!(g >= 0.0)) throw ConfigError("gamma_grid entries must be nonnegative");
    if (B < 1) throw ConfigError("B must be >= 1");
    if (!(level > 0.0 && level < 1.0)) throw ConfigError("level must lie in (0, 1)");
    if (threads < 1) throw ConfigError("threads must be >= 1");
    if (dgp.K > k_n) throw ConfigError("infeasible: K = " + std::to_string(dgp.K) + " exceeds k_n = " + std::to_string(k_n));
    const int J = basis.basis_dim(dgp.K_x);
    if (J > dgp.p) throw ConfigError("infeasible: J = " + std::to_string(J) + " exceeds p = " + std::to_string(dgp.p));
    if (window_start < 1 || window_start + k_n - 1 > dgp.n)
      throw ConfigError("window [" + std::to_string(window_start) + ", " + std::to_string(window_start + k_n - 1) +
                        "] does not fit in n = " + std::to_string(dgp.n));
    if (target < 0 || target >= dgp.p) throw ConfigError("target outside 0..p-1");
    const int K = gmm_moment == GmmMoment::kIdioVariance ? 1 : dgp.K;
    if (v.size() != 0 && v.size() != K) throw ConfigError("v must have K entries");
    if (factor_mode == FactorMode::kLatent) {
      if (dgp.K > J) throw ConfigError("infeasible: latent K exceeds J");
      for (Method m : methods)
        if (m != Method::kCsBootstrap && m != Method::kBlockBootstrap)
          throw ConfigError(std::string("method ") + to_string(m) + " is only available with known factors");
    } else if (bias_correction != BiasCorrection::kNone) {
      throw ConfigError("bias_correction applies to latent factor mode only");
    }
    for (Method m : methods)
      if (m == Method::kIntegrated && dgp.n <= k_n) throw ConfigError("integrated method needs n > k_n");
    if (gmm_moment == GmmMoment::kIdioVariance && !dgp.idio_variance)
      throw ConfigError("gmm_moment idio_variance needs dgp.idio_variance");
  }
};

namespace detail {

using nlohmann::json;

inline void check_keys(const json& j, const std::set<std::string>& allowed, const std::string& where) {
  if (!j.is_object()) throw ConfigError(where + " must be an object");
  for (const auto& [k, _] : j.items())
    if (!allowed.count(k)) throw ConfigError("unknown key '" + k + "' in " + where);
}

template <typename T>
void read(const json& j, const char* key, T& out) {
  if (!j.contains(key)) return;
  try {
    out = j.at(key).get<T>();
  } catch (const json::exception& e) {
    throw ConfigError(std::string("bad value for '") + key + "': " + e.what());
  }
}

inline Vector read_vector(const json& j) {
  const auto v = j.get<std::vector<double>>();
  return Eigen::Map<const Vector>(v.data(), static_cast<Eigen::Index>(v.size()));
}

inline Matrix read_matrix(const json& j) {
  const auto rows = j.get<std::vector<std::vector<double>>>();
  if (rows.empty()) return {};
  Matrix m(static_cast<Eigen::Index>(rows.size()), static_cast<Eigen::Index>(rows.front().size()));
  for (std::size_t r = 0; r < rows.size(); ++r) {
    if (rows[r].size() != rows.front().size()) throw ConfigError("ragged matrix in config");
    for (std::size_t c = 0; c < rows[r].size(); ++c)
      m(static_cast<Eigen::Index>(r), static_cast<Eigen::Index>(c)) = rows[r][c];
  }
  return m;
}

}  // namespace detail

inline DgpConfig parse_dgp(const nlohmann::json& j) {
  using detail::read;
  detail::check_keys(j,
                     {"p", "n", "delta_n", "K", "K_x", "g_spec", "gamma_strength", "gamma_mean_reversion",
                      "gamma_factor_corr", "vol_u", "vol_u_dispersion", "vol_f", "drift_scale", "jump_spec",
                      "x_dynamics", "x_mean_reversion", "x_refresh", "block_spec", "idio_variance", "seed"},
                     "dgp");
  DgpConfig c;
  try {
    read(j, "p", c.p);
    read(j, "n", c.n);
    read(j, "delta_n", c.delta_n);
    read(j, "K", c.K);
    read(j, "K_x", c.K_x);
    read(j, "gamma_strength", c.gamma_strength);
    read(j, "gamma_mean_reversion", c.gamma_mean_reversion);
    read(j, "gamma_factor_corr", c.gamma_factor_corr);
    read(j, "vol_u", c.vol_u);
    read(j, "vol_u_dispersion", c.vol_u_dispersion);
    read(j, "drift_scale", c.drift_scale);
    read(j, "x_dynamics", c.x_dynamics);
    read(j, "x_mean_reversion", c.x_mean_reversion);
    read(j, "x_refresh", c.x_refresh);
    read(j, "seed", c.seed);
    if (j.contains("vol_f")) c.vol_f = detail::read_matrix(j["vol_f"]);
    if (j.contains("g_spec")) {
      const auto& g = j["g_spec"];
      detail::check_keys(g, {"family", "intercept", "slope"}, "dgp.g_spec");
      std::string fam = "linear";
      read(g, "family", fam);
      if (fam != "linear" && fam != "smooth") throw ConfigError("g_spec.family must be linear or smooth");
      c.g_spec = GSpec::standard(c.K, c.K_x, fam == "linear" ? GSpec::Family::kLinear : GSpec::Family::kSmooth);
      if (g.contains("intercept")) c.g_spec.intercept = detail::read_vector(g["intercept"]);
      if (g.contains("slope")) c.g_spec.slope = detail::read_matrix(g["slope"]);
    }
    if (j.contains("jump_spec")) {
      const auto& s = j["jump_spec"];
      detail::check_keys(s, {"intensity", "size", "on_factors"}, "dgp.jump_spec");
      JumpSpec js;
      read(s, "intensity", js.intensity);
      read(s, "size", js.size);
      read(s, "on_factors", js.on_factors);
      c.jump_spec = js;
    }
    if (j.contains("block_spec")) {
      const auto& s = j["block_spec"];
      detail::check_keys(s, {"size", "gamma_corr", "u_corr", "x_share"}, "dgp.block_spec");
      BlockSpec bs;
      read(s, "size", bs.size);
      read(s, "gamma_corr", bs.gamma_corr);
      read(s, "u_corr", bs.u_corr);
      read(s, "x_share", bs.x_share);
      c.block_spec = bs;
    }
    if (j.contains("idio_variance")) {
      const auto& s = j["idio_variance"];
      detail::check_keys(s, {"intercept", "slope", "floor"}, "dgp.idio_variance");
      IdioVarianceSpec iv;
      read(s, "intercept", iv.intercept);
      read(s, "floor", iv.floor);
      if (s.contains("slope")) iv.slope = detail::read_vector(s["slope"]);
      c.idio_variance = iv;
    }
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string("dgp: ") + e.what());
  }
  return c;
}

/// Accepts numbers or the tokens "1/k_n" and "1/sqrt(k_n)".
inline double parse_strength(const nlohmann::json& j, int k_n) {
  if (j.is_number()) return j.get<double>();
  if (!j.is_string()) throw ConfigError("gamma_grid entries must be numbers or strings");
  const auto s = j.get<std::string>();
  if (s == "1/k_n") return 1.0 / k_n;
  if (s == "1/sqrt(k_n)") return 1.0 / std::sqrt(static_cast<double>(k_n));
  try {
    std::size_t used = 0;
    const double v = std::stod(s, &used);
    if (used == s.size()) return v;
  } catch (const std::exception&) {
  }
  throw ConfigError("cannot parse gamma strength '" + s + "'");
}

inline SieveBasisSpec parse_basis(const nlohmann::json& j) {
  using detail::read;
  detail::check_keys(j, {"family", "degree", "interior_knots", "order", "standardize", "intercept", "condition_cap"},
                     "basis");
  SieveBasisSpec b;
  std::string fam = "linear";
  read(j, "family", fam);
  if (fam == "linear") b.family = SieveFamily::kLinear;
  else if (fam == "bspline") b.family = SieveFamily::kBSpline;
  else if (fam == "polynomial") b.family = SieveFamily::kPolynomial;
  else throw ConfigError("basis.family must be linear, bspline or polynomial");
  read(j, "degree", b.degree);
  read(j, "interior_knots", b.interior_knots);
  read(j, "order", b.order);
  read(j, "standardize", b.standardize);
  read(j, "intercept", b.intercept);
  read(j, "condition_cap", b.condition_cap);
  b.validate();
  return b;
}

inline ExperimentConfig parse_experiment(const nlohmann::json& j) {
  using detail::read;
  detail::check_keys(j,
                     {"dgp", "k_n", "window_start", "gamma_grid", "methods", "trials", "B", "level", "factor_mode",
                      "bias_correction", "basis", "target", "v", "seed", "threads", "c_bar", "threshold",
                      "block_size", "edge_rule", "gmm_moment", "sign_convention", "output", "timing"},
                     "experiment");
  ExperimentConfig c;
  try {
    if (j.contains("dgp")) c.dgp = parse_dgp(j["dgp"]);
    read(j, "k_n", c.k_n);
    read(j, "window_start", c.window_start);
    if (j.contains("gamma_grid")) {
      c.gamma_grid.clear();
      c.gamma_labels.clear();
      for (const auto& g : j["gamma_grid"]) {
        c.gamma_grid.push_back(parse_strength(g, c.k_n));
        c.gamma_labels.push_back(g.is_string() ? g.get<std::string>() : g.dump());
      }
    }
    if (j.contains("methods")) {
      c.methods.clear();
      for (const auto& m : j["methods"]) c.methods.push_back(parse_method(m.get<std::string>()));
    }
    read(j, "trials", c.trials);
    read(j, "B", c.B);
    read(j, "level", c.level);
    read(j, "target", c.target);
    read(j, "seed", c.seed);
    read(j, "threads", c.threads);
    read(j, "c_bar", c.c_bar);
    read(j, "block_size", c.block_size);
    read(j, "timing", c.timing);
    if (j.contains("v")) c.v = detail::read_vector(j["v"]);
    if (j.contains("basis")) c.basis = parse_basis(j["basis"]);
    std::string s;
    if (j.contains("factor_mode")) {
      read(j, "factor_mode", s);
      if (s == "known") c.factor_mode = FactorMode::kKnown;
      else if (s == "latent") c.factor_mode = FactorMode::kLatent;
      else throw ConfigError("factor_mode must be known or latent");
    }
    if (j.contains("bias_correction")) {
      read(j, "bias_correction", s);
      if (s == "none") c.bias_correction = BiasCorrection::kNone;
      else if (s == "case1") c.bias_correction = BiasCorrection::kCase1;
      else if (s == "case2") c.bias_correction = BiasCorrection::kCase2;
      else throw ConfigError("bias_correction must be none, case1 or case2");
    }
    if (j.contains("threshold")) {
      read(j, "threshold", s);
      if (s == "soft") c.threshold = ThresholdKind::kSoft;
      else if (s == "hard") c.threshold = ThresholdKind::kHard;
      else throw ConfigError("threshold must be soft or hard");
    }
    if (j.contains("edge_rule")) {
      read(j, "edge_rule", s);
      if (s == "extend_last") c.edge = EdgeRule::kExtendLast;
      else if (s == "windows_only") c.edge = EdgeRule::kWindowsOnly;
      else throw ConfigError("edge_rule must be extend_last or windows_only");
    }
    if (j.contains("gmm_moment")) {
      read(j, "gmm_moment", s);
      if (s == "linear_regression") c.gmm_moment = GmmMoment::kLinearRegression;
      else if (s == "idio_variance") c.gmm_moment = GmmMoment::kIdioVariance;
      else throw ConfigError("gmm_moment must be linear_regression or idio_variance");
    }
    if (j.contains("sign_convention")) {
      read(j, "sign_convention", s);
      if (s == "largest_coordinate") c.sign = SignConvention::kLargestCoordinate;
      else if (s == "positive_mean_loading") c.sign = SignConvention::kPositiveMeanLoading;
      else throw ConfigError("sign_convention must be largest_coordinate or positive_mean_loading");
    }
    if (j.contains("output")) {
      detail::check_keys(j["output"], {"csv", "jsonl"}, "output");
      read(j["output"], "csv", c.output.csv);
      read(j["output"], "jsonl", c.output.jsonl);
    }
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(e.what());
  }
  if (c.gamma_labels.size() != c.gamma_grid.size()) {
    c.gamma_labels.clear();
    for (double g : c.gamma_grid) c.gamma_labels.push_back(nlohmann::json(g).dump());
  }
  c.validate();
  return c;
}

inline ExperimentConfig load_experiment(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open config file '" + path + "'");
  nlohmann::json j;
  try {
    in >> j;
  } catch (const nlohmann::json::parse_error& e) {
    throw ConfigError("config '" + path + "' is not valid JSON: " + e.what());
  }
  return parse_experiment(j);
}

}  // namespace charbeta
