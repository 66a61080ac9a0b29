#pragma once

#include <Eigen/Core>
#include <chrono>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <functional>
#include <map>
#include <set>
#include <sstream>
#include <string>
#include <thread>
#include <vector>

#include <json.hpp>

#include "nmrom/autoencoder.hpp"
#include "nmrom/error.hpp"
#include "nmrom/fvm/fvm.hpp"
#include "nmrom/latent.hpp"
#include "nmrom/log.hpp"
#include "nmrom/metrics.hpp"
#include "nmrom/neural/rng.hpp"
#include "nmrom/rom.hpp"
#include "nmrom/snapshots.hpp"

namespace nmrom {

using json = nlohmann::json;

// ---------------------------------------------------------------------------
// Configuration

struct ExperimentConfig {
  std::string preset = "ncl-desk";
  std::string problem = "ncl";
  Index n = 24;  // square grid side
  double nu = 1e-4;
  double gravity = 9.81;
  double train_lo = 0.8, train_hi = 2.0;
  Index train_count = 3;
  double test_lo = 0.6, test_hi = 2.2;
  Index test_count = 4;
  double dt = 1e-3;
  double t_final = 0.5;
  int train_stride = 10;
  int test_stride = 10;
  int mp_stride = 25;          // sampling of the magic-point selection data
  Index time_cut = 0;          // leading test snapshots skipped; rollouts start there
  nn::TrainConfig cae{300, 20, 1e-3, 200, 1e-6, 1e-6, 0};
  nn::TrainConfig ts{1000, 20, 1e-3, 200, 1e-6, 1e-6, 0};
  nn::TrainConfig lstm{2000, 20, 1e-3, 500, 1e-6, 1e-6, 0};
  std::vector<Index> mp_counts{8, 16, 24};
  Index selection_modes = 0;   // 0: the magic-point count
  Index gnat_modes = 0;        // 0: the magic-point count
  std::vector<std::string> variants{"nm-lspg", "nm-lspg-gnat", "nm-lspg-gnat-ts"};
  bool train_lstm = true;
  int lm_budget = 7;
  bool escalate = false;
  double fd_step = 1e-5;
  std::uint64_t seed = 0;
  int threads = 1;
  std::string output_dir = "nmrom-out";

  [[nodiscard]] fvm::Problem problem_at(double mu) const {
    if (problem == "ncl") {
      fvm::NclProblem p;
      p.grid = Grid(n, n);
      p.nu = nu;
      p.mu = mu;
      p.dt = dt;
      p.t_final = t_final;
      return p;
    }
    fvm::SweProblem p;
    p.grid = Grid(n, n);
    p.g = gravity;
    p.mu = mu;
    p.dt = dt;
    p.t_final = t_final;
    return p;
  }
  [[nodiscard]] std::vector<double> train_mus() const { return equispaced(train_lo, train_hi, train_count); }
  [[nodiscard]] std::vector<double> test_mus() const { return equispaced(test_lo, test_hi, test_count); }
  [[nodiscard]] Index channels() const { return problem == "ncl" ? 2 : 3; }

  /// Seeds of the individual models, all derived from `seed`.
  [[nodiscard]] std::uint64_t stream(std::uint64_t k) const {
    std::uint64_t state = seed ^ (0xD1B54A32D192ED03ULL * (k + 1));
    return nn::splitmix64(state);
  }

  /// Rejects settings that violate a module precondition, before any work.
  void validate() const {
    if (problem != "ncl" && problem != "swe") throw ConfigError("config: problem must be ncl or swe");
    (void)decoder_geometry(n);
    if (!(dt > 0.0) || !(t_final > 0.0)) throw ConfigError("config: dt and t_final must be positive");
    if (train_count < 2) throw ConfigError("config: need at least 2 training parameters");
    if (test_count < 1) throw ConfigError("config: need at least 1 test parameter");
    if (!(train_hi > train_lo) || !(test_hi >= test_lo)) throw ConfigError("config: empty parameter range");
    if (!(train_lo > 0.0) || !(test_lo > 0.0)) throw ConfigError("config: parameters must be positive");
    if (train_stride < 1 || test_stride < 1 || mp_stride < 1) throw ConfigError("config: strides must be >= 1");
    const long steps = std::lround(t_final / dt);
    if (steps < train_stride) throw ConfigError("config: horizon shorter than one training stride");
    if (time_cut * static_cast<Index>(test_stride) > static_cast<Index>(steps)) throw ConfigError("config: time cut beyond horizon");
    cae.validate();
    ts.validate();
    lstm.validate();
    const Index cells = n * n;
    for (Index mp : mp_counts) {
      if (mp <= 4 || mp > cells) throw ConfigError("config: magic-point counts must lie in (4, cells]");
      const Index g = gnat_modes ? gnat_modes : mp;
      if (g > channels() * mp) throw ConfigError("config: GNAT modes exceed sampled residual rows");
    }
    bool needs_mp = false;
    for (const auto& v : variants) needs_mp |= is_hyper(parse_kind(v));
    if (needs_mp && mp_counts.empty()) throw ConfigError("config: hyper-reduced variants need magic-point counts");
    if (variants.empty()) throw ConfigError("config: no variants");
    if (lm_budget < 2 || lm_budget > 1000) throw ConfigError("config: lm_budget must be in [2, 1000]");
    if (!(fd_step > 0.0)) throw ConfigError("config: fd_step must be positive");
    if (threads < 1) throw ConfigError("config: threads must be >= 1");
  }
};

inline ExperimentConfig preset(const std::string& name) {
  ExperimentConfig c;
  c.preset = name;
  if (name == "ncl-desk") return c;
  if (name == "ncl-paper") {
    c.n = 60;
    c.train_count = 12;
    c.test_count = 16;
    c.t_final = 2.0;
    c.train_stride = 4;
    c.test_stride = 20;
    c.mp_stride = 10;
    c.cae = {2000, 20, 1e-3, 200, 1e-6, 1e-6, 0};
    c.ts = {3000, 20, 1e-4, 200, 1e-6, 1e-6, 0};
    c.lstm = {10000, 20, 1e-3, 500, 1e-6, 1e-6, 0};
    c.mp_counts = {50, 100, 150};
    return c;
  }
  if (name == "smoke") {
    c.n = 12;
    c.train_count = 2;
    c.test_count = 2;
    c.test_lo = 0.9;
    c.test_hi = 1.9;
    c.t_final = 0.05;
    c.train_stride = 5;
    c.test_stride = 5;
    c.mp_stride = 5;
    c.cae.epochs = 20;
    c.ts.epochs = 20;
    c.lstm.epochs = 20;
    c.mp_counts = {10};
    c.variants = {"nm-lspg", "nm-lspg-roc", "nm-lspg-gnat", "nm-lspg-gnat-ts"};
    return c;
  }
  if (name == "swe-desk") {
    c.problem = "swe";
    c.train_lo = 0.1;
    c.train_hi = 0.3;
    c.test_lo = 0.05;
    c.test_hi = 0.35;
    c.dt = 1e-4;
    c.t_final = 0.05;
    c.train_stride = 10;
    c.test_stride = 10;
    c.mp_stride = 25;
    c.time_cut = 10;
    c.ts = {1500, 20, 1e-4, 100, 1e-6, 1e-6, 0};
    c.variants = {"nm-lspg", "nm-lspg-roc", "nm-lspg-roc-ts"};
    return c;
  }
  throw ConfigError("unknown preset '" + name + "'");
}

namespace detail {
inline std::string trim(std::string s) {
  const auto b = s.find_first_not_of(" \t\r\n");
  if (b == std::string::npos) return {};
  return s.substr(b, s.find_last_not_of(" \t\r\n") - b + 1);
}

inline std::vector<std::string> split_list(const std::string& v) {
  std::vector<std::string> out;
  std::stringstream ss(v);
  std::string item;
  while (std::getline(ss, item, ','))
    if (auto t = trim(item); !t.empty()) out.push_back(t);
  return out;
}

inline double to_double(const std::string& key, const std::string& v) {
  try {
    std::size_t pos = 0;
    const double d = std::stod(v, &pos);
    if (pos != v.size()) throw std::invalid_argument(v);
    return d;
  } catch (const std::exception&) {
    throw ConfigError("config: '" + key + "' expects a number, got '" + v + "'");
  }
}

inline long to_long(const std::string& key, const std::string& v) {
  const double d = to_double(key, v);
  if (d != std::floor(d)) throw ConfigError("config: '" + key + "' expects an integer, got '" + v + "'");
  return static_cast<long>(d);
}

inline Index to_count(const std::string& key, const std::string& v) {
  const long l = to_long(key, v);
  if (l < 0) throw ConfigError("config: '" + key + "' must be non-negative");
  return static_cast<Index>(l);
}

inline bool to_bool(const std::string& key, const std::string& v) {
  if (v == "true" || v == "1" || v == "yes") return true;
  if (v == "false" || v == "0" || v == "no") return false;
  throw ConfigError("config: '" + key + "' expects true/false, got '" + v + "'");
}

inline bool set_train_field(nn::TrainConfig& t, const std::string& field, const std::string& key, const std::string& v) {
  if (field == "epochs") t.epochs = static_cast<int>(to_long(key, v));
  else if (field == "batch_size") t.batch_size = to_count(key, v);
  else if (field == "lr0") t.lr0 = to_double(key, v);
  else if (field == "patience") t.lr_halving_patience = static_cast<int>(to_long(key, v));
  else if (field == "lr_min") t.lr_min = to_double(key, v);
  else if (field == "weight_decay") t.weight_decay = to_double(key, v);
  else return false;
  return true;
}
}  // namespace detail

/// Applies one `key = value` setting. Lists are comma separated.
inline void apply_setting(ExperimentConfig& c, const std::string& key, const std::string& value) {
  using namespace detail;
  const std::string v = trim(value);
  if (key == "preset") {
    const auto keep_dir = c.output_dir;
    c = preset(v);
    c.output_dir = keep_dir;
  } else if (key == "problem") c.problem = v;
  else if (key == "n") c.n = to_count(key, v);
  else if (key == "nu") c.nu = to_double(key, v);
  else if (key == "gravity") c.gravity = to_double(key, v);
  else if (key == "train_lo") c.train_lo = to_double(key, v);
  else if (key == "train_hi") c.train_hi = to_double(key, v);
  else if (key == "train_count") c.train_count = to_count(key, v);
  else if (key == "test_lo") c.test_lo = to_double(key, v);
  else if (key == "test_hi") c.test_hi = to_double(key, v);
  else if (key == "test_count") c.test_count = to_count(key, v);
  else if (key == "dt") c.dt = to_double(key, v);
  else if (key == "t_final") c.t_final = to_double(key, v);
  else if (key == "train_stride") c.train_stride = static_cast<int>(to_long(key, v));
  else if (key == "test_stride") c.test_stride = static_cast<int>(to_long(key, v));
  else if (key == "mp_stride") c.mp_stride = static_cast<int>(to_long(key, v));
  else if (key == "time_cut") c.time_cut = to_count(key, v);
  else if (key == "mp_counts") {
    c.mp_counts.clear();
    for (const auto& s : split_list(v)) c.mp_counts.push_back(to_count(key, s));
  } else if (key == "selection_modes") c.selection_modes = to_count(key, v);
  else if (key == "gnat_modes") c.gnat_modes = to_count(key, v);
  else if (key == "variants") {
    c.variants = split_list(v);
    for (const auto& s : c.variants) (void)parse_kind(s);
  } else if (key == "train_lstm") c.train_lstm = to_bool(key, v);
  else if (key == "lm_budget") c.lm_budget = static_cast<int>(to_long(key, v));
  else if (key == "escalate") c.escalate = to_bool(key, v);
  else if (key == "fd_step") c.fd_step = to_double(key, v);
  else if (key == "seed") c.seed = static_cast<std::uint64_t>(to_long(key, v));
  else if (key == "threads") c.threads = static_cast<int>(to_long(key, v));
  else if (key == "output_dir") c.output_dir = v;
  else {
    const auto dot = key.find('.');
    const std::string group = key.substr(0, dot), field = dot == std::string::npos ? "" : key.substr(dot + 1);
    nn::TrainConfig* t = group == "cae" ? &c.cae : group == "ts" ? &c.ts : group == "lstm" ? &c.lstm : nullptr;
    if (!t || !set_train_field(*t, field, key, v)) throw ConfigError("config: unknown key '" + key + "'");
  }
}

/// Flat `key = value` text; '#' starts a comment. A `preset` line resets
/// every other setting, so it belongs first.
inline ExperimentConfig parse_config_text(const std::string& text, ExperimentConfig base = {}) {
  std::stringstream ss(text);
  std::string line;
  int lineno = 0;
  while (std::getline(ss, line)) {
    ++lineno;
    if (auto h = line.find('#'); h != std::string::npos) line.resize(h);
    line = detail::trim(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos) throw ConfigError("config line " + std::to_string(lineno) + ": expected key = value");
    apply_setting(base, detail::trim(line.substr(0, eq)), line.substr(eq + 1));
  }
  return base;
}

/// Flat JSON object with the same keys; arrays become comma lists.
inline ExperimentConfig parse_config_json(const std::string& text, ExperimentConfig base = {}) {
  json j;
  try {
    j = json::parse(text);
  } catch (const json::exception& e) {
    throw ConfigError(std::string("config: invalid JSON: ") + e.what());
  }
  if (!j.is_object()) throw ConfigError("config: JSON root must be an object");
  auto scalar = [](const json& v) {
    if (v.is_string()) return v.get<std::string>();
    if (v.is_boolean()) return std::string(v.get<bool>() ? "true" : "false");
    if (v.is_number_integer()) return std::to_string(v.get<long>());
    if (v.is_number()) {
      std::ostringstream os;
      os.precision(17);
      os << v.get<double>();
      return os.str();
    }
    throw ConfigError("config: unsupported JSON value " + v.dump());
  };
  if (j.contains("preset")) apply_setting(base, "preset", scalar(j["preset"]));
  for (const auto& [k, v] : j.items()) {
    if (k == "preset") continue;
    if (v.is_array()) {
      std::string joined;
      for (const auto& e : v) joined += (joined.empty() ? "" : ",") + scalar(e);
      apply_setting(base, k, joined);
    } else {
      apply_setting(base, k, scalar(v));
    }
  }
  return base;
}

inline ExperimentConfig load_config(const std::filesystem::path& path, ExperimentConfig base = {}) {
  std::ifstream f(path);
  if (!f) throw ConfigError("cannot read config " + path.string());
  std::stringstream ss;
  ss << f.rdbuf();
  const std::string text = ss.str();
  const auto first = text.find_first_not_of(" \t\r\n");
  if (path.extension() == ".json" || (first != std::string::npos && text[first] == '{')) return parse_config_json(text, base);
  return parse_config_text(text, base);
}

inline json config_to_json(const ExperimentConfig& c) {
  auto train = [](const nn::TrainConfig& t) {
    return json{{"epochs", t.epochs}, {"batch_size", t.batch_size}, {"lr0", t.lr0}, {"patience", t.lr_halving_patience},
                {"lr_min", t.lr_min}, {"weight_decay", t.weight_decay}};
  };
  return json{{"preset", c.preset}, {"problem", c.problem}, {"n", c.n}, {"nu", c.nu}, {"gravity", c.gravity},
              {"train_lo", c.train_lo}, {"train_hi", c.train_hi}, {"train_count", c.train_count},
              {"test_lo", c.test_lo}, {"test_hi", c.test_hi}, {"test_count", c.test_count}, {"dt", c.dt},
              {"t_final", c.t_final}, {"train_stride", c.train_stride}, {"test_stride", c.test_stride},
              {"mp_stride", c.mp_stride}, {"time_cut", c.time_cut}, {"cae", train(c.cae)}, {"ts", train(c.ts)},
              {"lstm", train(c.lstm)}, {"mp_counts", c.mp_counts}, {"selection_modes", c.selection_modes},
              {"gnat_modes", c.gnat_modes}, {"variants", c.variants}, {"train_lstm", c.train_lstm},
              {"lm_budget", c.lm_budget}, {"escalate", c.escalate}, {"fd_step", c.fd_step}, {"seed", c.seed},
              {"threads", c.threads}};
}

// ---------------------------------------------------------------------------
// Timing

struct Timing {
  double mean_ms = 0.0;
  double stddev_ms = 0.0;
  int reps = 0;
};

/// Monotonic-clock timing of `fn`; warmup calls are not measured.
inline Timing timing_harness(const std::function<void()>& fn, int warmup, int reps) {
  if (reps < 3) throw std::invalid_argument("timing_harness: reps must be >= 3");
  for (int i = 0; i < warmup; ++i) fn();
  std::vector<double> ms;
  for (int i = 0; i < reps; ++i) {
    const auto t0 = std::chrono::steady_clock::now();
    fn();
    ms.push_back(std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - t0).count());
  }
  Timing t;
  t.reps = reps;
  for (double v : ms) t.mean_ms += v;
  t.mean_ms /= reps;
  for (double v : ms) t.stddev_ms += (v - t.mean_ms) * (v - t.mean_ms);
  t.stddev_ms = std::sqrt(t.stddev_ms / (reps - 1));
  return t;
}

class Stopwatch {
 public:
  [[nodiscard]] double seconds() const {
    return std::chrono::duration<double>(std::chrono::steady_clock::now() - start_).count();
  }

 private:
  std::chrono::steady_clock::time_point start_ = std::chrono::steady_clock::now();
};

// ---------------------------------------------------------------------------
// Report

struct VariantResult {
  std::string variant;
  Index mp = 0;       // 0 for the full-order residual
  Index submesh = 0;  // halo size
  std::vector<ErrorStats> errors;  // per test parameter
  std::vector<Index> missing;
  std::vector<int> max_evals;
  std::vector<int> budgets;
  double avg_step_ms = 0.0;
  double dynamics_s = 0.0;  // summed wall clock of all rollouts

  [[nodiscard]] std::string label() const { return mp ? variant + "@" + std::to_string(mp) : variant; }
};

struct TsInfo {
  Index mp = 0, submesh = 0, hidden = 0, output_dim = 0;
  double train_s = 0.0;
  int epochs = 0;
};

struct Report {
  json config;
  std::vector<double> test_mus;
  std::vector<ErrorStats> reconstruction;  // CAE on the test set
  std::vector<ErrorStats> pod;             // POD(r=4) projection on the test set
  std::vector<double> pod_decay;           // mean POD projection error for r = 1..R
  double cae_train_reconstruction = 0.0;   // mean over training snapshots
  std::vector<VariantResult> variants;
  std::vector<ErrorStats> lstm;
  std::vector<TsInfo> ts;
  std::map<std::string, double> offline_s;
  double fom_step_ms = 0.0;
  double fom_step_stddev_ms = 0.0;
  json environment;

  [[nodiscard]] double offline_total_s() const {
    double s = 0.0;
    for (const auto& [k, v] : offline_s) s += v;
    return s;
  }
};

inline json stats_json(const std::vector<ErrorStats>& e) {
  json a = json::array();
  for (const auto& s : e) a.push_back({{"mean", s.mean}, {"max", s.max}, {"count", s.count}, {"skipped", s.skipped}});
  return a;
}

inline std::vector<ErrorStats> stats_from_json(const json& a) {
  std::vector<ErrorStats> out;
  for (const auto& s : a) out.push_back({s["mean"].get<double>(), s["max"].get<double>(), s["count"].get<Index>(), s["skipped"].get<Index>()});
  return out;
}

/// Every accuracy number of a report, in a fixed order; timings excluded.
inline std::vector<double> report_metrics(const Report& r) {
  std::vector<double> m;
  auto add = [&m](const std::vector<ErrorStats>& e) {
    for (const auto& s : e) {
      m.push_back(s.mean);
      m.push_back(s.max);
    }
  };
  add(r.reconstruction);
  add(r.pod);
  m.insert(m.end(), r.pod_decay.begin(), r.pod_decay.end());
  m.push_back(r.cae_train_reconstruction);
  for (const auto& v : r.variants) add(v.errors);
  add(r.lstm);
  return m;
}

inline json report_json(const Report& r) {
  json j;
  j["config"] = r.config;
  j["test_mus"] = r.test_mus;
  j["reconstruction"] = stats_json(r.reconstruction);
  j["pod4"] = stats_json(r.pod);
  j["pod_decay"] = r.pod_decay;
  j["cae_train_reconstruction"] = r.cae_train_reconstruction;
  j["variants"] = json::array();
  for (const auto& v : r.variants)
    j["variants"].push_back({{"variant", v.variant}, {"mp", v.mp}, {"submesh", v.submesh}, {"errors", stats_json(v.errors)},
                             {"missing", v.missing}, {"max_evals", v.max_evals}, {"budgets", v.budgets},
                             {"avg_step_ms", v.avg_step_ms}, {"dynamics_s", v.dynamics_s}});
  j["lstm"] = stats_json(r.lstm);
  j["teacher_student"] = json::array();
  for (const auto& t : r.ts)
    j["teacher_student"].push_back({{"mp", t.mp}, {"submesh", t.submesh}, {"hidden", t.hidden}, {"output_dim", t.output_dim},
                                    {"train_s", t.train_s}, {"epochs", t.epochs}});
  j["timings"] = {{"offline_s", r.offline_s}, {"offline_total_s", r.offline_total_s()},
                  {"fom_step_ms", r.fom_step_ms}, {"fom_step_stddev_ms", r.fom_step_stddev_ms}};
  j["environment"] = r.environment;
  return j;
}

namespace detail {
inline std::ofstream open_out(const std::filesystem::path& p) {
  std::ofstream f(p);
  if (!f) throw std::runtime_error("cannot write " + p.string());
  f.precision(12);
  return f;
}

inline double mean_of(const std::vector<ErrorStats>& e) {
  double s = 0.0;
  for (const auto& x : e) s += x.mean;
  return e.empty() ? 0.0 : s / static_cast<double>(e.size());
}
}  // namespace detail

/// Writes report.json, the figure CSVs and a plain-text summary table.
///
/// CSV files (header row first):
///   error_vs_param.csv  variant,mp,mu,eps_mean,eps_max           (n_test rows per variant)
///   error_vs_mp.csv     variant,mp,eps_mean_avg,eps_max_avg      (n_mp rows per hyper-reduced variant)
///   pod_vs_cae.csv      mu,cae_mean,cae_max,pod_mean,pod_max,lstm_mean,lstm_max (n_test rows)
///   pod_decay.csv       r,pod_mean,cae_mean
inline void emit_report(const Report& r, const std::filesystem::path& dir) {
  std::error_code ec;
  std::filesystem::create_directories(dir, ec);
  if (ec) throw std::runtime_error("cannot create " + dir.string() + ": " + ec.message());
  {
    auto f = detail::open_out(dir / "report.json");
    f << report_json(r).dump(2) << '\n';
  }
  const Index nt = r.test_mus.size();
  {
    auto f = detail::open_out(dir / "error_vs_param.csv");
    f << "variant,mp,mu,eps_mean,eps_max\n";
    for (const auto& v : r.variants)
      for (Index i = 0; i < nt; ++i)
        f << v.variant << ',' << v.mp << ',' << r.test_mus[i] << ',' << v.errors[i].mean << ',' << v.errors[i].max << '\n';
  }
  {
    auto f = detail::open_out(dir / "error_vs_mp.csv");
    f << "variant,mp,eps_mean_avg,eps_max_avg\n";
    for (const auto& v : r.variants) {
      if (!v.mp) continue;
      double mx = 0.0;
      for (const auto& e : v.errors) mx += e.max;
      f << v.variant << ',' << v.mp << ',' << detail::mean_of(v.errors) << ',' << mx / static_cast<double>(v.errors.size()) << '\n';
    }
  }
  {
    auto f = detail::open_out(dir / "pod_vs_cae.csv");
    f << "mu,cae_mean,cae_max,pod_mean,pod_max,lstm_mean,lstm_max\n";
    for (Index i = 0; i < nt; ++i) {
      f << r.test_mus[i] << ',' << r.reconstruction[i].mean << ',' << r.reconstruction[i].max << ',' << r.pod[i].mean << ','
        << r.pod[i].max << ',';
      if (i < r.lstm.size()) f << r.lstm[i].mean << ',' << r.lstm[i].max << '\n';
      else f << ",\n";
    }
  }
  {
    auto f = detail::open_out(dir / "pod_decay.csv");
    f << "r,pod_mean,cae_mean\n";
    for (std::size_t i = 0; i < r.pod_decay.size(); ++i)
      f << i + 1 << ',' << r.pod_decay[i] << ',' << detail::mean_of(r.reconstruction) << '\n';
  }
  {
    auto f = detail::open_out(dir / "report.txt");
    char buf[256];
    f << "Accuracy (mean / max relative L2 error over each test series)\n";
    std::snprintf(buf, sizeof buf, "%-22s", "mu");
    f << buf;
    for (double mu : r.test_mus) {
      std::snprintf(buf, sizeof buf, " %17.4f", mu);
      f << buf;
    }
    f << '\n';
    auto row = [&](const std::string& name, const std::vector<ErrorStats>& e) {
      std::snprintf(buf, sizeof buf, "%-22s", name.c_str());
      f << buf;
      for (const auto& s : e) {
        std::snprintf(buf, sizeof buf, " %8.2e/%8.2e", s.mean, s.max);
        f << buf;
      }
      f << '\n';
    };
    row("CAE reconstruction", r.reconstruction);
    row("POD r=4 projection", r.pod);
    for (const auto& v : r.variants) row(v.label(), v.errors);
    if (!r.lstm.empty()) row("lstm", r.lstm);
    f << "\nHyper-reduction (MP, submesh size, hidden size, TS training s, TS avg epoch s, avg step ms per variant)\n";
    for (const auto& t : r.ts) {
      std::snprintf(buf, sizeof buf, "%5zu %7zu %6zu %10.2f %10.4f", t.mp, t.submesh, t.hidden, t.train_s,
                    t.epochs ? t.train_s / t.epochs : 0.0);
      f << buf;
      for (const auto& v : r.variants)
        if (v.mp == t.mp) f << "  " << v.variant << '=' << v.avg_step_ms;
      f << '\n';
    }
    f << "\nOnline: avg FOM step " << r.fom_step_ms << " ms (sd " << r.fom_step_stddev_ms << ")";
    for (const auto& v : r.variants)
      if (!v.mp) f << ", " << v.variant << ' ' << v.avg_step_ms << " ms";
    f << "\nOffline:";
    for (const auto& [k, v] : r.offline_s) f << ' ' << k << '=' << v << 's';
    f << " total=" << r.offline_total_s() << "s\n";
  }
}

// ---------------------------------------------------------------------------
// Pipeline

enum class Stage { snapshots, cae, mp, ts, lstm, rollout, report };

inline const std::vector<std::pair<Stage, std::string>>& stage_names() {
  static const std::vector<std::pair<Stage, std::string>> names{
      {Stage::snapshots, "generate-snapshots"}, {Stage::cae, "train-cae"}, {Stage::mp, "select-mp"},
      {Stage::ts, "train-ts"}, {Stage::lstm, "train-lstm"}, {Stage::rollout, "rollout"}, {Stage::report, "report"}};
  return names;
}

inline std::string stage_name(Stage s) {
  for (const auto& [k, n] : stage_names())
    if (k == s) return n;
  return "?";
}

struct PipelineOptions {
  bool resume = false;              // reuse stored artifacts of every stage
  Stage from = Stage::snapshots;    // stages before this one reuse stored artifacts
  Stage until = Stage::report;      // last stage to run
  std::vector<std::string> only_variants;
  std::vector<Index> only_mp;
};

/// Artifact layout inside the output directory.
struct Artifacts {
  std::filesystem::path dir;
  [[nodiscard]] std::filesystem::path train() const { return dir / "snapshots_train.nmsnap"; }
  [[nodiscard]] std::filesystem::path test() const { return dir / "snapshots_test.nmsnap"; }
  [[nodiscard]] std::filesystem::path selection() const { return dir / "snapshots_mp.nmsnap"; }
  [[nodiscard]] std::filesystem::path cae() const { return dir / "cae.nmckpt"; }
  [[nodiscard]] std::filesystem::path magic(Index mp) const { return dir / ("magic_" + std::to_string(mp) + ".json"); }
  [[nodiscard]] std::filesystem::path ts(Index mp) const { return dir / ("ts_" + std::to_string(mp) + ".nmckpt"); }
  [[nodiscard]] std::filesystem::path lstm() const { return dir / "lstm.nmckpt"; }
  [[nodiscard]] std::filesystem::path rollouts() const { return dir / "rollouts.json"; }
  [[nodiscard]] std::filesystem::path stages() const { return dir / "stages.json"; }
  [[nodiscard]] std::filesystem::path trajectories() const { return dir / "trajectories"; }
};

namespace detail {
inline SnapshotSet cut_leading(const SnapshotSet& s, Index cut) {
  if (cut == 0) return s;
  SnapshotSet out = s;
  std::vector<Index> cols;
  for (Index p = 0; p < s.n_params(); ++p) {
    if (cut >= s.times[p].size()) throw ConfigError("time cut removes a whole series");
    out.times[p].erase(out.times[p].begin(), out.times[p].begin() + static_cast<long>(cut));
    for (Index k = cut; k < s.times[p].size(); ++k) cols.push_back(s.offset(p) + k);
  }
  out.data.resize(s.data.rows(), static_cast<Eigen::Index>(cols.size()));
  for (std::size_t j = 0; j < cols.size(); ++j) out.data.col(static_cast<Eigen::Index>(j)) = s.data.col(static_cast<Eigen::Index>(cols[j]));
  return out;
}

inline json read_json(const std::filesystem::path& p) {
  std::ifstream f(p);
  if (!f) throw FormatError("cannot read " + p.string());
  try {
    return json::parse(f);
  } catch (const json::exception& e) {
    throw FormatError(p.string() + ": " + e.what());
  }
}

inline void write_json(const std::filesystem::path& p, const json& j) {
  const auto tmp = p.string() + ".tmp";
  {
    auto f = open_out(tmp);
    f << j.dump(2) << '\n';
  }
  std::filesystem::rename(tmp, p);
}
}  // namespace detail

/// Executes the stages in order up to `opts.until`. With `resume`, a stage
/// whose artifact exists is loaded instead of recomputed; missing
/// artifacts are regenerated. A stage failure is rethrown with the stage
/// name.
class Pipeline {
 public:
  Pipeline(ExperimentConfig cfg, PipelineOptions opts) : cfg_(std::move(cfg)), opts_(std::move(opts)), art_{cfg_.output_dir} {
    cfg_.validate();
    filter_selection();
  }

  Report run() {
    std::filesystem::create_directories(art_.dir);
    if (std::filesystem::exists(art_.stages())) stage_times_ = detail::read_json(art_.stages());
    detail::write_json(art_.dir / "config.json", config_to_json(cfg_));
    guarded(Stage::snapshots, [&] { snapshots(); });
    if (opts_.until >= Stage::cae) guarded(Stage::cae, [&] { cae(); });
    if (opts_.until >= Stage::mp) guarded(Stage::mp, [&] { magic_points(); });
    if (opts_.until >= Stage::ts) guarded(Stage::ts, [&] { teacher_student(); });
    if (opts_.until >= Stage::lstm) guarded(Stage::lstm, [&] { lstm(); });
    if (opts_.until >= Stage::rollout) guarded(Stage::rollout, [&] { rollouts(); });
    if (opts_.until >= Stage::report) guarded(Stage::report, [&] { report(); });
    detail::write_json(art_.stages(), stage_times_);
    return report_;
  }

  [[nodiscard]] const Artifacts& artifacts() const noexcept { return art_; }
  [[nodiscard]] const ExperimentConfig& config() const noexcept { return cfg_; }
  CaeModel& cae_model() { return cae_; }
  [[nodiscard]] const SnapshotSet& train_set() const noexcept { return train_; }
  [[nodiscard]] const SnapshotSet& test_set() const noexcept { return test_; }

 private:
  void filter_selection() {
    if (!opts_.only_variants.empty()) {
      for (const auto& v : opts_.only_variants) (void)parse_kind(v);
      cfg_.variants = opts_.only_variants;
    }
    if (!opts_.only_mp.empty()) cfg_.mp_counts = opts_.only_mp;
    cfg_.validate();
  }

  template <class F>
  void guarded(Stage s, F&& f) {
    current_ = s;
    try {
      f();
    } catch (const std::exception& e) {
      throw std::runtime_error("stage " + stage_name(s) + " failed: " + e.what() + " (artifacts in " + art_.dir.string() + ")");
    }
  }

  [[nodiscard]] bool reuse(const std::filesystem::path& p) const {
    return (opts_.resume || current_ < opts_.from) && std::filesystem::exists(p);
  }

  void record(const std::string& key, double seconds) { stage_times_[key] = seconds; }

  [[nodiscard]] Index mp_modes(Index mp, Index requested) const {
    const Index rank = static_cast<Index>(std::min(selection_.data.rows(), selection_.data.cols()));
    return std::min(requested ? requested : mp, rank);
  }

  void snapshots() {
    const auto base = cfg_.problem_at(1.0);
    auto gen = [&](const std::filesystem::path& path, const std::vector<double>& mus, int stride, const std::string& key) {
      if (reuse(path)) return load_snapshots(path);
      Stopwatch sw;
      auto s = build_snapshot_set(base, mus, stride, cfg_.threads);
      save_snapshots(s, path);
      record(key, sw.seconds());
      return s;
    };
    train_ = gen(art_.train(), cfg_.train_mus(), cfg_.train_stride, "snapshots_train");
    test_ = gen(art_.test(), cfg_.test_mus(), cfg_.test_stride, "snapshots_test");
    const auto mus = cfg_.train_mus();
    selection_ = gen(art_.selection(), {mus.front(), mus.back()}, cfg_.mp_stride, "snapshots_mp");
    if (train_.problem != cfg_.problem || train_.nx != cfg_.n || test_.nx != cfg_.n) {
      throw ConfigError("stored snapshots do not match the config; rerun without --resume");
    }
  }

  void cae() {
    if (reuse(art_.cae())) {
      cae_ = load_cae(art_.cae());
      if (cae_.problem != cfg_.problem || cae_.nx != cfg_.n) throw ConfigError("stored CAE does not match the config");
      return;
    }
    Stopwatch sw;
    cae_ = build_cae(cfg_.problem, cfg_.n, cfg_.n, cfg_.stream(1));
    auto tc = cfg_.cae;
    tc.seed = cfg_.stream(2);
    const auto hist = train_cae(cae_, train_, tc, [&](int epoch, double loss) {
      if ((epoch + 1) % 50 == 0) log::info("cae epoch " + std::to_string(epoch + 1) + " loss " + std::to_string(loss));
    });
    if (hist.aborted) throw NumericError("CAE training diverged: " + hist.message);
    save_cae(cae_, art_.cae());
    record("train_cae", sw.seconds());
  }

  void magic_points() {
    magic_.clear();
    if (!needs_mp()) return;
    const Grid grid(cfg_.n, cfg_.n);
    std::optional<PodBasis> basis;
    for (Index mp : cfg_.mp_counts) {
      const auto path = art_.magic(mp);
      if (reuse(path)) {
        magic_[mp] = detail::read_json(path).at("magic").get<std::vector<Index>>();
        continue;
      }
      Stopwatch sw;
      const Index modes = mp_modes(mp, cfg_.selection_modes);
      if (!basis || basis->modes.cols() < static_cast<Eigen::Index>(modes)) basis = pod(selection_.data, static_cast<Eigen::Index>(modes));
      magic_[mp] = select_magic_points(basis->modes.leftCols(static_cast<Eigen::Index>(modes)), selection_.channels, grid,
                                       corner_cells(grid), mp);
      detail::write_json(path, {{"mp", mp}, {"modes", modes}, {"magic", magic_[mp]}});
      record("select_mp_" + std::to_string(mp), sw.seconds());
    }
  }

  [[nodiscard]] bool needs_mp() const {
    for (const auto& v : cfg_.variants)
      if (is_hyper(parse_kind(v))) return true;
    return false;
  }
  [[nodiscard]] bool needs_ts() const {
    for (const auto& v : cfg_.variants)
      if (is_ts(parse_kind(v))) return true;
    return false;
  }

  [[nodiscard]] SubmeshProjector projector(Index mp) const {
    return build_submesh(Grid(cfg_.n, cfg_.n), magic_.at(mp), fvm::stencil_layers_of(cfg_.problem_at(1.0)));
  }

  void teacher_student() {
    ts_.clear();
    report_.ts.clear();
    if (!needs_ts()) return;
    const int layers = fvm::stencil_layers_of(cfg_.problem_at(1.0));
    for (Index mp : cfg_.mp_counts) {
      const auto proj = projector(mp);
      TsInfo info{mp, proj.s_h(), 0, 0, 0.0, cfg_.ts.epochs};
      if (reuse(art_.ts(mp))) {
        ts_.emplace(mp, load_compressed_decoder(art_.ts(mp), Grid(cfg_.n, cfg_.n), magic_.at(mp), layers));
        info.train_s = stage_times_.value("train_ts_" + std::to_string(mp), 0.0);
      } else {
        Stopwatch sw;
        auto cd = build_compressed_decoder(cae_, proj, cfg_.stream(10 + mp));
        auto tc = cfg_.ts;
        tc.seed = cfg_.stream(20 + mp);
        const auto hist = train_compressed_decoder(cd, cae_, train_, proj, tc);
        if (hist.aborted) throw NumericError("compressed decoder training diverged: " + hist.message);
        save_compressed_decoder(cd, art_.ts(mp));
        info.train_s = sw.seconds();
        record("train_ts_" + std::to_string(mp), info.train_s);
        ts_.emplace(mp, std::move(cd));
      }
      auto& cd = ts_.at(mp);
      info.hidden = static_cast<const nn::Linear&>(cd.heads[0].net.layer(0)).out();
      info.output_dim = cd.output_dim();
      report_.ts.push_back(info);
    }
  }

  void lstm() {
    if (!cfg_.train_lstm) return;
    if (reuse(art_.lstm())) {
      lstm_ = load_lstm(art_.lstm());
      have_lstm_ = true;
      return;
    }
    Stopwatch sw;
    lstm_ = build_lstm(100, 2, cfg_.stream(3));
    auto tc = cfg_.lstm;
    tc.seed = cfg_.stream(4);
    const auto hist = train_lstm(lstm_, cae_, train_, tc);
    if (hist.aborted) throw NumericError("LSTM training diverged: " + hist.message);
    save_lstm(lstm_, art_.lstm());
    have_lstm_ = true;
    record("train_lstm", sw.seconds());
  }

  [[nodiscard]] RolloutConfig rollout_config() const {
    RolloutConfig rc;
    rc.lm.max_residual_evals = cfg_.lm_budget;
    rc.lm.fd_step = cfg_.fd_step;
    rc.escalate = cfg_.escalate;
    return rc;
  }

  VariantResult run_variant(RomKind kind, Index mp, const Matrix* gnat_basis) {
    VariantResult res;
    res.variant = kind_name(kind);
    res.mp = mp;
    std::optional<SubmeshProjector> proj;
    if (mp) {
      proj = projector(mp);
      res.submesh = proj->s_h();
    }
    const RomVariant v = make_variant(kind, proj ? &*proj : nullptr, gnat_basis, is_ts(kind) ? &ts_.at(mp) : nullptr);
    const auto mus = cfg_.test_mus();
    const auto rc = rollout_config();
    const double t0 = static_cast<double>(cfg_.time_cut * static_cast<Index>(cfg_.test_stride)) * cfg_.dt;
    std::vector<LatentTrajectory> trajs(mus.size());
    // Initial latents are encoded up front: the shared model is not re-entrant.
    std::vector<Vector> z0(mus.size());
    for (Index i = 0; i < mus.size(); ++i) {
      if (cfg_.time_cut) z0[i] = encode(cae_, test_.column(test_.offset(i) + cfg_.time_cut));
      else z0[i] = encode(cae_, fvm::initial_condition(cfg_.problem_at(mus[i])).values);
    }
    parallel_for(mus.size(), cfg_.threads,
                 [&](std::size_t i) { trajs[i] = rollout(cfg_.problem_at(mus[i]), cae_, v, rc, z0[i], t0); });
    std::filesystem::create_directories(art_.trajectories());
    double total_ms = 0.0;
    std::size_t steps = 0;
    for (Index i = 0; i < mus.size(); ++i) {
      const auto& t = trajs[i];
      const auto e = trajectory_errors(t, cae_, test_, i, cfg_.time_cut);
      res.errors.push_back(e.stats);
      res.missing.push_back(e.missing);
      res.max_evals.push_back(t.evals.empty() ? 0 : *std::max_element(t.evals.begin(), t.evals.end()));
      res.budgets.push_back(t.budget);
      for (double ms : t.ms) total_ms += ms;
      steps += t.ms.size();
      write_trajectory_csv(t, art_.trajectories() / (res.label() + "_mu" + std::to_string(i) + ".csv"));
    }
    res.avg_step_ms = steps ? total_ms / static_cast<double>(steps) : 0.0;
    res.dynamics_s = total_ms / 1000.0;
    return res;
  }

  void rollouts() {
    if (reuse(art_.rollouts())) {
      const auto j = detail::read_json(art_.rollouts());
      report_.variants.clear();
      for (const auto& v : j.at("variants")) {
        VariantResult r;
        r.variant = v.at("variant").get<std::string>();
        r.mp = v.at("mp").get<Index>();
        r.submesh = v.at("submesh").get<Index>();
        r.errors = stats_from_json(v.at("errors"));
        r.missing = v.at("missing").get<std::vector<Index>>();
        r.max_evals = v.at("max_evals").get<std::vector<int>>();
        r.budgets = v.at("budgets").get<std::vector<int>>();
        r.avg_step_ms = v.at("avg_step_ms").get<double>();
        r.dynamics_s = v.at("dynamics_s").get<double>();
        report_.variants.push_back(std::move(r));
      }
      report_.fom_step_ms = j.at("fom_step_ms").get<double>();
      report_.fom_step_stddev_ms = j.at("fom_step_stddev_ms").get<double>();
      return;
    }
    report_.variants.clear();
    std::optional<Matrix> gnat_basis;
    for (const auto& name : cfg_.variants) {
      const RomKind kind = parse_kind(name);
      if (!is_hyper(kind)) {
        report_.variants.push_back(run_variant(kind, 0, nullptr));
        continue;
      }
      for (Index mp : cfg_.mp_counts) {
        const Matrix* basis = nullptr;
        std::optional<Matrix> local;
        if (is_gnat(kind)) {
          const Index modes = mp_modes(mp, cfg_.gnat_modes);
          local = pod(train_.data, static_cast<Eigen::Index>(modes)).modes;
          basis = &*local;
        }
        report_.variants.push_back(run_variant(kind, mp, basis));
      }
    }
    // FOM step cost at the middle test parameter.
    const auto p = cfg_.problem_at(cfg_.test_mus()[cfg_.test_count / 2]);
    const Field u0 = fvm::step(p, fvm::initial_condition(p));
    const auto t = timing_harness([&] { (void)fvm::step(p, u0); }, 2, 10);
    report_.fom_step_ms = t.mean_ms;
    report_.fom_step_stddev_ms = t.stddev_ms;
    json j = report_json(report_);
    detail::write_json(art_.rollouts(), {{"variants", j["variants"]}, {"fom_step_ms", report_.fom_step_ms},
                                         {"fom_step_stddev_ms", report_.fom_step_stddev_ms}});
  }

  void report() {
    report_.config = config_to_json(cfg_);
    report_.test_mus = cfg_.test_mus();
    const SnapshotSet test_cut = detail::cut_leading(test_, cfg_.time_cut);
    report_.reconstruction = reconstruction_report(cae_, test_cut);
    const auto basis = pod(train_.data, std::min<Eigen::Index>(kLatentDim, std::min(train_.data.rows(), train_.data.cols())));
    report_.pod = projection_errors(test_cut, basis);
    const Eigen::Index rmax = std::min<Eigen::Index>(20, std::min(train_.data.rows(), train_.data.cols()));
    const auto full = pod(train_.data, rmax);
    report_.pod_decay.clear();
    for (Eigen::Index r = 1; r <= rmax; ++r) {
      PodBasis b{full.modes.leftCols(r), full.singular_values};
      report_.pod_decay.push_back(detail::mean_of(projection_errors(test_cut, b)));
    }
    report_.cae_train_reconstruction = detail::mean_of(reconstruction_report(cae_, train_));
    report_.lstm.clear();
    if (have_lstm_) {
      // The LSTM is trained on the full training series, so it predicts from t = 0.
      report_.lstm = lstm_report(lstm_, cae_, test_, cfg_.time_cut);
    }
    report_.offline_s.clear();
    for (const auto& [k, v] : stage_times_.items()) report_.offline_s[k] = v.get<double>();
    report_.environment = {{"compiler", __VERSION__}, {"eigen", std::to_string(EIGEN_WORLD_VERSION) + "." +
                                                                   std::to_string(EIGEN_MAJOR_VERSION) + "." +
                                                                   std::to_string(EIGEN_MINOR_VERSION)},
                           {"threads", cfg_.threads}, {"hardware_threads", std::thread::hardware_concurrency()}};
    emit_report(report_, art_.dir);
  }

  ExperimentConfig cfg_;
  PipelineOptions opts_;
  Artifacts art_;
  Stage current_ = Stage::snapshots;
  json stage_times_ = json::object();
  SnapshotSet train_, test_, selection_;
  CaeModel cae_;
  std::map<Index, std::vector<Index>> magic_;
  std::map<Index, CompressedDecoder> ts_;
  LstmModel lstm_;
  bool have_lstm_ = false;
  Report report_;
};

inline Report run_pipeline(const ExperimentConfig& cfg, const PipelineOptions& opts = {}) {
  return Pipeline(cfg, opts).run();
}

}  // namespace nmrom
