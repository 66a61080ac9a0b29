#include <CLI11.hpp>

#include <cmath>
#include <filesystem>
#include <iostream>

#include "nmrom/pipeline.hpp"

using namespace nmrom;

namespace {

struct Common {
  std::string config;
  std::string preset;
  std::string output_dir;
  std::vector<std::string> set;
  long seed = -1;
  int threads = 0;
  bool resume = false;
  bool escalate = false;
  std::vector<std::string> variants;
  std::vector<Index> mp;
};

void add_common(CLI::App* app, Common& c, bool selection) {
  app->add_option("--config", c.config, "key = value or JSON config file");
  app->add_option("--preset", c.preset, "ncl-desk, ncl-paper, swe-desk or smoke");
  app->add_option("--output,-o", c.output_dir, "artifact directory");
  app->add_option("--set", c.set, "extra key=value overrides");
  app->add_option("--seed", c.seed, "master seed");
  app->add_option("--threads", c.threads, "worker threads for snapshots and rollouts");
  app->add_flag("--resume", c.resume, "reuse every stored artifact");
  app->add_flag("--escalate-lm", c.escalate, "rerun truncated rollouts with a 13-evaluation budget");
  if (selection) {
    app->add_option("--variant", c.variants, "restrict rollouts to these variants");
    app->add_option("--mp", c.mp, "restrict to these magic-point counts");
  }
}

ExperimentConfig resolve(const Common& c) {
  ExperimentConfig cfg = preset(c.preset.empty() ? "ncl-desk" : c.preset);
  if (!c.config.empty()) cfg = load_config(c.config, cfg);
  for (const auto& kv : c.set) {
    const auto eq = kv.find('=');
    if (eq == std::string::npos) throw ConfigError("--set expects key=value, got '" + kv + "'");
    apply_setting(cfg, detail::trim(kv.substr(0, eq)), kv.substr(eq + 1));
  }
  if (!c.output_dir.empty()) cfg.output_dir = c.output_dir;
  if (c.seed >= 0) cfg.seed = static_cast<std::uint64_t>(c.seed);
  if (c.threads > 0) cfg.threads = c.threads;
  if (c.escalate) cfg.escalate = true;
  cfg.validate();
  return cfg;
}

int run_stage(const Common& c, Stage from, Stage until) {
  const auto cfg = resolve(c);
  PipelineOptions opts;
  opts.resume = c.resume;
  opts.from = from;
  opts.until = until;
  opts.only_variants = c.variants;
  opts.only_mp = c.mp;
  Pipeline pipe(cfg, opts);
  pipe.run();
  std::cout << stage_name(until) << ": artifacts in " << cfg.output_dir << '\n';
  if (until == Stage::report) {
    std::ifstream f(std::filesystem::path(cfg.output_dir) / "report.txt");
    std::cout << f.rdbuf();
  }
  return 0;
}

/// A short end-to-end run on the smoke preset with sanity checks on the
/// outputs.
int selftest(const Common& c) {
  auto cfg = preset("smoke");
  cfg.output_dir = c.output_dir.empty() ? (std::filesystem::temp_directory_path() / "nmrom-selftest").string() : c.output_dir;
  if (c.threads > 0) cfg.threads = c.threads;
  std::filesystem::remove_all(cfg.output_dir);
  const Report r = run_pipeline(cfg);
  int failures = 0;
  auto check = [&](bool ok, const std::string& what) {
    std::cout << (ok ? "[PASS] " : "[FAIL] ") << what << '\n';
    failures += ok ? 0 : 1;
  };
  bool finite = true;
  for (double m : report_metrics(r)) finite &= std::isfinite(m);
  check(finite, "all reported errors are finite");
  bool budget = true;
  for (const auto& v : r.variants)
    for (std::size_t i = 0; i < v.max_evals.size(); ++i) budget &= v.max_evals[i] <= v.budgets[i];
  check(budget, "no step exceeds its residual-evaluation budget");
  check(r.variants.size() == 1 + 3 * cfg.mp_counts.size(), "every variant produced a result");
  for (const char* f : {"report.json", "report.txt", "error_vs_param.csv", "error_vs_mp.csv", "pod_vs_cae.csv", "pod_decay.csv"})
    check(std::filesystem::exists(std::filesystem::path(cfg.output_dir) / f), std::string("wrote ") + f);
  std::cout << (failures ? "selftest failed\n" : "selftest passed\n");
  return failures ? 1 : 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Nonlinear-manifold reduced-order models with hyper-reduction"};
  app.require_subcommand(1);
  Common c;
  struct Sub {
    const char* name;
    const char* help;
    Stage stage;
  };
  const Sub subs[] = {
      {"generate-snapshots", "run the full-order solver for training and test parameters", Stage::snapshots},
      {"train-cae", "train the convolutional autoencoder", Stage::cae},
      {"select-mp", "select magic points for each configured count", Stage::mp},
      {"train-ts", "train the compressed decoders", Stage::ts},
      {"train-lstm", "train the LSTM baseline", Stage::lstm},
      {"rollout", "integrate every configured ROM variant on the test parameters", Stage::rollout},
      {"report", "write report.json, CSV tables and report.txt", Stage::report},
  };
  std::vector<std::pair<CLI::App*, Stage>> stage_cmds;
  for (const auto& s : subs) {
    auto* cmd = app.add_subcommand(s.name, s.help);
    add_common(cmd, c, s.stage >= Stage::mp);
    stage_cmds.emplace_back(cmd, s.stage);
  }
  auto* run = app.add_subcommand("run", "run every stage");
  add_common(run, c, true);
  auto* self = app.add_subcommand("selftest", "short end-to-end run with sanity checks");
  self->add_option("--output,-o", c.output_dir, "artifact directory");
  self->add_option("--threads", c.threads, "worker threads");

  CLI11_PARSE(app, argc, argv);
  try {
    if (run->parsed()) return run_stage(c, Stage::snapshots, Stage::report);
    if (self->parsed()) return selftest(c);
    for (const auto& [cmd, stage] : stage_cmds)
      if (cmd->parsed()) return run_stage(c, stage, stage);
  } catch (const ConfigError& e) {
    std::cerr << "config error: " << e.what() << '\n';
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 1;
  }
  return 0;
}
