// coworld: one binary, four subcommands — offline dataset generation,
// co-training, checkpoint evaluation, and static plot emission. One command
// per process; exit codes identify the error class (table in the README).

#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <optional>
#include <string>

#include <CLI11.hpp>
#include <json.hpp>

#include "coworld/config.hpp"
#include "coworld/errors.hpp"
#include "coworld/evalkit.hpp"
#include "coworld/plots.hpp"
#include "coworld/rng.hpp"
#include "coworld/trainer.hpp"

namespace fs = std::filesystem;
using nlohmann::json;
using namespace coworld;

namespace {

// exit codes, one per error class
constexpr int kOk = 0;
constexpr int kUnknown = 1;
constexpr int kUsage = 2;
constexpr int kConfig = 3;
constexpr int kFormat = 4;
constexpr int kData = 5;
constexpr int kNumeric = 6;

json read_json_file(const std::string& path, const char* what) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ConfigError(std::string(what) + ": cannot open " + path);
  json j = json::parse(in, nullptr, false);
  if (j.is_discarded()) throw FormatError(std::string(what) + ": invalid JSON in " + path);
  return j;
}

// --env takes a preset name or a path to an env-spec JSON file. Presets are
// the stock transfer pairs: flat source, sloped targets, an actuator-masked
// target that cannot push along y.
EnvSpec resolve_env(const std::string& arg) {
  if (fs::exists(arg)) return env_spec_from_json_strict(read_json_file(arg, "env spec"));
  EnvSpec s;
  if (arg == "flat") return s;
  if (arg == "downhill") {
    s.slope = 0.1;
    return s;
  }
  if (arg == "uphill") {
    s.slope = -0.1;
    return s;
  }
  if (arg == "nofoot") {
    s.masked_action_dims = {1};
    return s;
  }
  throw ConfigError("env: '" + arg +
                    "' is neither a file nor a preset (flat, downhill, uphill, nofoot)");
}

std::string default_run_root() {
  const char* root = std::getenv("CWLD_RUN_DIR");
  return root && *root ? std::string(root) : std::string("runs");
}

struct GenOpts {
  std::string env = "flat";
  std::string out;
  std::string config;
  int64_t budget = 0;
  uint64_t seed = 0;
  bool force = false;
};

int cmd_gen_dataset(const GenOpts& o) {
  EnvSpec spec = resolve_env(o.env);
  CoWorldConfig cfg;
  if (!o.config.empty()) cfg = CoWorldConfig::from_json(read_json_file(o.config, "config"));
  cfg.seed = o.seed;
  cfg.source_env = spec;
  cfg.target_env = spec;
  if (fs::exists(o.out) && !fs::is_empty(o.out)) {
    if (!o.force) throw ConfigError("out: " + o.out + " exists and is not empty (use --force)");
    fs::remove_all(o.out);
  }
  Rng rng(o.seed);
  json manifest = generate_medium_replay(cfg, spec, o.out, o.budget, rng);
  std::printf("%s\n", manifest.dump(2).c_str());
  return kOk;
}

struct TrainOpts {
  std::string config;
  std::string ablation;
  std::optional<uint64_t> seed;
  std::string run_dir;
  bool print_config = false;
  bool force = false;
};

int cmd_train(const TrainOpts& o) {
  CoWorldConfig cfg;
  if (!o.config.empty())
    cfg = CoWorldConfig::from_json(read_json_file(o.config, "config"));
  else if (!o.print_config)
    throw UsageError("train: --config is required (except with --print-config)");
  if (!o.ablation.empty()) cfg.ablation = o.ablation;
  if (o.seed) cfg.seed = *o.seed;
  if (!o.run_dir.empty()) cfg.run_dir = o.run_dir;
  if (cfg.run_dir.empty()) {
    char tag[24];
    std::snprintf(tag, sizeof tag, "%016llx", (unsigned long long)cfg.config_hash());
    cfg.run_dir = default_run_root() + "/run-" + tag;
  }
  if (o.print_config) {  // echo the fully resolved config, no side effects
    std::printf("%s\n", cfg.to_json().dump(2).c_str());
    return kOk;
  }
  cfg.validate();
  if (o.force && fs::exists(cfg.run_dir)) fs::remove_all(cfg.run_dir);
  std::string run = coworld_train(cfg);
  std::printf("run: %s\n", run.c_str());
  return kOk;
}

struct EvalOpts {
  std::string checkpoint;
  std::string env;
  int episodes = 10;
  uint64_t seed = 0;
};

int cmd_eval(const EvalOpts& o) {
  if (o.episodes < 1) throw UsageError("episodes: must be >= 1");
  json meta = read_checkpoint_meta(o.checkpoint);
  if (!meta.contains("config")) throw FormatError("checkpoint meta: missing config block");
  CoWorldConfig cfg = CoWorldConfig::from_json(meta.at("config"));
  bool has_source = meta.value("has_source", false);
  Rng init(0);  // placeholder init; the load overwrites every param
  AgentBundle target(cfg, cfg.target_env, "target", init);
  std::optional<AgentBundle> source;
  if (has_source) source.emplace(cfg, cfg.source_env, "source", init);
  load_checkpoint(o.checkpoint, target, source ? &*source : nullptr);
  EnvSpec spec = o.env.empty() ? cfg.target_env : resolve_env(o.env);
  EvalReport rep = evaluate_policy(spec, target.wm, target.ac, o.episodes, o.seed);
  json out{{"schema", 1},        {"checkpoint", o.checkpoint}, {"env", spec},
           {"episodes", o.episodes}, {"seed", o.seed},         {"report", rep}};
  std::printf("%s\n", out.dump(2).c_str());
  return kOk;
}

struct PlotOpts {
  std::string run_dir;
  std::string out;
};

int cmd_plot(const PlotOpts& o) {
  std::string out = o.out.empty() ? o.run_dir + "/plots" : o.out;
  for (const std::string& p : render_run_plots(o.run_dir + "/metrics.csv", out))
    std::printf("%s\n", p.c_str());
  return kOk;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"co-trained world models for the toy runner transfer tasks"};
  app.require_subcommand(1);

  GenOpts g;
  TrainOpts t;
  EvalOpts e;
  PlotOpts p;

  CLI::App* gen = app.add_subcommand("gen-dataset", "Collect a medium-replay offline dataset");
  gen->add_option("--env", g.env, "Env preset (flat|downhill|uphill|nofoot) or spec JSON file");
  gen->add_option("--out", g.out, "Dataset directory to write")->required();
  gen->add_option("--budget", g.budget, "Env-step budget for collection")->required();
  gen->add_option("--config", g.config, "Collector hyperparameter JSON (library defaults otherwise)");
  gen->add_option("--seed", g.seed, "Collector seed");
  gen->add_flag("--force", g.force, "Replace an existing non-empty output directory");

  CLI::App* tr = app.add_subcommand("train", "Run the full co-training pipeline");
  tr->add_option("--config", t.config, "Run config JSON");
  tr->add_option("--ablation", t.ablation, "Ablation switch")
      ->check(CLI::IsMember({"none", "no_align", "no_value_reg", "offline_baseline"}));
  tr->add_option("--seed", t.seed, "Seed override");
  tr->add_option("--run-dir", t.run_dir, "Run directory override");
  tr->add_flag("--print-config", t.print_config, "Echo the resolved config and exit");
  tr->add_flag("--force", t.force, "Replace an existing run directory");

  CLI::App* ev = app.add_subcommand("eval", "Evaluate a checkpoint's target policy");
  ev->add_option("--checkpoint", e.checkpoint, "Checkpoint file")->required();
  ev->add_option("--env", e.env, "Env preset or spec JSON (default: the checkpoint's target env)");
  ev->add_option("--episodes", e.episodes, "Evaluation episodes");
  ev->add_option("--seed", e.seed, "Evaluation seed");

  CLI::App* pl = app.add_subcommand("plot", "Render a run's metrics.csv to SVG figures");
  pl->add_option("--run-dir", p.run_dir, "Run directory holding metrics.csv")->required();
  pl->add_option("--out", p.out, "Output directory (default: <run-dir>/plots)");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& err) {
    int code = app.exit(err);
    return code == 0 ? kOk : kUsage;
  }

  try {
    if (gen->parsed()) return cmd_gen_dataset(g);
    if (tr->parsed()) return cmd_train(t);
    if (ev->parsed()) return cmd_eval(e);
    return cmd_plot(p);
  } catch (const UsageError& err) {
    std::fprintf(stderr, "coworld: %s\n", err.what());
    return kUsage;
  } catch (const ConfigError& err) {
    std::fprintf(stderr, "coworld: %s\n", err.what());
    return kConfig;
  } catch (const FormatError& err) {
    std::fprintf(stderr, "coworld: %s\n", err.what());
    return kFormat;
  } catch (const DataError& err) {
    std::fprintf(stderr, "coworld: %s\n", err.what());
    return kData;
  } catch (const NumericError& err) {
    std::fprintf(stderr, "coworld: %s\n", err.what());
    return kNumeric;
  } catch (const std::exception& err) {
    std::fprintf(stderr, "coworld: internal error: %s\n", err.what());
    return kUnknown;
  }
}
