#include "cli.hpp"

#include <CLI11.hpp>

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <optional>
#include <ostream>
#include <sstream>

#include "npgrid/checkpoint.hpp"
#include "npgrid/config.hpp"
#include "npgrid/datasets.hpp"
#include "npgrid/evaluation.hpp"
#include "npgrid/training.hpp"

namespace npgrid {

namespace {

namespace fs = std::filesystem;

struct Flags {
  std::string config;
  std::vector<std::string> overrides;
  std::optional<long long> seed;
  std::optional<std::size_t> threads;
  std::string out = "out";
  bool verbose = false;
  std::string checkpoint;
  std::size_t task_id = 0;
  std::vector<std::size_t> epsilons;
};

class UsageError : public std::runtime_error {
  using std::runtime_error::runtime_error;
};

std::string keys_footer() {
  std::ostringstream s;
  s << "Config keys (file sections, --override section.key=value, env NPGRID_SECTION_KEY):\n";
  for (const auto& spec : config_schema()) {
    s << "  " << spec.key << " = " << (spec.default_value.empty() ? "\"\"" : spec.default_value);
    if (!spec.choices.empty()) {
      s << "  {";
      for (std::size_t i = 0; i < spec.choices.size(); ++i) s << (i ? "," : "") << spec.choices[i];
      s << "}";
    }
    s << "\n      " << spec.help << "\n";
  }
  s << "Presets (run.preset): desk = 2000/200/200 tasks, 20 epochs; "
       "paper = 50000/10000/5000 tasks, 100 epochs.\n";
  return s.str();
}

void add_common(CLI::App* cmd, Flags& f) {
  cmd->add_option("--config", f.config, "Config file (sectioned key = value)");
  cmd->add_option("--override", f.overrides, "section.key=value, repeatable")->take_all();
  cmd->add_option("--seed", f.seed, "Base seed (same as run.seed)");
  cmd->add_option("--out", f.out, "Output directory")->capture_default_str();
  cmd->add_option("--threads", f.threads, "Worker thread cap (same as run.threads)");
  cmd->add_flag("--verbose", f.verbose, "Per-epoch progress and extra diagnostics");
  cmd->footer(keys_footer());
}

ResolvedConfig resolve(const Flags& f, std::ostream& err) {
  std::vector<std::string> overrides = f.overrides;
  if (f.seed) overrides.push_back("run.seed=" + std::to_string(*f.seed));
  if (f.threads) overrides.push_back("run.threads=" + std::to_string(*f.threads));
  std::optional<fs::path> file;
  if (!f.config.empty()) file = fs::path(f.config);
  ResolvedConfig cfg = parse_config(file, overrides);
  err << "[npgrid] preset: " << cfg.preset() << "\n";
  for (const auto& line : cfg.describe()) err << "[config] " << line << "\n";
  return cfg;
}

void write_text(const fs::path& path, const std::string& text) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  std::ofstream o(path, std::ios::binary | std::ios::trunc);
  if (!o) throw std::runtime_error("cannot write " + path.string());
  o << text;
  if (!o) throw std::runtime_error("write failed for " + path.string());
}

std::string json_lines(const std::vector<nlohmann::json>& records) {
  std::string s;
  for (const auto& r : records) s += r.dump() + "\n";
  return s;
}

bool explicit_source(const ResolvedValue& v) {
  return v.source != "default" && v.source.rfind("preset:", 0) != 0;
}

struct LoadedModel {
  Checkpoint checkpoint;
  DataConfig data;
  std::uint64_t seed = 0;
  std::size_t threads = 1;
  EvalSettings eval;
};

// The dataset recorded in the checkpoint, with data.* keys the user set
// explicitly taking precedence.
LoadedModel load_model(const Flags& f, const ResolvedConfig& cfg) {
  LoadedModel m;
  const fs::path path = f.checkpoint.empty() ? fs::path(f.out) / "checkpoint.gbcn" : fs::path(f.checkpoint);
  m.checkpoint = restore_checkpoint(path);
  nlohmann::json data = m.checkpoint.config.at("data");
  const nlohmann::json requested = to_train_config(cfg).data.to_json();
  for (const auto& [key, value] : cfg.values()) {
    if (key.rfind("data.", 0) == 0 && explicit_source(value)) {
      const std::string name = key.substr(5);
      data[name] = requested.at(name);
    }
  }
  m.data = DataConfig::from_json(data);
  m.seed = static_cast<std::uint64_t>(cfg.get_int("run.seed"));
  m.threads = cfg.get_size("run.threads");
  m.eval = to_eval_settings(cfg);
  return m;
}

Task test_task(const LoadedModel& m, std::size_t task_id) {
  const TaskSource source(m.data, m.seed);
  if (task_id >= source.size(Split::Test)) {
    throw UsageError("--task-id " + std::to_string(task_id) + " is out of range (" +
                     std::to_string(source.size(Split::Test)) + " test tasks)");
  }
  return source.task(Split::Test, task_id);
}

int cmd_gen_data(const Flags& f, std::ostream& out, std::ostream& err) {
  const ResolvedConfig cfg = resolve(f, err);
  const TrainConfig tc = to_train_config(cfg);
  if (tc.data.source != DataSourceKind::GP) {
    throw UsageError("gen-data synthesizes GP tasks; set data.source = gp");
  }
  const TaskSource source(tc.data, tc.seed);
  nlohmann::json summary = {{"kernel", to_string(tc.data.kernel)}, {"seed", tc.seed}};
  for (Split split : {Split::Train, Split::Val, Split::Test}) {
    std::vector<RawSeries> series;
    for (std::size_t i = 0; i < source.size(split); ++i) series.push_back(source.series(split, i));
    const fs::path dir = fs::path(f.out) / "data" / to_string(split);
    save_series_dir(dir, series, "gp:" + to_string(tc.data.kernel));
    summary[to_string(split)] = {{"dir", dir.string()}, {"tasks", series.size()}};
  }
  out << summary.dump() << "\n";
  return kExitOk;
}

int cmd_train(const Flags& f, std::ostream& out, std::ostream& err) {
  const ResolvedConfig cfg = resolve(f, err);
  const TrainConfig tc = to_train_config(cfg);
  TrainOptions options;
  options.out_dir = f.out;
  options.on_epoch = [&](const EpochRecord& r) {
    if (f.verbose) {
      err << "[train] epoch " << r.epoch << "/" << tc.epochs << " train_loss=" << r.train_loss
          << " val_ll=" << r.val_ll << " kl_mean=" << r.kl_mean << "\n";
    }
  };
  const TrainResult result = train(tc, options);
  out << nlohmann::json{{"checkpoint", (fs::path(f.out) / "checkpoint.gbcn").string()},
                        {"metrics", (fs::path(f.out) / "metrics.jsonl").string()},
                        {"model", to_string(tc.model.kind)},
                        {"epochs", tc.epochs},
                        {"best_epoch", result.best.epoch},
                        {"best_val_ll", *result.best.best_val_ll}}
             .dump()
      << "\n";
  return kExitOk;
}

int cmd_eval(const Flags& f, std::ostream& out, std::ostream& err) {
  const ResolvedConfig cfg = resolve(f, err);
  const LoadedModel m = load_model(f, cfg);
  const TaskSource source(m.data, m.seed);
  const LlEstimate ll = estimate_predictive_ll(m.checkpoint.model, m.checkpoint.params,
                                               source.tasks(Split::Test), m.eval.n_z, m.seed,
                                               m.threads);
  nlohmann::json summary = ll.to_json();
  summary["model"] = to_string(m.checkpoint.model.kind);
  summary["kernel"] = to_string(m.data.kernel);
  summary["checkpoint_epoch"] = m.checkpoint.epoch;
  summary["seed"] = m.seed;
  const std::string text = summary.dump(2) + "\n";
  write_text(fs::path(f.out) / "eval.json", text);
  out << text;
  return kExitOk;
}

int cmd_probe(const Flags& f, std::ostream& out, std::ostream& err) {
  const ResolvedConfig cfg = resolve(f, err);
  const LoadedModel m = load_model(f, cfg);
  if (!is_latent(m.checkpoint.model.kind)) {
    throw UsageError("probe needs a latent model (np or gbconp), the checkpoint holds " +
                     to_string(m.checkpoint.model.kind));
  }
  const TaskSource source(m.data, m.seed);
  const std::vector<Task> tasks = source.tasks(Split::Test);
  const auto epsilons = f.epsilons.empty() ? m.eval.probe_epsilons : f.epsilons;
  std::vector<nlohmann::json> records;
  for (std::size_t eps : epsilons) {
    records.push_back(probe_global_uncertainty(m.checkpoint.model, m.checkpoint.params, tasks, eps,
                                               m.seed, m.threads)
                          .to_json());
  }
  const std::string text = json_lines(records);
  write_text(fs::path(f.out) / "probe.json", text);
  out << text;
  return kExitOk;
}

int cmd_manipulate(const Flags& f, std::ostream& out, std::ostream& err) {
  const ResolvedConfig cfg = resolve(f, err);
  const LoadedModel m = load_model(f, cfg);
  const ManipulationGrid grid = latent_manipulation_grid(
      m.checkpoint.model, m.checkpoint.params, test_task(m, f.task_id), m.eval.manip_dims,
      m.eval.manip_steps, m.eval.manip_pct_lo, m.eval.manip_pct_hi, m.eval.manip_relax);
  const fs::path path = fs::path(f.out) / "grid.jsonl";
  write_text(path, json_lines(grid.to_json_lines()));
  out << nlohmann::json{{"grid", path.string()}, {"cells", grid.cells.size()}}.dump() << "\n";
  return kExitOk;
}

int cmd_bands(const Flags& f, std::ostream& out, std::ostream& err) {
  const ResolvedConfig cfg = resolve(f, err);
  const LoadedModel m = load_model(f, cfg);
  const auto bands = emit_prediction_bands(m.checkpoint.model, m.checkpoint.params,
                                           test_task(m, f.task_id), f.task_id, m.eval.bands_n_z,
                                           m.seed);
  std::vector<nlohmann::json> records;
  for (const auto& b : bands) records.push_back(b.to_json());
  const fs::path path = fs::path(f.out) / "bands.jsonl";
  write_text(path, json_lines(records));
  out << nlohmann::json{{"bands", path.string()}, {"count", bands.size()}}.dump() << "\n";
  return kExitOk;
}

}  // namespace

int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  CLI::App app{"npgrid: neural processes on 1-D regression tasks", "npgrid"};
  app.require_subcommand(1);
  app.footer("Run 'npgrid <subcommand> --help' for the config keys each subcommand accepts.");
  Flags f;

  auto* gen = app.add_subcommand("gen-data", "Synthesize GP train/val/test task files under <out>/data");
  auto* tr = app.add_subcommand("train", "Train a model; writes checkpoint.gbcn and metrics.jsonl");
  auto* ev = app.add_subcommand("eval", "Held-out predictive log-likelihood; writes eval.json");
  auto* pr = app.add_subcommand("probe", "Global-uncertainty probe over context sizes; writes probe.json");
  auto* mp = app.add_subcommand("manipulate", "Latent manipulation grid for one task; writes grid.jsonl");
  auto* bd = app.add_subcommand("bands", "Prediction bands for one task; writes bands.jsonl");
  for (auto* cmd : {gen, tr, ev, pr, mp, bd}) add_common(cmd, f);
  for (auto* cmd : {ev, pr, mp, bd}) {
    cmd->add_option("--checkpoint", f.checkpoint, "Checkpoint file (default <out>/checkpoint.gbcn)");
  }
  for (auto* cmd : {mp, bd}) cmd->add_option("--task-id", f.task_id, "Test task index")->capture_default_str();
  pr->add_option("--epsilon", f.epsilons, "Context size to probe, repeatable (default eval.probe_epsilons)")
      ->take_all();

  std::vector<std::string> reversed(args.rbegin(), args.rend());
  try {
    app.parse(reversed);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e, out, err);
    return code == 0 ? kExitOk : kExitUsage;
  }

  try {
    if (gen->parsed()) return cmd_gen_data(f, out, err);
    if (tr->parsed()) return cmd_train(f, out, err);
    if (ev->parsed()) return cmd_eval(f, out, err);
    if (pr->parsed()) return cmd_probe(f, out, err);
    if (mp->parsed()) return cmd_manipulate(f, out, err);
    if (bd->parsed()) return cmd_bands(f, out, err);
  } catch (const UsageError& e) {
    err << "error: " << e.what() << "\n";
    return kExitUsage;
  } catch (const ContractError& e) {
    err << "error: " << e.what() << "\n";
    return kExitUsage;
  } catch (const TrainingAborted& e) {
    err << "error: " << e.what() << " (last good checkpoint kept)\n";
    return kExitRuntime;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << "\n";
    return kExitRuntime;
  }
  err << app.help();
  return kExitUsage;
}

}  // namespace npgrid
