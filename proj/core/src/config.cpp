#include "npgrid/config.hpp"

#include <algorithm>
#include <cctype>
#include <charconv>
#include <cstdlib>
#include <fstream>
#include <sstream>
#include <tuple>
#include <cmath>

extern char** environ;

namespace npgrid {

namespace {

std::string trim(std::string_view s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string_view::npos) return {};
  const auto e = s.find_last_not_of(" \t\r");
  return std::string(s.substr(b, e - b + 1));
}

std::string lowercase(std::string s) {
  std::transform(s.begin(), s.end(), s.begin(),
                 [](unsigned char c) { return static_cast<char>(std::tolower(c)); });
  return s;
}

bool parse_ll(const std::string& s, long long& out) {
  const char* end = s.data() + s.size();
  auto [ptr, ec] = std::from_chars(s.data(), end, out);
  return ec == std::errc() && ptr == end && !s.empty();
}

bool parse_real(const std::string& s, double& out) {
  if (s.empty()) return false;
  char* end = nullptr;
  out = std::strtod(s.c_str(), &end);
  return end == s.c_str() + s.size() && std::isfinite(out);
}

bool parse_list(const std::string& s, std::vector<std::size_t>& out) {
  out.clear();
  std::stringstream ss(s);
  std::string item;
  while (std::getline(ss, item, ',')) {
    long long v = 0;
    if (!parse_ll(trim(item), v) || v < 0) return false;
    out.push_back(static_cast<std::size_t>(v));
  }
  return !out.empty();
}

const char* type_name(ValueType t) {
  switch (t) {
    case ValueType::Int: return "integer";
    case ValueType::Real: return "real number";
    case ValueType::String: return "string";
    case ValueType::Bool: return "boolean";
    case ValueType::UIntList: return "comma-separated list of non-negative integers";
  }
  return "value";
}

const KeySpec* find_spec(const std::string& key) {
  for (const auto& spec : config_schema()) {
    if (spec.key == key) return &spec;
  }
  return nullptr;
}

void check_value(const KeySpec& spec, const std::string& value, const std::string& source) {
  bool ok = true;
  long long i = 0;
  double r = 0.0;
  std::vector<std::size_t> list;
  switch (spec.type) {
    case ValueType::Int: ok = parse_ll(value, i); break;
    case ValueType::Real: ok = parse_real(value, r); break;
    case ValueType::Bool: ok = value == "true" || value == "false"; break;
    case ValueType::UIntList: ok = parse_list(value, list); break;
    case ValueType::String: break;
  }
  if (!ok) {
    throw ConfigError("config key '" + spec.key + "' from " + source + ": expected a " +
                      type_name(spec.type) + ", got '" + value + "'");
  }
  if (!spec.choices.empty() &&
      std::find(spec.choices.begin(), spec.choices.end(), lowercase(value)) == spec.choices.end()) {
    std::string allowed;
    for (const auto& c : spec.choices) allowed += (allowed.empty() ? "" : ", ") + c;
    throw ConfigError("config key '" + spec.key + "' from " + source + ": '" + value +
                      "' is not one of " + allowed);
  }
}

std::string strip_quotes(std::string v) {
  if (v.size() >= 2 && ((v.front() == '"' && v.back() == '"') || (v.front() == '\'' && v.back() == '\''))) {
    return v.substr(1, v.size() - 2);
  }
  return v;
}

}  // namespace

const std::vector<KeySpec>& config_schema() {
  static const std::vector<KeySpec> schema = {
      {"run.preset", ValueType::String, "desk", "task counts and epochs preset", {"desk", "paper"}},
      {"run.seed", ValueType::Int, "0", "base seed for all randomness", {}},
      {"run.threads", ValueType::Int, "1", "worker threads for per-task work", {}},
      {"model.kind", ValueType::String, "gbconp", "model family", {"cnp", "np", "convcnp", "gbconp"}},
      {"model.mlp_hidden", ValueType::UIntList, "64,64", "hidden widths of every MLP", {}},
      {"model.conv_depth", ValueType::Int, "4", "convolution layers in the backbone", {}},
      {"model.conv_channels", ValueType::Int, "32", "backbone channels", {}},
      {"model.conv_kernel", ValueType::Int, "5", "backbone kernel size (odd)", {}},
      {"model.r_dim", ValueType::Int, "128", "deterministic representation size (cnp, np)", {}},
      {"model.d_z", ValueType::Int, "128", "latent dimension (np, gbconp)", {}},
      {"model.points_per_unit", ValueType::Int, "32", "grid resolution per unit of normalized x", {}},
      {"model.grid_margin", ValueType::Real, "0.1", "grid margin beyond the data range", {}},
      {"model.sigma_floor", ValueType::Real, "0.001", "lower bound of every predicted scale", {}},
      {"data.source", ValueType::String, "gp", "gp synthesis, a gen-data directory, or a csv file", {"gp", "dir", "csv"}},
      {"data.kernel", ValueType::String, "rbf", "GP kernel for synthetic data", {"rbf", "periodic", "matern32"}},
      {"data.path", ValueType::String, "", "dataset directory or csv file", {}},
      {"data.n_points", ValueType::Int, "100", "points per task (all are targets)", {}},
      {"data.min_context", ValueType::Int, "1", "smallest context size", {}},
      {"data.max_context", ValueType::Int, "50", "largest context size", {}},
      {"data.train_tasks", ValueType::Int, "2000", "training tasks per epoch", {}},
      {"data.val_tasks", ValueType::Int, "200", "validation tasks", {}},
      {"data.test_tasks", ValueType::Int, "200", "test tasks", {}},
      {"train.epochs", ValueType::Int, "20", "training epochs", {}},
      {"train.batch_size", ValueType::Int, "16", "tasks per optimizer step", {}},
      {"train.learning_rate", ValueType::Real, "0.001", "Adam learning rate", {}},
      {"train.n_z", ValueType::Int, "1", "latent samples per task in the training ELBO", {}},
      {"train.val_n_z", ValueType::Int, "16", "latent samples per task for validation", {}},
      {"eval.n_z", ValueType::Int, "512", "latent samples per task for eval", {}},
      {"eval.probe_epsilons", ValueType::UIntList, "1,5,25,50", "context sizes swept by probe", {}},
      {"eval.bands_n_z", ValueType::Int, "10", "bands emitted per task for latent models", {}},
      {"eval.manip_dims", ValueType::UIntList, "0,1", "the two latent dimensions swept by manipulate", {}},
      {"eval.manip_steps", ValueType::Int, "7", "grid steps per dimension", {}},
      {"eval.manip_pct_lo", ValueType::Real, "5", "lowest percentile of the sweep", {}},
      {"eval.manip_pct_hi", ValueType::Real, "95", "highest percentile of the sweep", {}},
      {"eval.manip_relax", ValueType::Real, "40", "multiplier on sigma_z for the sweep", {}},
  };
  return schema;
}

const std::map<std::string, std::map<std::string, std::string>>& config_presets() {
  static const std::map<std::string, std::map<std::string, std::string>> presets = {
      {"desk",
       {{"data.train_tasks", "2000"}, {"data.val_tasks", "200"}, {"data.test_tasks", "200"},
        {"train.epochs", "20"}}},
      {"paper",
       {{"data.train_tasks", "50000"}, {"data.val_tasks", "10000"}, {"data.test_tasks", "5000"},
        {"train.epochs", "100"}}},
  };
  return presets;
}

const ResolvedValue& ResolvedConfig::at(const std::string& key) const {
  auto it = values_.find(key);
  if (it == values_.end()) throw ConfigError("unknown config key '" + key + "'");
  return it->second;
}

long long ResolvedConfig::get_int(const std::string& key) const {
  long long v = 0;
  parse_ll(text(key), v);
  return v;
}

std::size_t ResolvedConfig::get_size(const std::string& key) const {
  const long long v = get_int(key);
  if (v < 0) {
    throw ConfigError("config key '" + key + "' from " + at(key).source + " must be non-negative");
  }
  return static_cast<std::size_t>(v);
}

double ResolvedConfig::get_real(const std::string& key) const {
  double v = 0.0;
  parse_real(text(key), v);
  return v;
}

bool ResolvedConfig::get_bool(const std::string& key) const { return text(key) == "true"; }

std::vector<std::size_t> ResolvedConfig::get_list(const std::string& key) const {
  std::vector<std::size_t> v;
  parse_list(text(key), v);
  return v;
}

std::vector<std::string> ResolvedConfig::describe() const {
  std::vector<std::string> lines;
  for (const auto& [key, value] : values_) {
    lines.push_back(key + " = " + value.text + "  (" + value.source + ")");
  }
  return lines;
}

std::vector<std::pair<std::string, std::string>> parse_config_text(const std::string& text,
                                                                   const std::string& origin) {
  std::vector<std::pair<std::string, std::string>> out;
  std::istringstream in(text);
  std::string line;
  std::string section;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    const auto hash = line.find('#');
    if (hash != std::string::npos) line.erase(hash);
    const std::string t = trim(line);
    if (t.empty()) continue;
    const std::string where = origin + ":" + std::to_string(line_no);
    if (t.front() == '[') {
      if (t.back() != ']') throw ConfigError(where + ": malformed section header '" + t + "'");
      section = trim(t.substr(1, t.size() - 2));
      if (section.empty()) throw ConfigError(where + ": empty section name");
      continue;
    }
    const auto eq = t.find('=');
    if (eq == std::string::npos) throw ConfigError(where + ": expected 'key = value', got '" + t + "'");
    const std::string name = trim(t.substr(0, eq));
    if (name.empty()) throw ConfigError(where + ": missing key before '='");
    const std::string key = section.empty() ? name : section + "." + name;
    out.emplace_back(key, strip_quotes(trim(t.substr(eq + 1))));
  }
  return out;
}

std::map<std::string, std::string> npgrid_environment() {
  std::map<std::string, std::string> env;
  for (char** e = environ; e != nullptr && *e != nullptr; ++e) {
    const std::string_view entry(*e);
    if (entry.rfind("NPGRID_", 0) != 0) continue;
    const auto eq = entry.find('=');
    if (eq == std::string_view::npos) continue;
    env.emplace(std::string(entry.substr(0, eq)), std::string(entry.substr(eq + 1)));
  }
  return env;
}

namespace {

std::string env_to_key(const std::string& var) {
  const std::string rest = lowercase(var.substr(std::string("NPGRID_").size()));
  if (find_spec("run." + rest) != nullptr) return "run." + rest;
  const auto us = rest.find('_');
  if (us != std::string::npos) {
    const std::string key = rest.substr(0, us) + "." + rest.substr(us + 1);
    if (find_spec(key) != nullptr) return key;
  }
  throw ConfigError("environment variable " + var + " does not name a config key");
}

}  // namespace

ResolvedConfig resolve_config(const std::optional<std::filesystem::path>& file,
                              const std::vector<std::string>& overrides,
                              const std::map<std::string, std::string>& environment) {
  using Layer = std::vector<std::tuple<std::string, std::string, std::string>>;  // key, value, source
  Layer file_layer;
  Layer override_layer;
  Layer env_layer;

  if (file) {
    std::ifstream in(*file);
    if (!in) throw ConfigError("cannot read config file " + file->string());
    std::stringstream ss;
    ss << in.rdbuf();
    for (auto& [k, v] : parse_config_text(ss.str(), file->string())) {
      file_layer.emplace_back(k, v, "file:" + file->string());
    }
  }
  for (const auto& o : overrides) {
    const auto eq = o.find('=');
    if (eq == std::string::npos) throw ConfigError("override '" + o + "' is not key=value");
    override_layer.emplace_back(trim(o.substr(0, eq)), strip_quotes(trim(o.substr(eq + 1))), "override");
  }
  for (const auto& [var, value] : environment) {
    env_layer.emplace_back(env_to_key(var), value, "env:" + var);
  }

  ResolvedConfig cfg;
  for (const auto& spec : config_schema()) cfg.values_[spec.key] = {spec.default_value, "default"};

  auto apply = [&](const Layer& layer) {
    for (const auto& [key, value, source] : layer) {
      const KeySpec* spec = find_spec(key);
      if (spec == nullptr) throw ConfigError("unknown config key '" + key + "' from " + source);
      check_value(*spec, value, source);
      cfg.values_[key] = {spec->choices.empty() ? value : lowercase(value), source};
    }
  };

  // The preset is chosen by the highest layer that names it, then applied
  // beneath the file so explicit settings still win.
  std::string preset = "desk";
  for (const Layer* layer : {&file_layer, &override_layer, &env_layer}) {
    for (const auto& [key, value, source] : *layer) {
      if (key == "run.preset") {
        check_value(*find_spec(key), value, source);
        preset = lowercase(value);
      }
    }
  }
  for (const auto& [key, value] : config_presets().at(preset)) {
    cfg.values_[key] = {value, "preset:" + preset};
  }
  apply(file_layer);
  apply(override_layer);
  apply(env_layer);
  return cfg;
}

ResolvedConfig parse_config(const std::optional<std::filesystem::path>& file,
                            const std::vector<std::string>& overrides) {
  return resolve_config(file, overrides, npgrid_environment());
}

TrainConfig to_train_config(const ResolvedConfig& c) {
  TrainConfig t;
  t.model.kind = parse_model_kind(c.text("model.kind"));
  t.model.mlp_hidden = c.get_list("model.mlp_hidden");
  t.model.conv.depth = c.get_size("model.conv_depth");
  t.model.conv.channels = c.get_size("model.conv_channels");
  t.model.conv.kernel_size = c.get_size("model.conv_kernel");
  t.model.r_dim = c.get_size("model.r_dim");
  t.model.d_z = c.get_size("model.d_z");
  t.model.points_per_unit = static_cast<int>(c.get_int("model.points_per_unit"));
  t.model.grid_margin = c.get_real("model.grid_margin");
  t.model.sigma_floor = c.get_real("model.sigma_floor");
  t.data.source = parse_data_source(c.text("data.source"));
  t.data.kernel = parse_kernel(c.text("data.kernel"));
  t.data.path = c.text("data.path");
  t.data.n_points = c.get_size("data.n_points");
  t.data.min_context = c.get_size("data.min_context");
  t.data.max_context = c.get_size("data.max_context");
  t.data.train_tasks = c.get_size("data.train_tasks");
  t.data.val_tasks = c.get_size("data.val_tasks");
  t.data.test_tasks = c.get_size("data.test_tasks");
  t.epochs = c.get_size("train.epochs");
  t.batch_size = c.get_size("train.batch_size");
  t.learning_rate = c.get_real("train.learning_rate");
  t.n_z = c.get_size("train.n_z");
  t.val_n_z = c.get_size("train.val_n_z");
  t.seed = static_cast<std::uint64_t>(c.get_int("run.seed"));
  t.threads = c.get_size("run.threads");
  t.validate();
  return t;
}

EvalSettings to_eval_settings(const ResolvedConfig& c) {
  EvalSettings e;
  e.n_z = c.get_size("eval.n_z");
  e.probe_epsilons = c.get_list("eval.probe_epsilons");
  e.bands_n_z = c.get_size("eval.bands_n_z");
  const auto dims = c.get_list("eval.manip_dims");
  if (dims.size() != 2) throw ConfigError("eval.manip_dims must list exactly two dimensions");
  e.manip_dims = {dims[0], dims[1]};
  e.manip_steps = c.get_size("eval.manip_steps");
  e.manip_pct_lo = c.get_real("eval.manip_pct_lo");
  e.manip_pct_hi = c.get_real("eval.manip_pct_hi");
  e.manip_relax = c.get_real("eval.manip_relax");
  if (e.n_z < 1) throw ConfigError("eval.n_z must be >= 1");
  if (e.bands_n_z < 1) throw ConfigError("eval.bands_n_z must be >= 1");
  return e;
}

}  // namespace npgrid
