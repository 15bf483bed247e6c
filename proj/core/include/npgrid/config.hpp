#pragma once

// Layered run configuration.
//
// Files use a flat sectioned key-value format:
//
//   # comment
//   [train]
//   epochs = 20
//   learning_rate = 1e-3
//
// Resolution order, later layers winning: built-in defaults, the active
// preset, the config file, --override key=value pairs, then environment
// variables with prefix NPGRID_ (NPGRID_TRAIN_EPOCHS -> train.epochs; the
// run section may drop its name, so NPGRID_SEED -> run.seed).

#include <filesystem>
#include <map>
#include <optional>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include "npgrid/errors.hpp"
#include "npgrid/training.hpp"

namespace npgrid {

/// Unknown key, malformed value or malformed file; names the key and layer.
class ConfigError : public ContractError {
 public:
  using ContractError::ContractError;
};

enum class ValueType { Int, Real, String, Bool, UIntList };

struct KeySpec {
  std::string key;  // "section.name"
  ValueType type;
  std::string default_value;
  std::string help;
  std::vector<std::string> choices;  // empty: any value of the type
};

/// Every accepted key, in documentation order.
const std::vector<KeySpec>& config_schema();

/// Preset name -> the keys it sets. "desk" and "paper" are built in.
const std::map<std::string, std::map<std::string, std::string>>& config_presets();

struct ResolvedValue {
  std::string text;
  std::string source;  // "default", "preset:desk", "file:c.toml", "override", "env:NPGRID_SEED"
};

class ResolvedConfig {
 public:
  const ResolvedValue& at(const std::string& key) const;
  const std::string& text(const std::string& key) const { return at(key).text; }
  long long get_int(const std::string& key) const;
  std::size_t get_size(const std::string& key) const;
  double get_real(const std::string& key) const;
  bool get_bool(const std::string& key) const;
  std::vector<std::size_t> get_list(const std::string& key) const;
  const std::string& preset() const { return text("run.preset"); }

  const std::map<std::string, ResolvedValue>& values() const { return values_; }
  /// "key = value  (source)" lines in key order.
  std::vector<std::string> describe() const;

 private:
  friend ResolvedConfig resolve_config(const std::optional<std::filesystem::path>&,
                                       const std::vector<std::string>&,
                                       const std::map<std::string, std::string>&);
  std::map<std::string, ResolvedValue> values_;
};

/// Parses file text into key -> value; `origin` labels errors.
std::vector<std::pair<std::string, std::string>> parse_config_text(const std::string& text,
                                                                   const std::string& origin);

/// Full resolution with an explicit environment (name -> value of NPGRID_*
/// variables). Throws ConfigError.
ResolvedConfig resolve_config(const std::optional<std::filesystem::path>& file,
                              const std::vector<std::string>& overrides,
                              const std::map<std::string, std::string>& environment);

/// Same, reading NPGRID_* variables from the process environment.
ResolvedConfig parse_config(const std::optional<std::filesystem::path>& file,
                            const std::vector<std::string>& overrides);

/// NPGRID_* variables of the current process.
std::map<std::string, std::string> npgrid_environment();

/// Builds and validates the training configuration.
TrainConfig to_train_config(const ResolvedConfig& config);

struct EvalSettings {
  std::size_t n_z = 512;
  std::vector<std::size_t> probe_epsilons{1, 5, 25, 50};
  std::size_t bands_n_z = 10;
  std::pair<std::size_t, std::size_t> manip_dims{0, 1};
  std::size_t manip_steps = 7;
  double manip_pct_lo = 5.0;
  double manip_pct_hi = 95.0;
  double manip_relax = 40.0;
};

EvalSettings to_eval_settings(const ResolvedConfig& config);

}  // namespace npgrid
