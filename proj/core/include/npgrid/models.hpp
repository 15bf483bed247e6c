#pragma once

// CNP, latent NP, ConvCNP and GBCoNP forward maps.
//
// Every model is split into an encoding stage (everything that does not
// depend on the latent sample) and a decoding stage, so that several z
// samples can share one encoding.

#include <cstdint>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include <nlohmann/json.hpp>

#include "npgrid/distributions.hpp"
#include "npgrid/gp_tasks.hpp"
#include "npgrid/layers.hpp"
#include "npgrid/setconv.hpp"

namespace npgrid {

enum class ModelKind { CNP, NP, ConvCNP, GBCoNP };

std::string to_string(ModelKind kind);
/// Accepts "cnp", "np", "convcnp", "gbconp" (case-insensitive).
ModelKind parse_model_kind(std::string_view name);
bool is_latent(ModelKind kind) noexcept;
bool is_convolutional(ModelKind kind) noexcept;

struct ConvBackboneConfig {
  std::size_t depth = 4;
  std::size_t channels = 32;
  std::size_t kernel_size = 5;
};

struct ModelConfig {
  ModelKind kind = ModelKind::GBCoNP;
  std::vector<std::size_t> mlp_hidden{64, 64};
  ConvBackboneConfig conv;
  std::size_t r_dim = 128;
  std::size_t d_z = 128;
  int points_per_unit = kDefaultPointsPerUnit;
  double grid_margin = kDefaultGridMargin;
  double sigma_floor = kSigmaFloor;

  /// Throws ContractError naming the offending field.
  void validate() const;
  nlohmann::json to_json() const;
  static ModelConfig from_json(const nlohmann::json& j);
};

/// Fresh parameters for `config`, deterministic in `seed`.
ParamMap init_params(const ModelConfig& config, std::uint64_t seed);

/// One forward pass: a graph, the parameters bound into it, and the config.
class ModelGraph {
 public:
  ModelGraph(Graph& graph, const ModelConfig& config, const ParamMap& params)
      : graph_(graph), config_(config), binder_(graph, params) {}

  Graph& graph() noexcept { return graph_; }
  const ModelConfig& config() const noexcept { return config_; }
  ParamBinder& params() noexcept { return binder_; }

 private:
  Graph& graph_;
  const ModelConfig& config_;
  ParamBinder binder_;
};

/// The z-independent part of a forward pass.
struct Encoding {
  Var r;                     // CNP/NP deterministic representation [r_dim]
  std::optional<Grid> grid;  // convolutional models
  Var r_grid;                // context representation on the grid [2, s]
  std::optional<DiagGaussian> q_context;
  std::optional<DiagGaussian> q_target;
};

struct ModelOutput {
  DiagGaussian predictive;  // over y_target
  std::optional<DiagGaussian> q_context;
  std::optional<DiagGaussian> q_target;
  Var z;             // latent sample used by the decoder
  Var merger_input;  // GBCoNP only: [2 + d_z, s]
};

/// Grid over the union of context and target inputs plus the configured margin.
Grid task_grid(const ModelConfig& config, const Task& task);

/// Encodes the context; for latent models also q(z|C) and, when
/// `with_target_posterior`, q(z|T) from the target set treated as context.
Encoding encode(ModelGraph& model, const Task& task, bool with_target_posterior);

/// Predictive distribution for the targets given an encoding and, for latent
/// models, a latent value z [d_z].
ModelOutput decode(ModelGraph& model, const Task& task, const Encoding& encoding, Var z = {});

/// Per-column latent MLP on grid features [c, s], mean-aggregated over
/// columns, split into (mu, raw sigma), sigma via sigma_from_raw.
DiagGaussian latent_from_grid(ModelGraph& model, Var grid_features);

DiagGaussian cnp_forward(ModelGraph& model, const Task& task);
ModelOutput np_forward(ModelGraph& model, const Task& task, const NdArray& noise,
                       bool use_target_posterior);
DiagGaussian convcnp_forward(ModelGraph& model, const Task& task);
ModelOutput gbconp_forward(ModelGraph& model, const Task& task, const NdArray& noise,
                           bool use_target_posterior);

/// Dispatches on config().kind. `noise` is required for latent models and
/// ignored otherwise.
ModelOutput forward(ModelGraph& model, const Task& task, const NdArray* noise,
                    bool use_target_posterior);

}  // namespace npgrid
