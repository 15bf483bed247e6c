#pragma once

// Losses, the Adam update and the training loop.

#include <cstdint>
#include <filesystem>
#include <functional>
#include <stdexcept>
#include <vector>

#include <nlohmann/json.hpp>

#include "npgrid/checkpoint.hpp"
#include "npgrid/datasets.hpp"
#include "npgrid/models.hpp"

namespace npgrid {

struct TrainConfig {
  ModelConfig model;
  DataConfig data;
  std::size_t epochs = 20;
  std::size_t batch_size = 16;
  double learning_rate = 1e-3;
  std::size_t n_z = 1;      // latent samples per task in the training ELBO
  std::size_t val_n_z = 16;  // latent samples per task for the validation estimate
  std::uint64_t seed = 0;
  std::size_t threads = 1;

  /// Throws ContractError naming the offending key.
  void validate() const;
  nlohmann::json to_json() const;
  static TrainConfig from_json(const nlohmann::json& j);
};

/// Mean over target points of -log N(y_t; mu_t, sigma_t^2). CNP and ConvCNP only.
Var conditional_nll_loss(ModelGraph& model, const Task& task);

struct ElboTerms {
  Var loss;   // -recon + kl
  Var kl;     // KL(q(z|T) || q(z|C))
  Var recon;  // mean over z samples of the mean per-point log-likelihood
};

/// `noise` is [n_z, d_z]; z samples come from the target posterior. NP and GBCoNP only.
ElboTerms elbo_loss(ModelGraph& model, const Task& task, const NdArray& noise);

struct AdamHyper {
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
};

/// One bias-corrected Adam update of every parameter.
void adam_step(ParamMap& params, const ParamMap& grads, AdamState& state, double learning_rate,
               const AdamHyper& hyper = {});

struct TaskLoss {
  double loss = 0.0;
  double kl = 0.0;
  ParamMap grads;
};

/// Loss and parameter gradients for one task; noise for latent models is drawn from `rng`.
TaskLoss task_loss_and_grads(const ModelConfig& config, const ParamMap& params, const Task& task,
                             std::size_t n_z, Rng& rng);

/// The per-task training loss as a Program over every parameter array, with
/// latent noise [n_z, d_z] held fixed. Used for gradient verification.
Program loss_program(const ModelConfig& config, const ParamMap& params, const Task& task,
                     const NdArray& noise);

struct EpochRecord {
  std::uint64_t epoch = 0;
  double train_loss = 0.0;
  double val_ll = 0.0;
  double kl_mean = 0.0;
  double wall_seconds = 0.0;

  nlohmann::json to_json() const;
};

struct EpochStats {
  double train_loss = 0.0;
  double kl_mean = 0.0;
};

/// Thrown when a batch loss is not finite; the on-disk checkpoint is left
/// at the last good epoch.
class TrainingAborted : public std::runtime_error {
 public:
  TrainingAborted(std::uint64_t epoch, std::size_t batch, const std::string& detail);
  std::uint64_t epoch() const noexcept { return epoch_; }
  std::size_t batch() const noexcept { return batch_; }

 private:
  std::uint64_t epoch_;
  std::size_t batch_;
};

/// One pass over the training split of `source` for epoch `epoch` (1-based),
/// updating state.params and state.optimizer. Gradients of a batch are
/// summed in task order, so results do not depend on config.threads.
/// Only requires learning_rate >= 0, so a zero rate can be used as a dry run.
EpochStats train_epoch(Checkpoint& state, const TrainConfig& config, const TaskSource& source,
                       std::uint64_t epoch);

struct TrainOptions {
  std::filesystem::path out_dir;  // empty: keep everything in memory
  std::function<void(const EpochRecord&)> on_epoch;
};

struct TrainResult {
  Checkpoint best;  // highest validation log-likelihood
  Checkpoint last;
  std::vector<EpochRecord> log;
};

/// Full run. With an output directory, checkpoint.gbcn (best so far) and
/// metrics.jsonl are updated after every epoch.
TrainResult train(const TrainConfig& config, const TrainOptions& options = {});

}  // namespace npgrid
