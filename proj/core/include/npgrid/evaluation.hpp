#pragma once

// Predictive log-likelihood, the global-uncertainty probe, latent
// manipulation sweeps and prediction bands.

#include <cstdint>
#include <utility>
#include <vector>

#include <nlohmann/json.hpp>

#include "npgrid/models.hpp"

namespace npgrid {

struct LlEstimate {
  double mean = 0.0;            // per-point log-likelihood averaged over tasks
  double standard_error = 0.0;  // over tasks
  std::size_t n_tasks = 0;
  std::size_t n_z = 0;  // 0 for conditional models
  std::vector<double> per_task;

  nlohmann::json to_json() const;
};

/// Per-point log-likelihood of one task. Latent models use the mixture
/// estimate log((1/n_z) sum_k exp(sum_t log p(y_t | z_k))) / n with
/// z_k ~ q(z|C); conditional models ignore n_z and `rng`.
double task_log_likelihood(const ModelConfig& config, const ParamMap& params, const Task& task,
                           std::size_t n_z, Rng& rng);

struct TaskLl {
  double value = 0.0;
  double standard_error = 0.0;  // delta-method Monte Carlo error; 0 for conditional models
};

/// task_log_likelihood with its Monte Carlo standard error; same draws from `rng`.
TaskLl task_log_likelihood_with_error(const ModelConfig& config, const ParamMap& params,
                                     const Task& task, std::size_t n_z, Rng& rng);

/// Per-task noise streams derive from (seed, task index).
LlEstimate estimate_predictive_ll(const ModelConfig& config, const ParamMap& params,
                                  const std::vector<Task>& tasks, std::size_t n_z,
                                  std::uint64_t seed, std::size_t threads = 1);

struct ProbeResult {
  double mu_z_mean = 0.0;
  double sigma_z_mean = 0.0;
  double mu_z_se = 0.0;  // standard errors over tasks
  double sigma_z_se = 0.0;
  std::size_t epsilon = 0;
  std::size_t n_tasks = 0;

  nlohmann::json to_json() const;
};

/// Per-task latent mean and scale, each averaged over latent dimensions.
std::pair<double, double> latent_summary(const ModelConfig& config, const ParamMap& params,
                                         const Task& task);

/// For each task the context is replaced by `epsilon` target points chosen
/// uniformly without replacement (seeded per task); q(z|C) is averaged over
/// latent dimensions and then over tasks.
ProbeResult probe_global_uncertainty(const ModelConfig& config, const ParamMap& params,
                                     const std::vector<Task>& tasks, std::size_t epsilon,
                                     std::uint64_t seed, std::size_t threads = 1);

struct ManipulationCell {
  std::size_t step_i = 0;
  std::size_t step_j = 0;
  double z_value_i = 0.0;
  double z_value_j = 0.0;
  NdArray mu;
  NdArray sigma;
};

struct ManipulationGrid {
  std::size_t dim_i = 0;
  std::size_t dim_j = 0;
  NdArray x;  // target inputs
  std::vector<ManipulationCell> cells;  // row-major over (step_i, step_j)

  std::vector<nlohmann::json> to_json_lines() const;
};

/// Sweeps two latent dimensions over Gaussian percentiles of
/// N(mu_z, (relax * sigma_z)^2) spaced linearly from pct_lo to pct_hi
/// (percent units); other dimensions stay at mu_z. steps == 1 uses the
/// midpoint percentile.
ManipulationGrid latent_manipulation_grid(const ModelConfig& config, const ParamMap& params,
                                          const Task& task, std::pair<std::size_t, std::size_t> dims,
                                          std::size_t steps, double pct_lo, double pct_hi,
                                          double relax);

struct PredictionBand {
  std::size_t task_id = 0;
  std::size_t z_index = 0;
  NdArray x;
  NdArray mu;
  NdArray sigma;

  nlohmann::json to_json() const;
};

/// n_z bands (one latent draw from q(z|C) each) for latent models, one band
/// for conditional models.
std::vector<PredictionBand> emit_prediction_bands(const ModelConfig& config, const ParamMap& params,
                                                  const Task& task, std::size_t task_id,
                                                  std::size_t n_z, std::uint64_t seed);

}  // namespace npgrid
