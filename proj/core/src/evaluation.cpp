#include "npgrid/evaluation.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <tuple>

#include "npgrid/errors.hpp"
#include "npgrid/parallel.hpp"

namespace npgrid {

namespace {

constexpr std::uint64_t kLlStream = 0x11e57;
constexpr std::uint64_t kProbeStream = 0x960be;
constexpr std::uint64_t kBandStream = 0xba2d;

double sum_of(const NdArray& a) { return std::accumulate(a.data().begin(), a.data().end(), 0.0); }

std::pair<double, double> mean_and_se(const std::vector<double>& v) {
  const double n = static_cast<double>(v.size());
  if (v.empty()) return {0.0, 0.0};
  const double mean = std::accumulate(v.begin(), v.end(), 0.0) / n;
  if (v.size() < 2) return {mean, 0.0};
  double ss = 0.0;
  for (double x : v) ss += (x - mean) * (x - mean);
  return {mean, std::sqrt(ss / (n - 1.0) / n)};
}

nlohmann::json array_json(const NdArray& a) { return a.values(); }

}  // namespace

nlohmann::json LlEstimate::to_json() const {
  return {{"ll_mean", mean}, {"ll_standard_error", standard_error}, {"n_tasks", n_tasks},
          {"n_z", n_z}};
}

TaskLl task_log_likelihood_with_error(const ModelConfig& config, const ParamMap& params,
                                     const Task& task, std::size_t n_z, Rng& rng) {
  Graph g(false);
  ModelGraph model(g, config, params);
  const double n = static_cast<double>(task.target_size());
  Var y = g.constant(task.y_target);
  const Encoding enc = encode(model, task, false);
  if (!is_latent(config.kind)) {
    const ModelOutput out = decode(model, task, enc);
    return {sum_of(diag_gaussian_log_prob(y, out.predictive).value()) / n, 0.0};
  }
  if (n_z == 0) throw ContractError("estimate_predictive_ll: n_z must be >= 1 for latent models");
  std::vector<double> totals(n_z);
  for (std::size_t k = 0; k < n_z; ++k) {
    Var z = reparam_sample(*enc.q_context, standard_normal(rng, {config.d_z}));
    const ModelOutput out = decode(model, task, enc, z);
    totals[k] = sum_of(diag_gaussian_log_prob(y, out.predictive).value());
  }
  const double peak = *std::max_element(totals.begin(), totals.end());
  const double count = static_cast<double>(n_z);
  double acc = 0.0;
  double acc2 = 0.0;
  for (double t : totals) {
    const double w = std::exp(t - peak);
    acc += w;
    acc2 += w * w;
  }
  const double mean_w = acc / count;
  TaskLl out;
  out.value = (peak + std::log(mean_w)) / n;
  if (n_z > 1) {
    const double var_w = std::max(0.0, (acc2 / count - mean_w * mean_w) * count / (count - 1.0));
    out.standard_error = std::sqrt(var_w / count) / mean_w / n;
  }
  return out;
}

double task_log_likelihood(const ModelConfig& config, const ParamMap& params, const Task& task,
                           std::size_t n_z, Rng& rng) {
  return task_log_likelihood_with_error(config, params, task, n_z, rng).value;
}

LlEstimate estimate_predictive_ll(const ModelConfig& config, const ParamMap& params,
                                  const std::vector<Task>& tasks, std::size_t n_z,
                                  std::uint64_t seed, std::size_t threads) {
  const bool latent = is_latent(config.kind);
  if (latent && n_z == 0) {
    throw ContractError("estimate_predictive_ll: n_z must be >= 1 for latent models");
  }
  LlEstimate est;
  est.n_tasks = tasks.size();
  est.n_z = latent ? n_z : 0;
  est.per_task.assign(tasks.size(), 0.0);
  const std::uint64_t base = derive_seed(seed, kLlStream);
  parallel_for(tasks.size(), threads, [&](std::size_t i) {
    Rng rng = make_rng(base, i);
    est.per_task[i] = task_log_likelihood(config, params, tasks[i], n_z, rng);
  });
  std::tie(est.mean, est.standard_error) = mean_and_se(est.per_task);
  return est;
}

nlohmann::json ProbeResult::to_json() const {
  return {{"epsilon", epsilon},          {"mu_z_mean", mu_z_mean},
          {"sigma_z_mean", sigma_z_mean}, {"mu_z_standard_error", mu_z_se},
          {"sigma_z_standard_error", sigma_z_se}, {"n_tasks", n_tasks}};
}

std::pair<double, double> latent_summary(const ModelConfig& config, const ParamMap& params,
                                         const Task& task) {
  if (!is_latent(config.kind)) {
    throw ContractError("the global-uncertainty probe is unsupported for " +
                        to_string(config.kind) + " models (no latent path)");
  }
  Graph g(false);
  ModelGraph model(g, config, params);
  const Encoding enc = encode(model, task, false);
  const double d = static_cast<double>(config.d_z);
  return {sum_of(enc.q_context->mu.value()) / d, sum_of(enc.q_context->sigma.value()) / d};
}

ProbeResult probe_global_uncertainty(const ModelConfig& config, const ParamMap& params,
                                     const std::vector<Task>& tasks, std::size_t epsilon,
                                     std::uint64_t seed, std::size_t threads) {
  if (!is_latent(config.kind)) {
    throw ContractError("the global-uncertainty probe is unsupported for " +
                        to_string(config.kind) + " models (no latent path)");
  }
  if (epsilon < 1) throw ContractError("probe: epsilon must be >= 1");
  std::vector<double> mus(tasks.size());
  std::vector<double> sigmas(tasks.size());
  const std::uint64_t base = derive_seed(seed, kProbeStream);
  parallel_for(tasks.size(), threads, [&](std::size_t i) {
    const Task& task = tasks[i];
    if (epsilon > task.target_size()) {
      throw ContractError("probe: epsilon " + std::to_string(epsilon) + " exceeds the " +
                          std::to_string(task.target_size()) + " points of task " +
                          std::to_string(i));
    }
    Rng rng = make_rng(base, i);
    auto chosen = sample_without_replacement(rng, task.target_size(), epsilon);
    std::sort(chosen.begin(), chosen.end());
    std::tie(mus[i], sigmas[i]) = latent_summary(config, params, with_context(task, chosen));
  });
  ProbeResult r;
  r.epsilon = epsilon;
  r.n_tasks = tasks.size();
  std::tie(r.mu_z_mean, r.mu_z_se) = mean_and_se(mus);
  std::tie(r.sigma_z_mean, r.sigma_z_se) = mean_and_se(sigmas);
  return r;
}

std::vector<nlohmann::json> ManipulationGrid::to_json_lines() const {
  std::vector<nlohmann::json> lines;
  lines.reserve(cells.size());
  for (const auto& c : cells) {
    lines.push_back({{"dim_i", dim_i},
                     {"dim_j", dim_j},
                     {"step_i", c.step_i},
                     {"step_j", c.step_j},
                     {"z_value_i", c.z_value_i},
                     {"z_value_j", c.z_value_j},
                     {"x", array_json(x)},
                     {"mu", array_json(c.mu)},
                     {"sigma", array_json(c.sigma)}});
  }
  return lines;
}

ManipulationGrid latent_manipulation_grid(const ModelConfig& config, const ParamMap& params,
                                          const Task& task, std::pair<std::size_t, std::size_t> dims,
                                          std::size_t steps, double pct_lo, double pct_hi,
                                          double relax) {
  if (!is_latent(config.kind)) {
    throw ContractError("latent manipulation needs a latent model, got " + to_string(config.kind));
  }
  const auto [di, dj] = dims;
  if (di >= config.d_z || dj >= config.d_z) {
    throw ContractError("manipulation dims (" + std::to_string(di) + ", " + std::to_string(dj) +
                        ") out of range for d_z = " + std::to_string(config.d_z));
  }
  if (steps < 1) throw ContractError("manipulation steps must be >= 1");
  if (!(pct_lo > 0.0 && pct_hi < 100.0 && pct_lo <= pct_hi)) {
    throw ContractError("manipulation percentiles must satisfy 0 < pct_lo <= pct_hi < 100");
  }
  if (!(relax >= 0.0)) throw ContractError("manipulation relax must be >= 0");

  Graph g(false);
  ModelGraph model(g, config, params);
  const Encoding enc = encode(model, task, false);
  const NdArray& mu = enc.q_context->mu.value();
  const NdArray& sigma = enc.q_context->sigma.value();

  std::vector<double> quantiles(steps);
  for (std::size_t s = 0; s < steps; ++s) {
    const double pct = steps == 1 ? 0.5 * (pct_lo + pct_hi)
                                  : pct_lo + (pct_hi - pct_lo) * static_cast<double>(s) /
                                                 static_cast<double>(steps - 1);
    quantiles[s] = normal_quantile(pct / 100.0);
  }

  ManipulationGrid grid;
  grid.dim_i = di;
  grid.dim_j = dj;
  grid.x = task.x_target;
  for (std::size_t si = 0; si < steps; ++si) {
    for (std::size_t sj = 0; sj < steps; ++sj) {
      NdArray z = mu;
      ManipulationCell cell;
      cell.step_i = si;
      cell.step_j = sj;
      cell.z_value_i = mu[di] + relax * sigma[di] * quantiles[si];
      cell.z_value_j = mu[dj] + relax * sigma[dj] * quantiles[sj];
      z[di] = cell.z_value_i;
      z[dj] = cell.z_value_j;
      const ModelOutput out = decode(model, task, enc, g.constant(std::move(z)));
      cell.mu = out.predictive.mu.value();
      cell.sigma = out.predictive.sigma.value();
      grid.cells.push_back(std::move(cell));
    }
  }
  return grid;
}

nlohmann::json PredictionBand::to_json() const {
  return {{"task_id", task_id}, {"z_index", z_index}, {"x", array_json(x)},
          {"mu", array_json(mu)}, {"sigma", array_json(sigma)}};
}

std::vector<PredictionBand> emit_prediction_bands(const ModelConfig& config, const ParamMap& params,
                                                  const Task& task, std::size_t task_id,
                                                  std::size_t n_z, std::uint64_t seed) {
  if (n_z < 1) throw ContractError("bands: n_z must be >= 1");
  Graph g(false);
  ModelGraph model(g, config, params);
  const Encoding enc = encode(model, task, false);
  const bool latent = is_latent(config.kind);
  const std::size_t count = latent ? n_z : 1;
  Rng rng = make_rng(derive_seed(seed, kBandStream), task_id);
  std::vector<PredictionBand> bands;
  for (std::size_t k = 0; k < count; ++k) {
    Var z;
    if (latent) z = reparam_sample(*enc.q_context, standard_normal(rng, {config.d_z}));
    const ModelOutput out = decode(model, task, enc, z);
    bands.push_back({task_id, k, task.x_target, out.predictive.mu.value(),
                     out.predictive.sigma.value()});
  }
  return bands;
}

}  // namespace npgrid
