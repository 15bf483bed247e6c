#include "npgrid/training.hpp"

#include <chrono>
#include <cmath>
#include <fstream>
#include <numeric>

#include "npgrid/errors.hpp"
#include "npgrid/evaluation.hpp"
#include "npgrid/parallel.hpp"

namespace npgrid {

namespace {

constexpr std::uint64_t kInitStream = 0x1417;
constexpr std::uint64_t kShuffleStream = 0x5aff;
constexpr std::uint64_t kNoiseStream = 0x7a15e;

void require(bool ok, const std::string& message) {
  if (!ok) throw ContractError(message);
}

}  // namespace

void TrainConfig::validate() const {
  model.validate();
  data.validate();
  require(epochs >= 1, "train.epochs must be >= 1");
  require(batch_size >= 1, "train.batch_size must be >= 1");
  require(learning_rate > 0.0 && learning_rate < 1.0, "train.learning_rate must lie in (0, 1)");
  require(n_z >= 1, "train.n_z must be >= 1");
  require(val_n_z >= 1, "train.val_n_z must be >= 1");
  require(threads >= 1, "run.threads must be >= 1");
}

nlohmann::json TrainConfig::to_json() const {
  return {{"model", model.to_json()},
          {"data", data.to_json()},
          {"epochs", epochs},
          {"batch_size", batch_size},
          {"learning_rate", learning_rate},
          {"n_z", n_z},
          {"val_n_z", val_n_z},
          {"seed", seed}};
}

TrainConfig TrainConfig::from_json(const nlohmann::json& j) {
  TrainConfig c;
  try {
    c.model = ModelConfig::from_json(j.at("model"));
    c.data = DataConfig::from_json(j.at("data"));
    c.epochs = j.at("epochs").get<std::size_t>();
    c.batch_size = j.at("batch_size").get<std::size_t>();
    c.learning_rate = j.at("learning_rate").get<double>();
    c.n_z = j.at("n_z").get<std::size_t>();
    c.val_n_z = j.at("val_n_z").get<std::size_t>();
    c.seed = j.at("seed").get<std::uint64_t>();
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(std::string("train config: ") + e.what());
  }
  return c;
}

Var conditional_nll_loss(ModelGraph& model, const Task& task) {
  if (is_latent(model.config().kind)) {
    throw ContractError("conditional_nll_loss applies to cnp and convcnp, not " +
                        to_string(model.config().kind));
  }
  Graph& g = model.graph();
  const ModelOutput out = forward(model, task, nullptr, false);
  return -ad::mean(diag_gaussian_log_prob(g.constant(task.y_target), out.predictive));
}

ElboTerms elbo_loss(ModelGraph& model, const Task& task, const NdArray& noise) {
  const ModelConfig& cfg = model.config();
  if (!is_latent(cfg.kind)) {
    throw ContractError("elbo_loss applies to np and gbconp, not " + to_string(cfg.kind));
  }
  if (noise.rank() != 2 || noise.dim(0) < 1 || noise.dim(1) != cfg.d_z) {
    throw ContractError("elbo_loss: noise has shape " + shape_string(noise.shape()) +
                        ", expected [n_z, " + std::to_string(cfg.d_z) + "]");
  }
  Graph& g = model.graph();
  const std::size_t n_z = noise.dim(0);
  const Encoding enc = encode(model, task, true);
  Var y = g.constant(task.y_target);
  Var recon;
  for (std::size_t k = 0; k < n_z; ++k) {
    NdArray row({cfg.d_z});
    for (std::size_t d = 0; d < cfg.d_z; ++d) row[d] = noise.at(k, d);
    const ModelOutput out = decode(model, task, enc, reparam_sample(*enc.q_target, row));
    Var ll = ad::mean(diag_gaussian_log_prob(y, out.predictive));
    recon = k == 0 ? ll : recon + ll;
  }
  if (n_z > 1) recon = ad::mul(recon, 1.0 / static_cast<double>(n_z));
  ElboTerms terms;
  terms.recon = recon;
  terms.kl = kl_divergence(*enc.q_target, *enc.q_context);
  terms.loss = terms.kl - recon;
  return terms;
}

void adam_step(ParamMap& params, const ParamMap& grads, AdamState& state, double learning_rate,
               const AdamHyper& hyper) {
  state.step += 1;
  const double t = static_cast<double>(state.step);
  const double c1 = 1.0 - std::pow(hyper.beta1, t);
  const double c2 = 1.0 - std::pow(hyper.beta2, t);
  for (auto& [name, value] : params) {
    const auto g_it = grads.find(name);
    if (g_it == grads.end()) throw ContractError("adam_step: no gradient for '" + name + "'");
    auto m_it = state.m.find(name);
    auto v_it = state.v.find(name);
    if (m_it == state.m.end() || v_it == state.v.end()) {
      throw ContractError("adam_step: no optimizer state for '" + name + "'");
    }
    auto p = value.data();
    auto g = g_it->second.data();
    auto m = m_it->second.data();
    auto v = v_it->second.data();
    for (std::size_t i = 0; i < p.size(); ++i) {
      m[i] = hyper.beta1 * m[i] + (1.0 - hyper.beta1) * g[i];
      v[i] = hyper.beta2 * v[i] + (1.0 - hyper.beta2) * g[i] * g[i];
      const double m_hat = m[i] / c1;
      const double v_hat = v[i] / c2;
      p[i] -= learning_rate * m_hat / (std::sqrt(v_hat) + hyper.epsilon);
    }
  }
}

TaskLoss task_loss_and_grads(const ModelConfig& config, const ParamMap& params, const Task& task,
                             std::size_t n_z, Rng& rng) {
  Graph g;
  ModelGraph model(g, config, params);
  TaskLoss out;
  Var loss;
  if (is_latent(config.kind)) {
    const ElboTerms terms = elbo_loss(model, task, standard_normal(rng, {n_z, config.d_z}));
    loss = terms.loss;
    out.kl = terms.kl.value()[0];
  } else {
    loss = conditional_nll_loss(model, task);
  }
  out.loss = loss.value()[0];
  g.backward(loss);
  out.grads = model.params().gradients();
  return out;
}

Program loss_program(const ModelConfig& config, const ParamMap& params, const Task& task,
                     const NdArray& noise) {
  Program program;
  for (const auto& [name, value] : params) program.leaves.push_back({name, value.shape()});
  program.body = [config, params, task, noise](Graph& g, const std::map<std::string, Var>& leaves) {
    ModelGraph model(g, config, params);
    for (const auto& [name, v] : leaves) model.params().bind(name, v);
    if (is_latent(config.kind)) return elbo_loss(model, task, noise).loss;
    return conditional_nll_loss(model, task);
  };
  return program;
}

nlohmann::json EpochRecord::to_json() const {
  return {{"epoch", epoch},
          {"train_loss", train_loss},
          {"val_ll", val_ll},
          {"kl_mean", kl_mean},
          {"wall_seconds", wall_seconds}};
}

TrainingAborted::TrainingAborted(std::uint64_t epoch, std::size_t batch, const std::string& detail)
    : std::runtime_error("training aborted at epoch " + std::to_string(epoch) + ", batch " +
                         std::to_string(batch) + ": " + detail),
      epoch_(epoch),
      batch_(batch) {}

EpochStats train_epoch(Checkpoint& state, const TrainConfig& config, const TaskSource& source,
                       std::uint64_t epoch) {
  if (!(config.learning_rate >= 0.0)) throw ContractError("train.learning_rate must be >= 0");
  const std::size_t n_tasks = source.size(Split::Train);
  std::vector<std::size_t> order(n_tasks);
  std::iota(order.begin(), order.end(), std::size_t{0});
  Rng shuffle_rng = make_rng(derive_seed(config.seed, kShuffleStream), epoch);
  std::shuffle(order.begin(), order.end(), shuffle_rng);

  const std::uint64_t noise_base = derive_seed(derive_seed(config.seed, kNoiseStream), epoch);
  EpochStats stats;
  const std::size_t bs = config.batch_size;
  const std::size_t n_batches = (n_tasks + bs - 1) / bs;
  for (std::size_t b = 0; b < n_batches; ++b) {
    const std::size_t begin = b * bs;
    const std::size_t count = std::min(bs, n_tasks - begin);
    std::vector<TaskLoss> results(count);
    try {
      parallel_for(count, config.threads, [&](std::size_t i) {
        const std::size_t index = order[begin + i];
        const Task task = source.task(Split::Train, index, epoch);
        Rng rng = make_rng(noise_base, index);
        results[i] = task_loss_and_grads(state.model, state.params, task, config.n_z, rng);
      });
    } catch (const NumericError& e) {
      throw TrainingAborted(epoch, b, e.what());
    }
    ParamMap grads = std::move(results[0].grads);
    double batch_loss = results[0].loss;
    double batch_kl = results[0].kl;
    for (std::size_t i = 1; i < count; ++i) {
      for (auto& [name, g] : grads) {
        auto dst = g.data();
        auto src = results[i].grads.at(name).data();
        for (std::size_t k = 0; k < dst.size(); ++k) dst[k] += src[k];
      }
      batch_loss += results[i].loss;
      batch_kl += results[i].kl;
    }
    if (!std::isfinite(batch_loss)) throw TrainingAborted(epoch, b, "non-finite loss");
    const double inv = 1.0 / static_cast<double>(count);
    for (auto& [name, g] : grads) {
      for (double& v : g.data()) v *= inv;
    }
    adam_step(state.params, grads, state.optimizer, config.learning_rate);
    for (const auto& [name, p] : state.params) {
      if (!p.all_finite()) throw TrainingAborted(epoch, b, "parameter '" + name + "' became non-finite");
    }
    stats.train_loss += batch_loss;
    stats.kl_mean += batch_kl;
  }
  stats.train_loss /= static_cast<double>(n_tasks);
  stats.kl_mean /= static_cast<double>(n_tasks);
  return stats;
}

TrainResult train(const TrainConfig& config, const TrainOptions& options) {
  config.validate();
  const auto start = std::chrono::steady_clock::now();
  const TaskSource source(config.data, config.seed);
  const std::vector<Task> val_tasks = source.tasks(Split::Val);

  Checkpoint state;
  state.model = config.model;
  state.config = config.to_json();
  state.params = init_params(config.model, derive_seed(config.seed, kInitStream));
  state.optimizer = AdamState::zeros_like(state.params);

  std::ofstream metrics;
  if (!options.out_dir.empty()) {
    std::filesystem::create_directories(options.out_dir);
    metrics.open(options.out_dir / "metrics.jsonl", std::ios::trunc);
    if (!metrics) throw std::runtime_error("cannot write " + (options.out_dir / "metrics.jsonl").string());
  }

  TrainResult result;
  for (std::uint64_t epoch = 1; epoch <= config.epochs; ++epoch) {
    const EpochStats stats = train_epoch(state, config, source, epoch);
    const LlEstimate val = estimate_predictive_ll(state.model, state.params, val_tasks,
                                                  config.val_n_z, config.seed, config.threads);
    state.epoch = epoch;
    EpochRecord record;
    record.epoch = epoch;
    record.train_loss = stats.train_loss;
    record.val_ll = val.mean;
    record.kl_mean = stats.kl_mean;
    record.wall_seconds =
        std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();

    if (!state.best_val_ll || val.mean > *state.best_val_ll) {
      state.best_val_ll = val.mean;
      result.best = state;
      if (!options.out_dir.empty()) persist_checkpoint(state, options.out_dir / "checkpoint.gbcn");
    }
    result.best.best_val_ll = state.best_val_ll;
    if (metrics.is_open()) metrics << record.to_json().dump() << '\n' << std::flush;
    result.log.push_back(record);
    if (options.on_epoch) options.on_epoch(record);
  }
  result.last = std::move(state);
  return result;
}

}  // namespace npgrid
