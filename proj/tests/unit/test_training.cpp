#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <numbers>
#include <vector>

#include "npgrid/errors.hpp"
#include "npgrid/training.hpp"
#include "test_support.hpp"

using namespace npgrid;
using namespace npgrid::testing;

namespace {

using Vec = std::vector<double>;
using Mat = std::vector<Vec>;

// ---- Scalar reference implementation, independent of the tape ----

Mat weights(const ParamMap& p, const std::string& name) {
  const NdArray& w = p.at(name);
  Mat out(w.dim(0), Vec(w.dim(1)));
  for (std::size_t r = 0; r < w.dim(0); ++r) {
    for (std::size_t c = 0; c < w.dim(1); ++c) out[r][c] = w.at(r, c);
  }
  return out;
}

Vec vec(const NdArray& a) { return Vec(a.data().begin(), a.data().end()); }

double softplus(double x) { return std::log1p(std::exp(x)); }

// Single-hidden-layer MLP on one input vector.
Vec mlp1(const ParamMap& p, const std::string& prefix, const Vec& in) {
  const Mat w0 = weights(p, prefix + "/w0");
  const Vec b0 = vec(p.at(prefix + "/b0"));
  const Mat w1 = weights(p, prefix + "/w1");
  const Vec b1 = vec(p.at(prefix + "/b1"));
  Vec h(w0.size());
  for (std::size_t r = 0; r < w0.size(); ++r) {
    double s = b0[r];
    for (std::size_t c = 0; c < in.size(); ++c) s += w0[r][c] * in[c];
    h[r] = std::max(0.0, s);
  }
  Vec out(w1.size());
  for (std::size_t r = 0; r < w1.size(); ++r) {
    double s = b1[r];
    for (std::size_t c = 0; c < h.size(); ++c) s += w1[r][c] * h[c];
    out[r] = s;
  }
  return out;
}

// Per-column MLP, then mean of the outputs.
Vec mlp1_mean(const ParamMap& p, const std::string& prefix, const Mat& columns) {
  Vec acc;
  for (const Vec& col : columns) {
    const Vec o = mlp1(p, prefix, col);
    if (acc.empty()) acc.assign(o.size(), 0.0);
    for (std::size_t i = 0; i < o.size(); ++i) acc[i] += o[i];
  }
  for (double& v : acc) v /= static_cast<double>(columns.size());
  return acc;
}

struct Gauss {
  Vec mu;
  Vec sigma;
};

Gauss split(const Vec& raw, std::size_t d) {
  Gauss g;
  for (std::size_t i = 0; i < d; ++i) {
    g.mu.push_back(raw[i]);
    g.sigma.push_back(1e-3 + softplus(raw[d + i]));
  }
  return g;
}

double kl(const Gauss& q, const Gauss& p) {
  double s = 0.0;
  for (std::size_t i = 0; i < q.mu.size(); ++i) {
    const double dm = q.mu[i] - p.mu[i];
    s += std::log(p.sigma[i] / q.sigma[i]) +
         (q.sigma[i] * q.sigma[i] + dm * dm) / (2.0 * p.sigma[i] * p.sigma[i]) - 0.5;
  }
  return s;
}

double log_normal(double y, double mu, double sigma) {
  const double r = (y - mu) / sigma;
  return -0.5 * r * r - std::log(sigma) - 0.5 * std::log(2.0 * std::numbers::pi);
}

Mat pairs(const NdArray& x, const NdArray& y) {
  Mat out;
  for (std::size_t i = 0; i < x.size(); ++i) out.push_back({x[i], y[i]});
  return out;
}

double np_elbo_oracle(const ParamMap& p, const Task& t, const Vec& eps) {
  const std::size_t d = eps.size();
  const Vec r = mlp1_mean(p, "encoder", pairs(t.x_context, t.y_context));
  const Gauss qc = split(mlp1_mean(p, "latent_encoder", pairs(t.x_context, t.y_context)), d);
  const Gauss qt = split(mlp1_mean(p, "latent_encoder", pairs(t.x_target, t.y_target)), d);
  Vec z(d);
  for (std::size_t i = 0; i < d; ++i) z[i] = qt.mu[i] + qt.sigma[i] * eps[i];
  double recon = 0.0;
  for (std::size_t j = 0; j < t.target_size(); ++j) {
    Vec in{t.x_target[j]};
    in.insert(in.end(), r.begin(), r.end());
    in.insert(in.end(), z.begin(), z.end());
    const Vec o = mlp1(p, "decoder", in);
    recon += log_normal(t.y_target[j], o[0], 1e-3 + softplus(o[1]));
  }
  recon /= static_cast<double>(t.target_size());
  return kl(qt, qc) - recon;
}

double gbconp_elbo_oracle(const ParamMap& p, const ModelConfig& cfg, const Task& t, const Vec& eps) {
  const std::size_t d = eps.size();
  // Grid over the data range plus margin.
  double lo = 1e300;
  double hi = -1e300;
  for (const NdArray* xs : {&t.x_context, &t.x_target}) {
    for (double x : xs->data()) {
      lo = std::min(lo, x);
      hi = std::max(hi, x);
    }
  }
  lo -= cfg.grid_margin;
  hi += cfg.grid_margin;
  const double h = 1.0 / cfg.points_per_unit;
  const auto s = static_cast<std::size_t>(std::llround(std::ceil((hi - lo) / h - 1e-9))) + 1;
  Vec grid(s);
  for (std::size_t k = 0; k < s; ++k) grid[k] = lo + static_cast<double>(k) * h;

  auto rbf = [](double a, double b, double ls) {
    return std::exp(-(a - b) * (a - b) / (2.0 * ls * ls));
  };
  const double ls_in = std::exp(p.at("setconv_in/log_ls")[0]);
  const double ls_out = std::exp(p.at("setconv_out/log_ls")[0]);
  auto encode = [&](const NdArray& xs, const NdArray& ys) {
    Mat cols(s, Vec(2, 0.0));
    for (std::size_t k = 0; k < s; ++k) {
      double dens = 0.0;
      double num = 0.0;
      for (std::size_t i = 0; i < xs.size(); ++i) {
        const double w = rbf(grid[k], xs[i], ls_in);
        dens += w;
        num += w * ys[i];
      }
      cols[k] = {dens, num / (dens + 1e-8)};
    }
    return cols;
  };
  const Mat rc = encode(t.x_context, t.y_context);
  const Mat rt = encode(t.x_target, t.y_target);
  const Gauss qc = split(mlp1_mean(p, "latent", rc), d);
  const Gauss qt = split(mlp1_mean(p, "latent", rt), d);
  Vec z(d);
  for (std::size_t i = 0; i < d; ++i) z[i] = qt.mu[i] + qt.sigma[i] * eps[i];

  Mat merged(s);
  for (std::size_t k = 0; k < s; ++k) {
    Vec in = rc[k];
    in.insert(in.end(), z.begin(), z.end());
    merged[k] = mlp1(p, "merger", in);
  }
  // One same-padded conv layer.
  const NdArray& kern = p.at("backbone/k0");
  const NdArray& kb = p.at("backbone/b0");
  const std::size_t ch = kern.dim(0);
  const std::size_t ksz = kern.dim(2);
  const long half = static_cast<long>(ksz / 2);
  Mat conv(s, Vec(ch, 0.0));
  for (std::size_t k = 0; k < s; ++k) {
    for (std::size_t o = 0; o < ch; ++o) {
      double acc = kb[o];
      for (std::size_t i = 0; i < kern.dim(1); ++i) {
        for (std::size_t u = 0; u < ksz; ++u) {
          const long src = static_cast<long>(k) + static_cast<long>(u) - half;
          if (src < 0 || src >= static_cast<long>(s)) continue;
          acc += kern[(o * kern.dim(1) + i) * ksz + u] * merged[static_cast<std::size_t>(src)][i];
        }
      }
      conv[k][o] = acc;
    }
  }
  double recon = 0.0;
  for (std::size_t j = 0; j < t.target_size(); ++j) {
    Vec f(ch, 0.0);
    double total = 0.0;
    for (std::size_t k = 0; k < s; ++k) {
      const double w = rbf(t.x_target[j], grid[k], ls_out);
      total += w;
      for (std::size_t o = 0; o < ch; ++o) f[o] += w * conv[k][o];
    }
    for (double& v : f) v /= total + 1e-8;
    const Vec o = mlp1(p, "head", f);
    recon += log_normal(t.y_target[j], o[0], 1e-3 + softplus(o[1]));
  }
  recon /= static_cast<double>(t.target_size());
  return kl(qt, qc) - recon;
}

// Deterministic, hand-chosen parameter values.
ParamMap hand_params(const ModelConfig& cfg) {
  ParamMap p = init_params(cfg, 0);
  double k = 0.0;
  for (auto& [name, v] : p) {
    if (name.ends_with("log_ls")) {
      v[0] = std::log(0.3);
      continue;
    }
    for (double& e : v.data()) {
      e = 0.6 * std::sin(1.7 * k + 0.3);
      k += 1.0;
    }
  }
  return p;
}

Task two_point_task() {
  Task t;
  t.x_target = NdArray({2}, std::vector<double>{-0.4, 0.5});
  t.y_target = NdArray({2}, std::vector<double>{0.7, -1.1});
  t.x_context = NdArray({1}, std::vector<double>{-0.4});
  t.y_context = NdArray({1}, std::vector<double>{0.7});
  t.context_indices = {0};
  return t;
}

ModelConfig oracle_config(ModelKind kind) {
  ModelConfig c;
  c.kind = kind;
  c.mlp_hidden = {3};
  c.conv = {1, 2, 3};
  c.r_dim = 2;
  c.d_z = 2;
  c.points_per_unit = 4;
  return c;
}

double tape_elbo(const ModelConfig& cfg, const ParamMap& p, const Task& t, const Vec& eps) {
  Graph g(false);
  ModelGraph model(g, cfg, p);
  return elbo_loss(model, t, NdArray({1, eps.size()}, eps)).loss.value()[0];
}

// Task with constant targets, and a CNP whose decoder output is fixed by its last bias.
ParamMap constant_output_cnp(const ModelConfig& cfg, double mu, double raw_sigma) {
  ParamMap p = init_params(cfg, 3);
  const std::string last = "decoder/w" + std::to_string(mlp_layer_count(p, "decoder") - 1);
  for (double& v : p.at(last).data()) v = 0.0;
  NdArray& b = p.at("decoder/b" + std::to_string(mlp_layer_count(p, "decoder") - 1));
  b[0] = mu;
  b[1] = raw_sigma;
  return p;
}

Task constant_task(double y, std::size_t n) {
  Task t = random_task(4, n, 3);
  for (double& v : t.y_target.data()) v = y;
  for (double& v : t.y_context.data()) v = y;
  return t;
}

TrainConfig tiny_train_config(ModelKind kind) {
  TrainConfig c;
  c.model = tiny_config(kind);
  c.data.n_points = 20;
  c.data.max_context = 10;
  c.data.train_tasks = 12;
  c.data.val_tasks = 4;
  c.data.test_tasks = 4;
  c.epochs = 2;
  c.batch_size = 4;
  c.seed = 17;
  return c;
}

}  // namespace

TEST(ConditionalNll, UnitGaussianAtTheTargetsGivesHalfLogTwoPi) {
  const ModelConfig cfg = small_config(ModelKind::CNP);
  // softplus(raw) + 1e-3 == 1
  const ParamMap p = constant_output_cnp(cfg, 0.3, std::log(std::expm1(1.0 - 1e-3)));
  Graph g(false);
  ModelGraph model(g, cfg, p);
  EXPECT_NEAR(conditional_nll_loss(model, constant_task(0.3, 12)).value()[0], 0.918938533204673, 1e-12);
}

TEST(ConditionalNll, BoundedBelowBySigmaFloor) {
  const ModelConfig cfg = small_config(ModelKind::CNP);
  const ParamMap p = constant_output_cnp(cfg, -0.2, -60.0);
  Graph g(false);
  ModelGraph model(g, cfg, p);
  const double loss = conditional_nll_loss(model, constant_task(-0.2, 12)).value()[0];
  EXPECT_NEAR(loss, std::log(1e-3) + 0.5 * std::log(2.0 * std::numbers::pi), 1e-9);
  EXPECT_GT(loss, -5.99);
}

TEST(ConditionalNll, TargetPermutationInvariantAndLatentRejected) {
  const ModelConfig cfg = small_config(ModelKind::ConvCNP);
  const ParamMap p = init_params(cfg, 2);
  const Task t = random_task(3, 20, 6);
  Rng rng(4);
  const auto pt = random_permutation(20, rng);
  std::vector<std::size_t> id(6);
  std::iota(id.begin(), id.end(), std::size_t{0});
  Graph g(false);
  ModelGraph model(g, cfg, p);
  EXPECT_NEAR(conditional_nll_loss(model, t).value()[0],
              conditional_nll_loss(model, permute_task(t, id, pt)).value()[0], 1e-12);
  const ModelConfig np = small_config(ModelKind::NP);
  const ParamMap pn = init_params(np, 2);
  ModelGraph latent(g, np, pn);
  EXPECT_THROW(conditional_nll_loss(latent, t), ContractError);
}

TEST(ElboLoss, MatchesScalarReferenceForNp) {
  const ModelConfig cfg = oracle_config(ModelKind::NP);
  const ParamMap p = hand_params(cfg);
  const Vec eps{0.4, -1.3};
  EXPECT_NEAR(tape_elbo(cfg, p, two_point_task(), eps), np_elbo_oracle(p, two_point_task(), eps), 1e-10);
}

TEST(ElboLoss, MatchesScalarReferenceForGbconp) {
  const ModelConfig cfg = oracle_config(ModelKind::GBCoNP);
  const ParamMap p = hand_params(cfg);
  const Vec eps{-0.8, 0.25};
  EXPECT_NEAR(tape_elbo(cfg, p, two_point_task(), eps), gbconp_elbo_oracle(p, cfg, two_point_task(), eps),
              1e-10);
}

TEST(ElboLoss, ContextEqualsTargetHasZeroKl) {
  for (ModelKind kind : {ModelKind::NP, ModelKind::GBCoNP}) {
    const ModelConfig cfg = small_config(kind);
    const ParamMap p = init_params(cfg, 8);
    Graph g(false);
    ModelGraph model(g, cfg, p);
    const ElboTerms terms = elbo_loss(model, context_equals_target(random_task(9)), NdArray({2, cfg.d_z}, 0.5));
    EXPECT_EQ(terms.kl.value()[0], 0.0);
    EXPECT_EQ(terms.loss.value()[0], -terms.recon.value()[0]);
  }
}

TEST(ElboLoss, KlNonNegativeAndShapesChecked) {
  const ModelConfig cfg = small_config(ModelKind::GBCoNP);
  const ParamMap p = init_params(cfg, 8);
  Rng rng(2);
  for (int i = 0; i < 20; ++i) {
    Graph g(false);
    ModelGraph model(g, cfg, p);
    EXPECT_GE(elbo_loss(model, random_task(i, 25, 4), standard_normal(rng, {1, cfg.d_z})).kl.value()[0], 0.0);
  }
  Graph g(false);
  ModelGraph model(g, cfg, p);
  EXPECT_THROW(elbo_loss(model, random_task(1), NdArray({cfg.d_z}, 0.0)), ContractError);
  EXPECT_THROW(elbo_loss(model, random_task(1), NdArray({0, cfg.d_z})), ContractError);
}

TEST(ElboLoss, SampleCountDoesNotChangeTheExpectation) {
  const ModelConfig cfg = tiny_config(ModelKind::NP);
  ParamMap p = init_params(cfg, 5);
  // Make the latent scale visible so the estimator actually varies.
  for (double& v : p.at("latent_encoder/b1").data()) v = 0.5;
  const Task t = random_task(21, 15, 5);
  Rng rng(99);
  auto stats = [&](std::size_t n_z, std::size_t draws) {
    double s = 0.0;
    double s2 = 0.0;
    for (std::size_t i = 0; i < draws; ++i) {
      Graph g(false);
      ModelGraph model(g, cfg, p);
      const double v = elbo_loss(model, t, standard_normal(rng, {n_z, cfg.d_z})).loss.value()[0];
      s += v;
      s2 += v * v;
    }
    const double mean = s / draws;
    const double var = (s2 / draws - mean * mean) / (draws - 1.0);
    return std::pair{mean, var};
  };
  const auto [m1, v1] = stats(1, 10000);
  const auto [m16, v16] = stats(16, 10000);
  EXPECT_GT(v1, 0.0);
  EXPECT_LT(std::abs(m1 - m16), 3.0 * std::sqrt(v1 + v16));
}

TEST(Adam, FirstStepMovesByLearningRateTimesSign) {
  ParamMap p{{"a", NdArray({3}, std::vector<double>{1.0, -2.0, 0.5})}};
  const ParamMap g{{"a", NdArray({3}, std::vector<double>{0.2, -3.0, 0.0})}};
  AdamState s = AdamState::zeros_like(p);
  adam_step(p, g, s, 0.01);
  EXPECT_EQ(s.step, 1u);
  EXPECT_NEAR(p.at("a")[0], 1.0 - 0.01 * 0.2 / (0.2 + 1e-8), 1e-15);
  EXPECT_NEAR(p.at("a")[1], -2.0 + 0.01 * 3.0 / (3.0 + 1e-8), 1e-15);
  EXPECT_EQ(p.at("a")[2], 0.5);
}

TEST(Adam, SecondStepMatchesHandRecurrence) {
  ParamMap p{{"a", NdArray::scalar(0.0)}};
  AdamState s = AdamState::zeros_like(p);
  adam_step(p, {{"a", NdArray::scalar(1.0)}}, s, 0.1);
  adam_step(p, {{"a", NdArray::scalar(-2.0)}}, s, 0.1);
  const double m = 0.9 * 0.1 * 1.0 + 0.1 * -2.0;
  const double v = 0.999 * 0.001 * 1.0 + 0.001 * 4.0;
  const double step2 = 0.1 * (m / (1 - 0.81)) / (std::sqrt(v / (1 - 0.999 * 0.999)) + 1e-8);
  EXPECT_NEAR(p.at("a")[0], -0.1 / (1.0 + 1e-8) - step2, 1e-14);
}

TEST(Adam, MissingGradientRejected) {
  ParamMap p{{"a", NdArray::scalar(0.0)}};
  AdamState s = AdamState::zeros_like(p);
  EXPECT_THROW(adam_step(p, {}, s, 0.1), ContractError);
}

TEST(TrainConfig, ValidationRejectsBadValues) {
  TrainConfig c = tiny_train_config(ModelKind::CNP);
  EXPECT_NO_THROW(c.validate());
  c.epochs = 0;
  EXPECT_THROW(c.validate(), ContractError);
  c = tiny_train_config(ModelKind::CNP);
  c.learning_rate = 0.0;
  EXPECT_THROW(c.validate(), ContractError);
  c.learning_rate = 1.0;
  EXPECT_THROW(c.validate(), ContractError);
  c = tiny_train_config(ModelKind::CNP);
  c.n_z = 0;
  EXPECT_THROW(c.validate(), ContractError);
  EXPECT_THROW(train(c), ContractError);
}

TEST(TrainConfig, JsonRoundTrip) {
  const TrainConfig c = tiny_train_config(ModelKind::GBCoNP);
  EXPECT_EQ(TrainConfig::from_json(c.to_json()).to_json(), c.to_json());
}

TEST(TrainEpoch, ZeroLearningRateLeavesParametersBitwiseUnchanged) {
  for (ModelKind kind : {ModelKind::CNP, ModelKind::GBCoNP}) {
    TrainConfig c = tiny_train_config(kind);
    c.learning_rate = 0.0;
    const TaskSource source(c.data, c.seed);
    Checkpoint state;
    state.model = c.model;
    state.params = init_params(c.model, 1);
    state.optimizer = AdamState::zeros_like(state.params);
    const ParamMap before = state.params;
    train_epoch(state, c, source, 1);
    EXPECT_EQ(state.params, before);
    EXPECT_EQ(state.optimizer.step, 3u);  // 12 tasks in batches of 4
  }
}

TEST(TrainEpoch, PositiveLearningRateMovesParameters) {
  const TrainConfig c = tiny_train_config(ModelKind::NP);
  const TaskSource source(c.data, c.seed);
  Checkpoint state;
  state.model = c.model;
  state.params = init_params(c.model, 1);
  state.optimizer = AdamState::zeros_like(state.params);
  const ParamMap before = state.params;
  const EpochStats stats = train_epoch(state, c, source, 1);
  EXPECT_NE(state.params, before);
  EXPECT_TRUE(std::isfinite(stats.train_loss));
  EXPECT_GE(stats.kl_mean, 0.0);
}

TEST(Train, ThreadCountDoesNotChangeResults) {
  TrainConfig c = tiny_train_config(ModelKind::GBCoNP);
  const TrainResult one = train(c);
  c.threads = 3;
  const TrainResult three = train(c);
  EXPECT_EQ(one.last.params, three.last.params);
  ASSERT_EQ(one.log.size(), three.log.size());
  for (std::size_t i = 0; i < one.log.size(); ++i) EXPECT_EQ(one.log[i].val_ll, three.log[i].val_ll);
}

TEST(Train, SameSeedReproducesMetricsAndCheckpoint) {
  const auto dir = std::filesystem::temp_directory_path() / "npgrid_train_repro";
  std::filesystem::remove_all(dir);
  const TrainConfig c = tiny_train_config(ModelKind::NP);
  const TrainResult a = train(c, {dir / "a", {}});
  const TrainResult b = train(c, {dir / "b", {}});
  ASSERT_EQ(a.log.size(), 2u);
  for (std::size_t i = 0; i < a.log.size(); ++i) {
    EXPECT_EQ(a.log[i].train_loss, b.log[i].train_loss);
    EXPECT_EQ(a.log[i].val_ll, b.log[i].val_ll);
    EXPECT_EQ(a.log[i].kl_mean, b.log[i].kl_mean);
  }
  EXPECT_EQ(read_file_bytes(dir / "a" / "checkpoint.gbcn"), read_file_bytes(dir / "b" / "checkpoint.gbcn"));
  EXPECT_TRUE(std::filesystem::exists(dir / "a" / "metrics.jsonl"));
  std::filesystem::remove_all(dir);
}

TEST(Train, BestCheckpointHasHighestValidation) {
  TrainConfig c = tiny_train_config(ModelKind::CNP);
  c.epochs = 3;
  const TrainResult r = train(c);
  double best = -1e300;
  for (const auto& rec : r.log) best = std::max(best, rec.val_ll);
  ASSERT_TRUE(r.best.best_val_ll.has_value());
  EXPECT_EQ(*r.best.best_val_ll, best);
  EXPECT_EQ(r.last.epoch, 3u);
}

TEST(EpochRecord, JsonHasTheLoggedFields) {
  EpochRecord r;
  r.epoch = 2;
  const auto j = r.to_json();
  for (const char* key : {"epoch", "train_loss", "val_ll", "kl_mean", "wall_seconds"}) EXPECT_TRUE(j.contains(key));
}
