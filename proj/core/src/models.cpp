#include "npgrid/models.hpp"

#include <algorithm>
#include <cctype>
#include <limits>

#include "npgrid/errors.hpp"

namespace npgrid {

std::string to_string(ModelKind kind) {
  switch (kind) {
    case ModelKind::CNP: return "cnp";
    case ModelKind::NP: return "np";
    case ModelKind::ConvCNP: return "convcnp";
    case ModelKind::GBCoNP: return "gbconp";
  }
  return "unknown";
}

ModelKind parse_model_kind(std::string_view name) {
  std::string lower(name);
  std::transform(lower.begin(), lower.end(), lower.begin(),
                 [](unsigned char c) { return static_cast<char>(std::tolower(c)); });
  if (lower == "cnp") return ModelKind::CNP;
  if (lower == "np") return ModelKind::NP;
  if (lower == "convcnp") return ModelKind::ConvCNP;
  if (lower == "gbconp") return ModelKind::GBCoNP;
  throw ContractError("unknown model kind '" + std::string(name) +
                      "' (expected cnp, np, convcnp or gbconp)");
}

bool is_latent(ModelKind kind) noexcept {
  return kind == ModelKind::NP || kind == ModelKind::GBCoNP;
}

bool is_convolutional(ModelKind kind) noexcept {
  return kind == ModelKind::ConvCNP || kind == ModelKind::GBCoNP;
}

void ModelConfig::validate() const {
  if (mlp_hidden.empty()) throw ContractError("model.mlp_hidden: at least one hidden layer");
  for (std::size_t w : mlp_hidden) {
    if (w == 0) throw ContractError("model.mlp_hidden: widths must be positive");
  }
  if (conv.depth < 1) throw ContractError("model.conv_depth must be >= 1");
  if (conv.channels < 1) throw ContractError("model.conv_channels must be >= 1");
  if (conv.kernel_size % 2 == 0) throw ContractError("model.conv_kernel must be odd");
  if (r_dim < 1) throw ContractError("model.r_dim must be >= 1");
  if (d_z < 1) throw ContractError("model.d_z must be >= 1");
  if (points_per_unit < 2) throw ContractError("model.points_per_unit must be >= 2");
  if (!(grid_margin >= 0.0)) throw ContractError("model.grid_margin must be >= 0");
  if (!(sigma_floor > 0.0)) throw ContractError("model.sigma_floor must be > 0");
}

nlohmann::json ModelConfig::to_json() const {
  return {{"kind", to_string(kind)},
          {"mlp_hidden", mlp_hidden},
          {"conv_depth", conv.depth},
          {"conv_channels", conv.channels},
          {"conv_kernel", conv.kernel_size},
          {"r_dim", r_dim},
          {"d_z", d_z},
          {"points_per_unit", points_per_unit},
          {"grid_margin", grid_margin},
          {"sigma_floor", sigma_floor}};
}

ModelConfig ModelConfig::from_json(const nlohmann::json& j) {
  ModelConfig c;
  try {
    c.kind = parse_model_kind(j.at("kind").get<std::string>());
    c.mlp_hidden = j.at("mlp_hidden").get<std::vector<std::size_t>>();
    c.conv.depth = j.at("conv_depth").get<std::size_t>();
    c.conv.channels = j.at("conv_channels").get<std::size_t>();
    c.conv.kernel_size = j.at("conv_kernel").get<std::size_t>();
    c.r_dim = j.at("r_dim").get<std::size_t>();
    c.d_z = j.at("d_z").get<std::size_t>();
    c.points_per_unit = j.at("points_per_unit").get<int>();
    c.grid_margin = j.at("grid_margin").get<double>();
    c.sigma_floor = j.at("sigma_floor").get<double>();
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(std::string("model config: ") + e.what());
  }
  c.validate();
  return c;
}

namespace {

std::vector<std::size_t> widths(std::size_t in, const std::vector<std::size_t>& hidden,
                                std::size_t out) {
  std::vector<std::size_t> w{in};
  w.insert(w.end(), hidden.begin(), hidden.end());
  w.push_back(out);
  return w;
}

// Zeroes the rows of the last layer that produce raw sigma values, so an
// untrained latent path reports sigma = sigma_floor + ln 2.
void zero_sigma_rows(ParamMap& params, const std::string& prefix, std::size_t d_z) {
  const std::size_t last = mlp_layer_count(params, prefix) - 1;
  NdArray& w = params.at(prefix + "/w" + std::to_string(last));
  NdArray& b = params.at(prefix + "/b" + std::to_string(last));
  const std::size_t cols = w.dim(1);
  for (std::size_t r = d_z; r < 2 * d_z; ++r) {
    for (std::size_t c = 0; c < cols; ++c) w.at(r, c) = 0.0;
    b[r] = 0.0;
  }
}

DiagGaussian split_latent(ModelGraph& model, Var raw) {
  const std::size_t d_z = model.config().d_z;
  return DiagGaussian(ad::slice(raw, 0, d_z),
                      sigma_from_raw(ad::slice(raw, d_z, 2 * d_z), model.config().sigma_floor));
}

// Rows [mu; raw sigma] of a [2, n] head output.
DiagGaussian split_predictive(ModelGraph& model, Var head) {
  const std::size_t n = head.shape()[1];
  Var mu = ad::reshape(ad::slice(head, 0, 1), {n});
  Var raw = ad::reshape(ad::slice(head, 1, 2), {n});
  return DiagGaussian(mu, sigma_from_raw(raw, model.config().sigma_floor));
}

Var row(Graph& g, const NdArray& v) { return g.constant(v.reshaped({1, v.size()})); }

// [x; y] pairs as columns, [2, m].
Var pair_columns(Graph& g, const NdArray& x, const NdArray& y) {
  return ad::concat(row(g, x), row(g, y));
}

void require_context(const Task& task, ModelKind kind) {
  if (task.context_size() == 0) {
    throw ContractError(to_string(kind) + " requires a non-empty context set");
  }
}

void require_noise(const ModelConfig& config, const NdArray& noise) {
  if (noise.shape() != Shape{config.d_z}) {
    throw ContractError("latent noise has shape " + shape_string(noise.shape()) + ", expected [" +
                        std::to_string(config.d_z) + "]");
  }
}

}  // namespace

ParamMap init_params(const ModelConfig& config, std::uint64_t seed) {
  config.validate();
  ParamMap p;
  Rng rng = make_rng(seed, 0x9a7a);
  const auto& hidden = config.mlp_hidden;
  const std::size_t d_z = config.d_z;
  const std::size_t ch = config.conv.channels;
  const NdArray log_ls = NdArray::scalar(SetConvParams::for_resolution(config.points_per_unit)
                                             .log_length_scale);
  switch (config.kind) {
    case ModelKind::CNP:
      init_mlp(p, "encoder", widths(2, hidden, config.r_dim), rng);
      init_mlp(p, "decoder", widths(1 + config.r_dim, hidden, 2), rng);
      break;
    case ModelKind::NP:
      init_mlp(p, "encoder", widths(2, hidden, config.r_dim), rng);
      init_mlp(p, "latent_encoder", widths(2, hidden, 2 * d_z), rng);
      zero_sigma_rows(p, "latent_encoder", d_z);
      init_mlp(p, "decoder", widths(1 + config.r_dim + d_z, hidden, 2), rng);
      break;
    case ModelKind::ConvCNP:
      p["setconv_in/log_ls"] = log_ls;
      init_conv_backbone(p, "backbone", 2, ch, config.conv.depth, config.conv.kernel_size, rng);
      p["setconv_out/log_ls"] = log_ls;
      init_mlp(p, "head", widths(ch, hidden, 2), rng);
      break;
    case ModelKind::GBCoNP:
      p["setconv_in/log_ls"] = log_ls;
      init_mlp(p, "latent", widths(2, hidden, 2 * d_z), rng);
      zero_sigma_rows(p, "latent", d_z);
      init_mlp(p, "merger", widths(2 + d_z, hidden, ch), rng);
      init_conv_backbone(p, "backbone", ch, ch, config.conv.depth, config.conv.kernel_size, rng);
      p["setconv_out/log_ls"] = log_ls;
      init_mlp(p, "head", widths(ch, hidden, 2), rng);
      break;
  }
  return p;
}

Grid task_grid(const ModelConfig& config, const Task& task) {
  double lo = std::numeric_limits<double>::infinity();
  double hi = -lo;
  for (const NdArray* xs : {&task.x_context, &task.x_target}) {
    for (double x : xs->data()) {
      lo = std::min(lo, x);
      hi = std::max(hi, x);
    }
  }
  if (!(lo <= hi)) throw ContractError("task has no inputs to build a grid over");
  const double min_span = 1.0 / config.points_per_unit;
  if (hi - lo < min_span) {
    const double mid = 0.5 * (lo + hi);
    lo = mid - 0.5 * min_span;
    hi = mid + 0.5 * min_span;
  }
  return build_grid(lo, hi, config.points_per_unit, config.grid_margin);
}

DiagGaussian latent_from_grid(ModelGraph& model, Var grid_features) {
  return split_latent(model, mlp_mean_columns(model.params(), "latent", grid_features));
}

Encoding encode(ModelGraph& model, const Task& task, bool with_target_posterior) {
  Graph& g = model.graph();
  ParamBinder& p = model.params();
  const ModelKind kind = model.config().kind;
  Encoding enc;
  switch (kind) {
    case ModelKind::CNP:
    case ModelKind::NP: {
      require_context(task, kind);
      Var context = pair_columns(g, task.x_context, task.y_context);
      enc.r = mlp_mean_columns(p, "encoder", context);
      if (kind == ModelKind::NP) {
        enc.q_context = split_latent(model, mlp_mean_columns(p, "latent_encoder", context));
        if (with_target_posterior) {
          Var target = pair_columns(g, task.x_target, task.y_target);
          enc.q_target = split_latent(model, mlp_mean_columns(p, "latent_encoder", target));
        }
      }
      break;
    }
    case ModelKind::ConvCNP:
    case ModelKind::GBCoNP: {
      enc.grid = task_grid(model.config(), task);
      Var log_ls = p("setconv_in/log_ls");
      enc.r_grid =
          encode_to_grid(g, task.x_context, g.constant(task.y_context), *enc.grid, log_ls).features;
      if (kind == ModelKind::GBCoNP) {
        enc.q_context = latent_from_grid(model, enc.r_grid);
        if (with_target_posterior) {
          Var r_target =
              encode_to_grid(g, task.x_target, g.constant(task.y_target), *enc.grid, log_ls)
                  .features;
          enc.q_target = latent_from_grid(model, r_target);
        }
      }
      break;
    }
  }
  return enc;
}

ModelOutput decode(ModelGraph& model, const Task& task, const Encoding& encoding, Var z) {
  Graph& g = model.graph();
  ParamBinder& p = model.params();
  const ModelConfig& cfg = model.config();
  const bool latent = is_latent(cfg.kind);
  if (latent && (!z.valid() || z.shape() != Shape{cfg.d_z})) {
    throw ContractError("decode: latent models need z of shape [" + std::to_string(cfg.d_z) + "]");
  }
  ModelOutput out;
  out.q_context = encoding.q_context;
  out.q_target = encoding.q_target;
  if (latent) out.z = z;
  const std::size_t n = task.target_size();

  if (!is_convolutional(cfg.kind)) {
    Var input = ad::concat(row(g, task.x_target), ad::broadcast(encoding.r, n));
    if (latent) input = ad::concat(input, ad::broadcast(z, n));
    out.predictive = split_predictive(model, mlp_columns(p, "decoder", input));
    return out;
  }

  const Grid& grid = *encoding.grid;
  Var h = encoding.r_grid;
  if (cfg.kind == ModelKind::GBCoNP) {
    out.merger_input = ad::concat(h, ad::broadcast(z, grid.size()));
    h = mlp_columns(p, "merger", out.merger_input);
  }
  h = conv_backbone(p, "backbone", cfg.conv.depth, h);
  Var features = decode_from_grid(h, grid, task.x_target, p("setconv_out/log_ls"));
  out.predictive = split_predictive(model, mlp_columns(p, "head", features));
  return out;
}

namespace {

ModelOutput latent_forward(ModelGraph& model, const Task& task, const NdArray& noise,
                           bool use_target_posterior) {
  require_noise(model.config(), noise);
  const Encoding enc = encode(model, task, use_target_posterior);
  const DiagGaussian& q = use_target_posterior ? *enc.q_target : *enc.q_context;
  return decode(model, task, enc, reparam_sample(q, noise));
}

void require_kind(const ModelGraph& model, ModelKind kind) {
  if (model.config().kind != kind) {
    throw ContractError(to_string(kind) + "_forward called with a " +
                        to_string(model.config().kind) + " configuration");
  }
}

}  // namespace

DiagGaussian cnp_forward(ModelGraph& model, const Task& task) {
  require_kind(model, ModelKind::CNP);
  return decode(model, task, encode(model, task, false)).predictive;
}

ModelOutput np_forward(ModelGraph& model, const Task& task, const NdArray& noise,
                       bool use_target_posterior) {
  require_kind(model, ModelKind::NP);
  return latent_forward(model, task, noise, use_target_posterior);
}

DiagGaussian convcnp_forward(ModelGraph& model, const Task& task) {
  require_kind(model, ModelKind::ConvCNP);
  return decode(model, task, encode(model, task, false)).predictive;
}

ModelOutput gbconp_forward(ModelGraph& model, const Task& task, const NdArray& noise,
                           bool use_target_posterior) {
  require_kind(model, ModelKind::GBCoNP);
  return latent_forward(model, task, noise, use_target_posterior);
}

ModelOutput forward(ModelGraph& model, const Task& task, const NdArray* noise,
                    bool use_target_posterior) {
  if (is_latent(model.config().kind)) {
    if (noise == nullptr) throw ContractError("latent models need a noise vector");
    return latent_forward(model, task, *noise, use_target_posterior);
  }
  return decode(model, task, encode(model, task, false));
}

}  // namespace npgrid
