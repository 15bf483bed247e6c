#include "npgrid/layers.hpp"

#include <cmath>

#include "npgrid/errors.hpp"

namespace npgrid {

Var ParamBinder::operator()(const std::string& name) {
  if (auto it = bound_.find(name); it != bound_.end()) return it->second;
  auto it = params_.find(name);
  if (it == params_.end()) throw ContractError("model parameter '" + name + "' is missing");
  Var v = graph_.leaf(it->second, name);
  bound_.emplace(name, v);
  return v;
}

void ParamBinder::bind(const std::string& name, Var v) {
  auto it = params_.find(name);
  if (it == params_.end()) throw ContractError("model parameter '" + name + "' is missing");
  if (v.shape() != it->second.shape()) throw ContractError("model parameter '" + name + "' has the wrong shape");
  bound_[name] = v;
}

ParamMap ParamBinder::gradients() const {
  ParamMap out;
  for (const auto& [name, value] : params_) {
    auto it = bound_.find(name);
    out[name] = it == bound_.end() ? NdArray(value.shape(), 0.0) : graph_.grad(it->second);
  }
  return out;
}

void init_mlp(ParamMap& params, const std::string& prefix, const std::vector<std::size_t>& widths,
              Rng& rng) {
  if (widths.size() < 3) throw ContractError("init_mlp: an MLP needs at least one hidden layer");
  for (std::size_t l = 0; l + 1 < widths.size(); ++l) {
    const std::size_t in = widths[l];
    const std::size_t out = widths[l + 1];
    const double bound = 1.0 / std::sqrt(static_cast<double>(in));
    std::uniform_real_distribution<double> u(-bound, bound);
    NdArray w({out, in});
    for (double& v : w.data()) v = u(rng);
    params[prefix + "/w" + std::to_string(l)] = std::move(w);
    params[prefix + "/b" + std::to_string(l)] = NdArray({out}, 0.0);
  }
}

std::size_t mlp_layer_count(const ParamMap& params, const std::string& prefix) {
  std::size_t n = 0;
  while (params.count(prefix + "/w" + std::to_string(n)) != 0) ++n;
  if (n == 0) throw ContractError("no MLP parameters under '" + prefix + "'");
  return n;
}

Var dense_columns(ParamBinder& p, const std::string& prefix, std::size_t layer, Var input) {
  const std::string idx = std::to_string(layer);
  Var w = p(prefix + "/w" + idx);
  Var b = p(prefix + "/b" + idx);
  return ad::matmul(w, input) + ad::broadcast(b, input.shape()[1]);
}

namespace {

std::size_t layer_count(ParamBinder& p, const std::string& prefix) {
  std::size_t n = 0;
  while (p.has(prefix + "/w" + std::to_string(n))) ++n;
  if (n == 0) throw ContractError("no MLP parameters under '" + prefix + "'");
  return n;
}

}  // namespace

Var mlp_columns(ParamBinder& p, const std::string& prefix, Var input) {
  const std::size_t layers = layer_count(p, prefix);
  Var h = input;
  for (std::size_t l = 0; l < layers; ++l) {
    h = dense_columns(p, prefix, l, h);
    if (l + 1 < layers) h = ad::relu(h);
  }
  return h;
}

Var mlp_mean_columns(ParamBinder& p, const std::string& prefix, Var input) {
  const std::size_t layers = layer_count(p, prefix);
  Var h = input;
  for (std::size_t l = 0; l + 1 < layers; ++l) h = ad::relu(dense_columns(p, prefix, l, h));
  const std::size_t width = h.shape()[0];
  Var pooled = ad::reshape(ad::mean(h, 1), {width, 1});
  Var out = dense_columns(p, prefix, layers - 1, pooled);
  return ad::reshape(out, {out.shape()[0]});
}

void init_conv_backbone(ParamMap& params, const std::string& prefix, std::size_t in_channels,
                        std::size_t channels, std::size_t depth, std::size_t kernel_size, Rng& rng) {
  if (depth < 1) throw ContractError("conv backbone depth must be >= 1");
  if (kernel_size % 2 == 0) throw ContractError("conv backbone kernel size must be odd");
  std::size_t in = in_channels;
  for (std::size_t l = 0; l < depth; ++l) {
    const double bound = 1.0 / std::sqrt(static_cast<double>(in * kernel_size));
    std::uniform_real_distribution<double> u(-bound, bound);
    NdArray k({channels, in, kernel_size});
    for (double& v : k.data()) v = u(rng);
    params[prefix + "/k" + std::to_string(l)] = std::move(k);
    params[prefix + "/b" + std::to_string(l)] = NdArray({channels}, 0.0);
    in = channels;
  }
}

Var conv_backbone(ParamBinder& p, const std::string& prefix, std::size_t depth, Var input) {
  Var h = input;
  for (std::size_t l = 0; l < depth; ++l) {
    const std::string idx = std::to_string(l);
    h = ad::conv1d(h, p(prefix + "/k" + idx), p(prefix + "/b" + idx));
    if (l + 1 < depth) h = ad::relu(h);
  }
  return h;
}

}  // namespace npgrid
