#pragma once

// Parameter binding and the small building blocks the models share.
// Column-major convention: a batch of L feature vectors of width c is a
// [c, L] array, so a dense layer is W[out, in] x X[in, L] + b.

#include <map>
#include <string>
#include <vector>

#include "npgrid/autodiff.hpp"
#include "npgrid/random.hpp"

namespace npgrid {

using ParamMap = std::map<std::string, NdArray>;

/// Exposes named parameters of a ParamMap as graph leaves, created lazily.
class ParamBinder {
 public:
  ParamBinder(Graph& graph, const ParamMap& params) : graph_(graph), params_(params) {}

  Var operator()(const std::string& name);
  bool has(const std::string& name) const { return params_.count(name) != 0; }
  /// Uses an existing variable for `name` instead of creating a leaf.
  void bind(const std::string& name, Var v);
  Graph& graph() noexcept { return graph_; }

  /// Gradients for every entry of the map after graph.backward();
  /// parameters the forward pass never touched get zeros.
  ParamMap gradients() const;

 private:
  Graph& graph_;
  const ParamMap& params_;
  std::map<std::string, Var> bound_;
};

/// Dense layers `prefix/w{i}`, `prefix/b{i}` for consecutive widths.
/// widths = {in, hidden..., out}; weights ~ U(-1/sqrt(in), 1/sqrt(in)), biases 0.
void init_mlp(ParamMap& params, const std::string& prefix, const std::vector<std::size_t>& widths,
              Rng& rng);
std::size_t mlp_layer_count(const ParamMap& params, const std::string& prefix);

Var dense_columns(ParamBinder& p, const std::string& prefix, std::size_t layer, Var input);

/// Applies the MLP to every column of `input` [in, L]; ReLU between layers.
Var mlp_columns(ParamBinder& p, const std::string& prefix, Var input);

/// Mean over columns of mlp_columns(input), returned as a vector [out].
/// The last layer is affine, so the mean is taken on the final hidden
/// activations and the last layer is applied once.
Var mlp_mean_columns(ParamBinder& p, const std::string& prefix, Var input);

/// Conv stack `prefix/k{i}`, `prefix/b{i}`; ReLU between layers, none after the last.
void init_conv_backbone(ParamMap& params, const std::string& prefix, std::size_t in_channels,
                        std::size_t channels, std::size_t depth, std::size_t kernel_size, Rng& rng);
Var conv_backbone(ParamBinder& p, const std::string& prefix, std::size_t depth, Var input);

}  // namespace npgrid
