#pragma once

// Projection of point sets onto a uniform grid and interpolation back off it.

#include <cmath>

#include "npgrid/autodiff.hpp"

namespace npgrid {

/// Uniform discretization of the input line.
struct Grid {
  NdArray positions;  // [s], strictly increasing
  double spacing = 0.0;

  std::size_t size() const noexcept { return positions.size(); }
  double front() const { return positions[0]; }
  double back() const { return positions[positions.size() - 1]; }
  bool covers(double x) const;
};

inline constexpr int kDefaultPointsPerUnit = 32;
inline constexpr double kDefaultGridMargin = 0.1;
inline constexpr double kSetConvEpsilon = 1e-8;

/// Grid over [x_min - margin, x_max + margin] with spacing 1/points_per_unit
/// and s = ceil(span * points_per_unit) + 1 nodes.
Grid build_grid(double x_min, double x_max, int points_per_unit, double margin);

/// Learnable length scale of the exponentiated-quadratic similarity.
struct SetConvParams {
  double log_length_scale = 0.0;

  double length_scale() const { return std::exp(log_length_scale); }
  /// Initialization used by the models: length scale 2 / points_per_unit.
  static SetConvParams for_resolution(int points_per_unit) {
    return {std::log(2.0 / points_per_unit)};
  }
};

/// Functional features on the grid. Channel 0 is the density channel.
struct GridRepresentation {
  Var features;  // [channels, s]
  Grid grid;

  Var density() const;
};

/// Encoder: w_ij = exp(-(grid_j - x_i)^2 / (2 l^2)),
///   density_j = sum_i w_ij,  signal_j = sum_i w_ij y_i / (density_j + 1e-8).
/// Output channels [density, signal]. An empty context gives zeros.
/// Throws ContractError if a context point lies outside the grid.
GridRepresentation encode_to_grid(Graph& graph, const NdArray& x_context, Var y_context,
                                  const Grid& grid, Var log_length_scale);

/// Decoder: out_cj = sum_k w_kj f_ck / (sum_k w_kj + 1e-8),
///   w_kj = exp(-(x_query_j - grid_k)^2 / (2 l^2)).
/// Throws ContractError if a query lies outside the grid.
Var decode_from_grid(Var features, const Grid& grid, const NdArray& x_query,
                     Var log_length_scale);

}  // namespace npgrid
