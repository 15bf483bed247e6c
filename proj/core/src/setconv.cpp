#include "npgrid/setconv.hpp"

#include <algorithm>
#include <string>

#include "npgrid/errors.hpp"

namespace npgrid {
namespace {

constexpr double kCoverTolerance = 1e-9;

// 0.5 / l^2 as a graph scalar.
Var half_inverse_square(Var log_length_scale) {
  if (log_length_scale.size() != 1) throw ContractError("setconv: log length scale must be scalar");
  return ad::mul(ad::exp(ad::mul(log_length_scale, -2.0)), 0.5);
}

// [rows.size(), cols.size()] matrix of squared differences.
NdArray squared_distances(std::span<const double> rows, std::span<const double> cols) {
  NdArray out({rows.size(), cols.size()});
  for (std::size_t r = 0; r < rows.size(); ++r) {
    for (std::size_t c = 0; c < cols.size(); ++c) {
      const double d = rows[r] - cols[c];
      out[r * cols.size() + c] = d * d;
    }
  }
  return out;
}

void require_covered(const Grid& grid, const NdArray& xs, const char* what) {
  for (double x : xs.data()) {
    if (!grid.covers(x)) {
      throw ContractError(std::string(what) + " at x = " + std::to_string(x) +
                          " lies outside the grid [" + std::to_string(grid.front()) + ", " +
                          std::to_string(grid.back()) + "]");
    }
  }
}

}  // namespace

bool Grid::covers(double x) const {
  return size() > 0 && x >= front() - kCoverTolerance && x <= back() + kCoverTolerance;
}

Grid build_grid(double x_min, double x_max, int points_per_unit, double margin) {
  if (!(x_max > x_min)) throw ContractError("build_grid: x_max must exceed x_min");
  if (points_per_unit < 2) throw ContractError("build_grid: points_per_unit must be >= 2");
  if (!(margin >= 0.0)) throw ContractError("build_grid: margin must be >= 0");
  const double lo = x_min - margin;
  const double span = (x_max + margin) - lo;
  const double ppu = static_cast<double>(points_per_unit);
  // Guard against span * ppu landing a hair above an integer.
  const auto intervals = static_cast<std::size_t>(std::ceil(span * ppu - 1e-9));
  Grid grid;
  grid.spacing = 1.0 / ppu;
  grid.positions = NdArray({intervals + 1});
  for (std::size_t i = 0; i <= intervals; ++i) {
    grid.positions[i] = lo + static_cast<double>(i) / ppu;
  }
  return grid;
}

Var GridRepresentation::density() const { return ad::slice(features, 0, 1); }

GridRepresentation encode_to_grid(Graph& graph, const NdArray& x_context, Var y_context,
                                  const Grid& grid, Var log_length_scale) {
  const std::size_t m = x_context.size();
  const std::size_t s = grid.size();
  if (y_context.size() != m) throw ContractError("encode_to_grid: x and y context lengths differ");
  if (m == 0) return {graph.constant(NdArray({2, s}, 0.0)), grid};
  require_covered(grid, x_context, "context point");

  Var scale = half_inverse_square(log_length_scale);
  Var d2 = graph.constant(squared_distances(grid.positions.data(), x_context.data()));  // [s, m]
  Var weights = ad::exp(ad::neg(ad::mul(d2, scale)));
  Var density = ad::matmul(weights, graph.constant(NdArray({m, 1}, 1.0)));          // [s, 1]
  Var weighted = ad::matmul(weights, ad::reshape(y_context, {m, 1}));                // [s, 1]
  Var signal = weighted / ad::add(density, kSetConvEpsilon);
  Var features = ad::concat(ad::reshape(density, {1, s}), ad::reshape(signal, {1, s}));
  return {features, grid};
}

Var decode_from_grid(Var features, const Grid& grid, const NdArray& x_query, Var log_length_scale) {
  if (features.value().rank() != 2 || features.shape()[1] != grid.size()) {
    throw ContractError("decode_from_grid: features " + shape_string(features.shape()) +
                        " do not match a grid of " + std::to_string(grid.size()) + " nodes");
  }
  require_covered(grid, x_query, "query");
  Graph& graph = *features.graph();
  const std::size_t q = x_query.size();
  const std::size_t c = features.shape()[0];
  Var scale = half_inverse_square(log_length_scale);
  Var d2 = graph.constant(squared_distances(grid.positions.data(), x_query.data()));  // [s, q]
  Var weights = ad::exp(ad::neg(ad::mul(d2, scale)));
  Var totals = ad::matmul(graph.constant(NdArray({1, grid.size()}, 1.0)), weights);   // [1, q]
  Var norm = ad::transpose(ad::broadcast(ad::reshape(ad::add(totals, kSetConvEpsilon), {q}), c));
  return ad::matmul(features, weights) / norm;
}

}  // namespace npgrid
