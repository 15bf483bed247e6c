#pragma once

#include <cstdint>
#include <random>
#include <vector>

#include "npgrid/ndarray.hpp"

namespace npgrid {

using Rng = std::mt19937_64;

/// Mixes a base seed with a stream tag so sub-streams (per task, per
/// worker, per purpose) are independent of execution order.
std::uint64_t derive_seed(std::uint64_t base, std::uint64_t stream);

inline Rng make_rng(std::uint64_t base, std::uint64_t stream) {
  return Rng(derive_seed(base, stream));
}

/// Standard-normal draws as an array of the given shape.
NdArray standard_normal(Rng& rng, Shape shape);

/// `count` distinct indices from [0, n), in draw order.
std::vector<std::size_t> sample_without_replacement(Rng& rng, std::size_t n, std::size_t count);

/// Inverse of the standard normal CDF. Acklam's rational approximation
/// (relative error 1.15e-9) followed by one Halley step against erfc,
/// which brings the result to near machine precision.
double normal_quantile(double p);

}  // namespace npgrid
