#include <gtest/gtest.h>

#include <cmath>

#include "npgrid/errors.hpp"
#include "npgrid/setconv.hpp"
#include "test_support.hpp"

using namespace npgrid;
using npgrid::testing::permuted;
using npgrid::testing::random_permutation;

namespace {

NdArray encode(const NdArray& x, const NdArray& y, const Grid& grid, double ls) {
  Graph g(false);
  return encode_to_grid(g, x, g.constant(y), grid, g.constant(NdArray::scalar(std::log(ls)))).features.value();
}

NdArray decode(const NdArray& features, const Grid& grid, const NdArray& xq, double ls) {
  Graph g(false);
  return decode_from_grid(g.constant(features), grid, xq, g.constant(NdArray::scalar(std::log(ls)))).value();
}

NdArray uniform_points(std::size_t n, double lo, double hi, Rng& rng) {
  std::uniform_real_distribution<double> u(lo, hi);
  NdArray a({n});
  for (double& v : a.data()) v = u(rng);
  return a;
}

}  // namespace

TEST(BuildGrid, DefaultResolutionOverUnitInterval) {
  const Grid g = build_grid(-1.0, 1.0, 32, 0.1);
  EXPECT_DOUBLE_EQ(g.spacing, 0.03125);
  EXPECT_EQ(g.size(), 72u);
  EXPECT_DOUBLE_EQ(g.front(), -1.1);
  for (std::size_t i = 1; i < g.size(); ++i) {
    EXPECT_NEAR(g.positions[i] - g.positions[i - 1], g.spacing, 1e-12);
  }
  EXPECT_GE(g.back(), 1.1 - 1e-12);
}

TEST(BuildGrid, ThreePointGrid) {
  const Grid g = build_grid(2.0, 3.0, 2, 0.0);
  EXPECT_EQ(g.positions.values(), (std::vector<double>{2.0, 2.5, 3.0}));
}

TEST(BuildGrid, DegenerateInputsRejected) {
  EXPECT_THROW(build_grid(1.0, 1.0, 32, 0.1), ContractError);
  EXPECT_THROW(build_grid(0.0, 1.0, 1, 0.1), ContractError);
  EXPECT_THROW(build_grid(0.0, 1.0, 8, -0.1), ContractError);
}

TEST(BuildGrid, CoversRandomRanges) {
  Rng rng(8);
  std::uniform_real_distribution<double> u(-5, 5);
  for (int i = 0; i < 200; ++i) {
    double a = u(rng), b = u(rng);
    if (a == b) continue;
    if (a > b) std::swap(a, b);
    const Grid g = build_grid(a, b, 16, 0.05);
    EXPECT_LE(g.front(), a - 0.05 + 1e-12);
    EXPECT_GE(g.back(), b + 0.05 - 1e-9);
  }
}

TEST(EncodeToGrid, EmptyContextIsZero) {
  const Grid grid = build_grid(-1, 1, 8, 0.1);
  const NdArray f = encode(NdArray({0}), NdArray({0}), grid, 0.25);
  EXPECT_EQ(f.shape(), (Shape{2, grid.size()}));
  for (double v : f.data()) EXPECT_EQ(v, 0.0);
}

TEST(EncodeToGrid, PointOnNodeInNarrowLimit) {
  const Grid grid = build_grid(-1, 1, 8, 0.1);
  const std::size_t j = 7;
  const NdArray f = encode(NdArray::vector({grid.positions[j]}), NdArray::vector({2.0}), grid, 1e-3);
  for (std::size_t k = 0; k < grid.size(); ++k) {
    if (k == j) {
      EXPECT_NEAR(f.at(0, k), 1.0, 1e-12);
      EXPECT_NEAR(f.at(1, k), 2.0, 1e-7);
    } else {
      EXPECT_NEAR(f.at(0, k), 0.0, 1e-12);
      EXPECT_NEAR(f.at(1, k), 0.0, 1e-12);
    }
  }
}

TEST(EncodeToGrid, OutsideGridRejected) {
  const Grid grid = build_grid(-1, 1, 8, 0.1);
  EXPECT_THROW(encode(NdArray::vector({1.5}), NdArray::vector({0.0}), grid, 0.25), ContractError);
}

TEST(EncodeToGrid, DensityNonNegativeAndPositiveWithContext) {
  Rng rng(4);
  const Grid grid = build_grid(-1, 1, 16, 0.1);
  const NdArray x = uniform_points(5, -1, 1, rng);
  const NdArray f = encode(x, uniform_points(5, -2, 2, rng), grid, 2.0 / 16);
  for (std::size_t k = 0; k < grid.size(); ++k) EXPECT_GT(f.at(0, k), 0.0);
}

TEST(EncodeToGrid, PermutationInvariant) {
  Rng rng(21);
  const Grid grid = build_grid(-1, 1, 32, 0.1);
  for (int trial = 0; trial < 20; ++trial) {
    const NdArray x = uniform_points(17, -1, 1, rng);
    const NdArray y = uniform_points(17, -2, 2, rng);
    const auto p = random_permutation(17, rng);
    EXPECT_LT(max_abs_diff(encode(x, y, grid, 0.0625), encode(permuted(x, p), permuted(y, p), grid, 0.0625)),
              1e-12);
  }
}

TEST(EncodeToGrid, TranslationCovariant) {
  Rng rng(5);
  const int ppu = 32;
  const std::size_t shift = 4;
  const double dx = static_cast<double>(shift) / ppu;
  const NdArray x = uniform_points(12, -0.6, 0.6, rng);
  const NdArray y = uniform_points(12, -1, 1, rng);
  NdArray xs = x;
  for (double& v : xs.data()) v += dx;
  const Grid g1 = build_grid(-1, 1, ppu, 0.1);
  const Grid g2 = build_grid(-1 + dx, 1 + dx, ppu, 0.1);
  ASSERT_EQ(g1.size(), g2.size());
  const NdArray a = encode(x, y, g1, 2.0 / ppu);
  const NdArray b = encode(xs, y, g2, 2.0 / ppu);
  // Same window shifted: columns line up one to one.
  EXPECT_LT(max_abs_diff(a, b), 1e-10);
  // Fixed window: columns move by `shift`.
  const NdArray c = encode(xs, y, g1, 2.0 / ppu);
  for (std::size_t ch = 0; ch < 2; ++ch) {
    for (std::size_t k = shift; k < g1.size(); ++k) EXPECT_NEAR(c.at(ch, k), a.at(ch, k - shift), 1e-10);
  }
}

TEST(EncodeToGrid, DensityMassAccounting) {
  Rng rng(6);
  const int ppu = 32;
  const double ls = 2.0 / ppu;
  const Grid grid = build_grid(-1, 1, ppu, 0.1);
  const NdArray x = uniform_points(9, -1.1 + 4 * ls, 1.1 - 4 * ls, rng);
  const NdArray f = encode(x, NdArray({9}, 1.0), grid, ls);
  double total = 0.0;
  for (std::size_t k = 0; k < grid.size(); ++k) total += f.at(0, k);
  const double expected = 9 * ls * std::sqrt(2 * std::acos(-1.0)) / grid.spacing;
  EXPECT_NEAR(total, expected, 0.02 * expected);
}

TEST(DecodeFromGrid, NodeQueryInNarrowLimit) {
  Rng rng(3);
  const Grid grid = build_grid(-1, 1, 8, 0.1);
  NdArray f({3, grid.size()});
  for (double& v : f.data()) v = std::uniform_real_distribution<double>(-1, 1)(rng);
  const NdArray out = decode(f, grid, NdArray::vector({grid.positions[5]}), 1e-3);
  // Only the node itself has non-zero weight (exactly 1); the normalizer adds 1e-8.
  for (std::size_t c = 0; c < 3; ++c) EXPECT_NEAR(out.at(c, 0), f.at(c, 5) / (1.0 + 1e-8), 1e-15);
}

TEST(DecodeFromGrid, ConstantFeaturesReproduced) {
  Rng rng(13);
  const Grid grid = build_grid(-1, 1, 32, 0.1);
  const NdArray f({2, grid.size()}, 0.37);
  const NdArray out = decode(f, grid, uniform_points(40, -1.1, 1.1, rng), 0.0625);
  // Total weight is at least 1 inside the grid, so the 1e-8 normalizer shifts by < 1e-8 relative.
  for (double v : out.data()) EXPECT_NEAR(v, 0.37, 0.37e-8);
}

TEST(DecodeFromGrid, RecoversContextValues) {
  // Interpolation oracle: sparse context on a fine grid, length scale = spacing.
  Rng rng(17);
  const int ppu = 64;
  for (int trial = 0; trial < 20; ++trial) {
    std::vector<double> xs;
    for (int i = 0; i < 6; ++i) xs.push_back(-0.9 + 0.33 * i + std::uniform_real_distribution<double>(0, 0.05)(rng));
    const NdArray x = NdArray::vector(xs);
    const NdArray y = uniform_points(6, -1, 1, rng);
    const Grid grid = build_grid(-1, 1, ppu, 0.1);
    const double ls = grid.spacing;
    const NdArray f = encode(x, y, grid, ls);
    NdArray signal({1, grid.size()});
    for (std::size_t k = 0; k < grid.size(); ++k) signal.at(0, k) = f.at(1, k);
    const NdArray back = decode(signal, grid, x, ls);
    for (std::size_t i = 0; i < 6; ++i) EXPECT_NEAR(back.at(0, i), y[i], 0.05);
  }
}

TEST(DecodeFromGrid, QueryPermutationPermutesColumns) {
  Rng rng(23);
  const Grid grid = build_grid(-1, 1, 16, 0.1);
  NdArray f({2, grid.size()});
  for (double& v : f.data()) v = std::uniform_real_distribution<double>(-1, 1)(rng);
  const NdArray q = uniform_points(11, -1, 1, rng);
  const auto p = random_permutation(11, rng);
  const NdArray a = decode(f, grid, q, 0.125);
  const NdArray b = decode(f, grid, permuted(q, p), 0.125);
  for (std::size_t c = 0; c < 2; ++c) {
    for (std::size_t i = 0; i < 11; ++i) EXPECT_NEAR(b.at(c, i), a.at(c, p[i]), 1e-12);
  }
}

TEST(DecodeFromGrid, OutsideGridRejected) {
  const Grid grid = build_grid(-1, 1, 8, 0.1);
  EXPECT_THROW(decode(NdArray({1, grid.size()}, 0.0), grid, NdArray::vector({-2.0}), 0.25), ContractError);
}

TEST(SetConv, GradientsInValuesAndLengthScale) {
  const Grid grid = build_grid(-1, 1, 8, 0.1);
  const NdArray x = NdArray::vector({-0.7, 0.1, 0.55});
  const NdArray q = NdArray::vector({-0.9, -0.2, 0.3, 0.8});
  Program p{{{"y", {3}}, {"ls_in", {1}}, {"ls_out", {1}}},
            [&](Graph& g, const std::map<std::string, Var>& v) {
              Var f = encode_to_grid(g, x, v.at("y"), grid, v.at("ls_in")).features;
              return ad::sum(ad::tanh(decode_from_grid(f, grid, q, v.at("ls_out"))));
            }};
  const Bindings point{{"y", NdArray::vector({0.4, -1.2, 0.9})},
                       {"ls_in", NdArray::scalar(std::log(0.25))},
                       {"ls_out", NdArray::scalar(std::log(0.2))}};
  EXPECT_LT(finite_difference_check(p, point, 1e-5).max_relative_error, 1e-6);
}
