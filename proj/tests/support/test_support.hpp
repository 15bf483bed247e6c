#pragma once

#include <algorithm>
#include <numeric>
#include <vector>

#include "npgrid/gp_tasks.hpp"
#include "npgrid/models.hpp"
#include "npgrid/random.hpp"

namespace npgrid::testing {

/// A random normalized GP task with m context points out of n.
inline Task random_task(std::uint64_t seed, std::size_t n = 30, std::size_t m = 8,
                        KernelKind kernel = KernelKind::RBF) {
  Rng rng = make_rng(seed, 77);
  const RawSeries s = sample_gp_task(KernelSpec{kernel}, n, rng);
  return make_task(s, m, rng);
}

/// Small architecture for fast structural tests.
inline ModelConfig small_config(ModelKind kind) {
  ModelConfig c;
  c.kind = kind;
  c.mlp_hidden = {16, 16};
  c.conv = {2, 8, 5};
  c.r_dim = 12;
  c.d_z = 6;
  c.points_per_unit = 16;
  return c;
}

/// The depth-1, 8-channel network used for gradient checks.
inline ModelConfig tiny_config(ModelKind kind) {
  ModelConfig c;
  c.kind = kind;
  c.mlp_hidden = {8};
  c.conv = {1, 8, 3};
  c.r_dim = 4;
  c.d_z = 4;
  c.points_per_unit = 8;
  return c;
}

inline std::vector<std::size_t> random_permutation(std::size_t n, Rng& rng) {
  std::vector<std::size_t> p(n);
  std::iota(p.begin(), p.end(), std::size_t{0});
  std::shuffle(p.begin(), p.end(), rng);
  return p;
}

inline NdArray permuted(const NdArray& a, const std::vector<std::size_t>& p) {
  NdArray out(a.shape());
  for (std::size_t i = 0; i < p.size(); ++i) out[i] = a[p[i]];
  return out;
}

/// The same task with context and targets reordered by the given permutations.
inline Task permute_task(const Task& t, const std::vector<std::size_t>& pc,
                         const std::vector<std::size_t>& pt) {
  Task out = t;
  out.x_context = permuted(t.x_context, pc);
  out.y_context = permuted(t.y_context, pc);
  out.x_target = permuted(t.x_target, pt);
  out.y_target = permuted(t.y_target, pt);
  return out;
}

/// Context equal to the full target set.
inline Task context_equals_target(const Task& t) {
  std::vector<std::size_t> all(t.target_size());
  std::iota(all.begin(), all.end(), std::size_t{0});
  return with_context(t, all);
}

}  // namespace npgrid::testing
