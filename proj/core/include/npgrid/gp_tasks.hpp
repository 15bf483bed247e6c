#pragma once

#include <cstddef>
#include <filesystem>
#include <string>
#include <string_view>
#include <vector>

#include "npgrid/ndarray.hpp"
#include "npgrid/random.hpp"

namespace npgrid {

enum class KernelKind { RBF, Periodic, Matern32 };

/// The three synthetic kernels have fixed hyperparameters:
///   RBF       exp(-0.5 ((x - x') / 0.2)^2)
///   Periodic  exp(-2 (sin(2 pi |x - x'|) / 0.5)^2)
///   Matern32  (1 + 5 sqrt(3) |x - x'|) exp(-5 sqrt(3) |x - x'|)
struct KernelSpec {
  KernelKind kind = KernelKind::RBF;
};

std::string to_string(KernelKind kind);
/// Accepts "rbf", "periodic", "matern32" (case-insensitive; "matern" too).
KernelKind parse_kernel(std::string_view name);

double kernel_eval(KernelSpec spec, double x, double x2);

/// One observed function: x strictly increasing, n >= 2.
struct RawSeries {
  NdArray x;
  NdArray y;

  std::size_t size() const noexcept { return x.size(); }
  void validate() const;
};

inline constexpr double kSyntheticXMin = -2.0;
inline constexpr double kSyntheticXMax = 2.0;
inline constexpr double kBaseJitter = 1e-6;
inline constexpr double kMaxJitter = 1e-3;

/// y ~ GP(0, K) at the given locations. The diagonal receives jitter 1e-6,
/// escalated by x10 up to 1e-3 if the Cholesky factorization fails.
NdArray sample_gp_values(KernelSpec spec, const NdArray& x, Rng& rng);

/// x ~ U(-2, 2) sorted, then y ~ GP(0, K).
RawSeries sample_gp_task(KernelSpec spec, std::size_t n_points, Rng& rng);

/// Affine map of x onto [-1, 1] and standardization of y, both from the
/// target set (all points). x_norm = x * x_scale + x_shift,
/// y_norm = (y - y_mean) / y_std.
struct Normalization {
  double x_scale = 1.0;
  double x_shift = 0.0;
  double y_mean = 0.0;
  double y_std = 1.0;
  bool constant_y = false;

  double x_to_raw(double xn) const { return (xn - x_shift) / x_scale; }
  double y_to_raw(double yn) const { return yn * y_std + y_mean; }
};

/// One meta-learning sample. Targets are all points of the series in
/// series order; the context is a subset given by `context_indices`.
struct Task {
  NdArray x_context;
  NdArray y_context;
  NdArray x_target;
  NdArray y_target;
  std::vector<std::size_t> context_indices;
  Normalization normalization;

  std::size_t context_size() const noexcept { return x_context.size(); }
  std::size_t target_size() const noexcept { return x_target.size(); }
};

/// Normalizes the series and draws `m_context` context indices without
/// replacement. Requires 1 <= m_context <= n.
Task make_task(const RawSeries& series, std::size_t m_context, Rng& rng);

/// Same as make_task with explicit context indices (may be empty).
Task make_task_with_context(const RawSeries& series, std::vector<std::size_t> context_indices);

/// Replaces the context of an existing task by the given target indices.
Task with_context(const Task& task, const std::vector<std::size_t>& target_indices);

/// CSV with header "x,y" and two numeric columns. Rows are sorted by x and
/// duplicate x values collapse to the mean of their y values.
RawSeries load_series_csv(const std::filesystem::path& path);

/// `count` contiguous windows of `length` points from a long series.
std::vector<RawSeries> sample_windows(const RawSeries& series, std::size_t count,
                                      std::size_t length, Rng& rng);

/// Draws `count` series with seeds derived from (seed, stream, index).
std::vector<RawSeries> synthesize_series(KernelSpec spec, std::size_t count,
                                         std::size_t n_points, std::uint64_t seed,
                                         std::uint64_t stream);

/// Dataset persistence: one container file per series under `dir`.
void save_series_dir(const std::filesystem::path& dir, const std::vector<RawSeries>& series,
                     const std::string& source);
std::vector<RawSeries> load_series_dir(const std::filesystem::path& dir);

}  // namespace npgrid
