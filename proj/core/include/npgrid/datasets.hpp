#pragma once

// Train/validation/test task streams over synthetic GP draws, saved dataset
// directories, or a single CSV series.

#include <array>
#include <cstdint>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "npgrid/gp_tasks.hpp"

namespace npgrid {

enum class Split { Train = 0, Val = 1, Test = 2 };

std::string to_string(Split split);

enum class DataSourceKind { GP, Dir, Csv };

std::string to_string(DataSourceKind kind);
DataSourceKind parse_data_source(std::string_view name);

struct DataConfig {
  DataSourceKind source = DataSourceKind::GP;
  KernelKind kernel = KernelKind::RBF;
  std::string path;  // dataset directory (Dir) or CSV file (Csv)
  std::size_t n_points = 100;
  std::size_t min_context = 1;
  std::size_t max_context = 50;
  std::size_t train_tasks = 2000;
  std::size_t val_tasks = 200;
  std::size_t test_tasks = 200;

  void validate() const;
  nlohmann::json to_json() const;
  static DataConfig from_json(const nlohmann::json& j);
};

/// Deterministic task stream. Every task is a pure function of
/// (seed, split, epoch, index), so tasks can be produced in any order or
/// on any thread.
///
/// GP source: training series are redrawn every epoch; validation and test
/// series are fixed. Dir and Csv sources hold fixed series pools and redraw
/// only the context of training tasks each epoch. A CSV series is split
/// chronologically 80/10/10 and cut into windows of n_points.
class TaskSource {
 public:
  TaskSource(DataConfig config, std::uint64_t seed);

  const DataConfig& config() const noexcept { return config_; }
  std::size_t size(Split split) const;
  RawSeries series(Split split, std::size_t index, std::uint64_t epoch = 0) const;
  Task task(Split split, std::size_t index, std::uint64_t epoch = 0) const;
  std::vector<Task> tasks(Split split, std::uint64_t epoch = 0) const;

 private:
  Rng task_rng(Split split, std::size_t index, std::uint64_t epoch) const;

  DataConfig config_;
  std::uint64_t seed_;
  std::array<std::vector<RawSeries>, 3> pools_;
};

}  // namespace npgrid
