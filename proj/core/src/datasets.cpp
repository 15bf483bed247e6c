#include "npgrid/datasets.hpp"

#include <algorithm>
#include <cctype>

#include "npgrid/errors.hpp"

namespace npgrid {

namespace {

std::string lowercase(std::string_view s) {
  std::string out(s);
  std::transform(out.begin(), out.end(), out.begin(),
                 [](unsigned char c) { return static_cast<char>(std::tolower(c)); });
  return out;
}

RawSeries segment(const RawSeries& s, std::size_t begin, std::size_t end) {
  auto slice = [&](const NdArray& a) {
    return NdArray::vector(std::vector<double>(a.values().begin() + static_cast<std::ptrdiff_t>(begin),
                                               a.values().begin() + static_cast<std::ptrdiff_t>(end)));
  };
  return {slice(s.x), slice(s.y)};
}

}  // namespace

std::string to_string(Split split) {
  switch (split) {
    case Split::Train: return "train";
    case Split::Val: return "val";
    case Split::Test: return "test";
  }
  return "unknown";
}

std::string to_string(DataSourceKind kind) {
  switch (kind) {
    case DataSourceKind::GP: return "gp";
    case DataSourceKind::Dir: return "dir";
    case DataSourceKind::Csv: return "csv";
  }
  return "unknown";
}

DataSourceKind parse_data_source(std::string_view name) {
  const std::string n = lowercase(name);
  if (n == "gp") return DataSourceKind::GP;
  if (n == "dir") return DataSourceKind::Dir;
  if (n == "csv") return DataSourceKind::Csv;
  throw ContractError("unknown data source '" + std::string(name) + "' (expected gp, dir or csv)");
}

void DataConfig::validate() const {
  if (n_points < 2) throw ContractError("data.n_points must be >= 2");
  if (min_context < 1) throw ContractError("data.min_context must be >= 1");
  if (max_context < min_context) throw ContractError("data.max_context must be >= data.min_context");
  if (max_context > n_points) throw ContractError("data.max_context must be <= data.n_points");
  if (source != DataSourceKind::GP && path.empty()) {
    throw ContractError("data.path is required for source '" + to_string(source) + "'");
  }
  if (source != DataSourceKind::Dir && (train_tasks == 0 || val_tasks == 0 || test_tasks == 0)) {
    throw ContractError("data.train_tasks, data.val_tasks and data.test_tasks must be >= 1");
  }
}

nlohmann::json DataConfig::to_json() const {
  return {{"source", to_string(source)},   {"kernel", to_string(kernel)},
          {"path", path},                  {"n_points", n_points},
          {"min_context", min_context},    {"max_context", max_context},
          {"train_tasks", train_tasks},    {"val_tasks", val_tasks},
          {"test_tasks", test_tasks}};
}

DataConfig DataConfig::from_json(const nlohmann::json& j) {
  DataConfig c;
  try {
    c.source = parse_data_source(j.at("source").get<std::string>());
    c.kernel = parse_kernel(j.at("kernel").get<std::string>());
    c.path = j.at("path").get<std::string>();
    c.n_points = j.at("n_points").get<std::size_t>();
    c.min_context = j.at("min_context").get<std::size_t>();
    c.max_context = j.at("max_context").get<std::size_t>();
    c.train_tasks = j.at("train_tasks").get<std::size_t>();
    c.val_tasks = j.at("val_tasks").get<std::size_t>();
    c.test_tasks = j.at("test_tasks").get<std::size_t>();
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(std::string("data config: ") + e.what());
  }
  c.validate();
  return c;
}

TaskSource::TaskSource(DataConfig config, std::uint64_t seed)
    : config_(std::move(config)), seed_(seed) {
  config_.validate();
  if (config_.source == DataSourceKind::Dir) {
    const std::filesystem::path root(config_.path);
    for (Split s : {Split::Train, Split::Val, Split::Test}) {
      auto& pool = pools_[static_cast<std::size_t>(s)];
      pool = load_series_dir(root / to_string(s));
      if (pool.empty()) throw FormatError("dataset split '" + to_string(s) + "' is empty");
    }
  } else if (config_.source == DataSourceKind::Csv) {
    const RawSeries full = load_series_csv(config_.path);
    const std::size_t n = full.size();
    const std::size_t cut1 = n * 8 / 10;
    const std::size_t cut2 = n * 9 / 10;
    const std::array<std::pair<std::size_t, std::size_t>, 3> ranges{
        {{0, cut1}, {cut1, cut2}, {cut2, n}}};
    for (Split s : {Split::Val, Split::Test}) {
      const auto [b, e] = ranges[static_cast<std::size_t>(s)];
      if (e - b < 2) throw FormatError("CSV series too short for a " + to_string(s) + " split");
      Rng rng = make_rng(derive_seed(seed_, 0xc5f), static_cast<std::uint64_t>(s));
      const std::size_t count = s == Split::Val ? config_.val_tasks : config_.test_tasks;
      pools_[static_cast<std::size_t>(s)] = sample_windows(segment(full, b, e), count, config_.n_points, rng);
    }
    if (cut1 < 2) throw FormatError("CSV series too short for a train split");
    pools_[0] = {segment(full, 0, cut1)};
  }
}

std::size_t TaskSource::size(Split split) const {
  if (config_.source == DataSourceKind::Dir) return pools_[static_cast<std::size_t>(split)].size();
  switch (split) {
    case Split::Train: return config_.train_tasks;
    case Split::Val: return config_.val_tasks;
    case Split::Test: return config_.test_tasks;
  }
  return 0;
}

Rng TaskSource::task_rng(Split split, std::size_t index, std::uint64_t epoch) const {
  const std::uint64_t split_seed = derive_seed(seed_, 1 + static_cast<std::uint64_t>(split));
  const std::uint64_t epoch_seed = derive_seed(split_seed, split == Split::Train ? epoch : 0);
  return make_rng(epoch_seed, index);
}

RawSeries TaskSource::series(Split split, std::size_t index, std::uint64_t epoch) const {
  if (index >= size(split)) {
    throw ContractError("task index " + std::to_string(index) + " out of range for split '" +
                        to_string(split) + "' (" + std::to_string(size(split)) + " tasks)");
  }
  Rng rng = task_rng(split, index, epoch);
  switch (config_.source) {
    case DataSourceKind::GP:
      return sample_gp_task(KernelSpec{config_.kernel}, config_.n_points, rng);
    case DataSourceKind::Dir:
      return pools_[static_cast<std::size_t>(split)][index];
    case DataSourceKind::Csv:
      if (split == Split::Train) {
        Rng window_rng = make_rng(derive_seed(seed_, 0xc5f), derive_seed(epoch, index));
        return sample_windows(pools_[0].front(), 1, config_.n_points, window_rng).front();
      }
      return pools_[static_cast<std::size_t>(split)][index];
  }
  throw ContractError("unknown data source");
}

Task TaskSource::task(Split split, std::size_t index, std::uint64_t epoch) const {
  const RawSeries s = series(split, index, epoch);
  // The context draw uses its own stream so it does not depend on how many
  // draws the series synthesis consumed.
  Rng rng = make_rng(derive_seed(seed_, 0xc0de + static_cast<std::uint64_t>(split)),
                     derive_seed(split == Split::Train ? epoch : 0, index));
  const std::size_t hi = std::min(config_.max_context, s.size());
  const std::size_t lo = std::min(config_.min_context, hi);
  std::uniform_int_distribution<std::size_t> m(lo, hi);
  return make_task(s, m(rng), rng);
}

std::vector<Task> TaskSource::tasks(Split split, std::uint64_t epoch) const {
  std::vector<Task> out;
  const std::size_t n = size(split);
  out.reserve(n);
  for (std::size_t i = 0; i < n; ++i) out.push_back(task(split, i, epoch));
  return out;
}

}  // namespace npgrid
