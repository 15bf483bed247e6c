#include "npgrid/gp_tasks.hpp"

#include <algorithm>
#include <cctype>
#include <charconv>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <map>
#include <numbers>
#include <sstream>

#include <Eigen/Cholesky>
#include <Eigen/Dense>

#include "npgrid/container.hpp"
#include "npgrid/errors.hpp"

namespace npgrid {

std::string to_string(KernelKind kind) {
  switch (kind) {
    case KernelKind::RBF: return "rbf";
    case KernelKind::Periodic: return "periodic";
    case KernelKind::Matern32: return "matern32";
  }
  return "unknown";
}

KernelKind parse_kernel(std::string_view name) {
  std::string lower(name);
  std::transform(lower.begin(), lower.end(), lower.begin(),
                 [](unsigned char c) { return static_cast<char>(std::tolower(c)); });
  if (lower == "rbf") return KernelKind::RBF;
  if (lower == "periodic") return KernelKind::Periodic;
  if (lower == "matern32" || lower == "matern" || lower == "matern-3/2") return KernelKind::Matern32;
  throw ContractError("unknown kernel '" + std::string(name) +
                      "' (expected rbf, periodic or matern32)");
}

double kernel_eval(KernelSpec spec, double x, double x2) {
  const double d = std::abs(x - x2);
  switch (spec.kind) {
    case KernelKind::RBF: {
      const double u = d / 0.2;
      return std::exp(-0.5 * u * u);
    }
    case KernelKind::Periodic: {
      const double u = std::sin(2.0 * std::numbers::pi * d) / 0.5;
      return std::exp(-2.0 * u * u);
    }
    case KernelKind::Matern32: {
      const double u = 5.0 * std::numbers::sqrt3 * d;
      return (1.0 + u) * std::exp(-u);
    }
  }
  return 0.0;
}

void RawSeries::validate() const {
  if (x.rank() != 1 || y.rank() != 1 || x.size() != y.size()) {
    throw ContractError("RawSeries: x and y must be vectors of equal length");
  }
  if (x.size() < 2) throw ContractError("RawSeries: need at least 2 points");
  for (std::size_t i = 1; i < x.size(); ++i) {
    if (!(x[i] > x[i - 1])) throw ContractError("RawSeries: x must be strictly increasing");
  }
}

NdArray sample_gp_values(KernelSpec spec, const NdArray& x, Rng& rng) {
  const auto n = static_cast<Eigen::Index>(x.size());
  if (n < 1) throw ContractError("sample_gp_values: need at least one location");
  Eigen::MatrixXd k(n, n);
  for (Eigen::Index i = 0; i < n; ++i) {
    for (Eigen::Index j = 0; j <= i; ++j) {
      const double v = kernel_eval(spec, x[static_cast<std::size_t>(i)], x[static_cast<std::size_t>(j)]);
      k(i, j) = v;
      k(j, i) = v;
    }
  }
  // Draw the noise first so the sample does not depend on how many
  // factorization attempts were needed.
  const NdArray eps = standard_normal(rng, {x.size()});
  for (double jitter = kBaseJitter; jitter <= kMaxJitter * (1.0 + 1e-9); jitter *= 10.0) {
    Eigen::MatrixXd kj = k;
    kj.diagonal().array() += jitter;
    Eigen::LLT<Eigen::MatrixXd> llt(kj);
    if (llt.info() != Eigen::Success) continue;
    const Eigen::Map<const Eigen::VectorXd> e(eps.data().data(), n);
    const Eigen::VectorXd y = llt.matrixL() * e;
    NdArray out({x.size()});
    for (Eigen::Index i = 0; i < n; ++i) out[static_cast<std::size_t>(i)] = y(i);
    return out;
  }
  throw NumericError("sample_gp_values: degenerate kernel matrix (Cholesky failed with jitter up to " +
                     std::to_string(kMaxJitter) + ")");
}

RawSeries sample_gp_task(KernelSpec spec, std::size_t n_points, Rng& rng) {
  if (n_points < 2) throw ContractError("sample_gp_task: n_points must be >= 2");
  std::uniform_real_distribution<double> uniform(kSyntheticXMin, kSyntheticXMax);
  std::vector<double> xs(n_points);
  for (double& v : xs) v = uniform(rng);
  std::sort(xs.begin(), xs.end());
  RawSeries series;
  series.x = NdArray::vector(std::move(xs));
  series.y = sample_gp_values(spec, series.x, rng);
  return series;
}

namespace {

Normalization normalization_for(const RawSeries& series) {
  const std::size_t n = series.size();
  Normalization norm;
  const double lo = series.x[0];
  const double hi = series.x[n - 1];
  norm.x_scale = 2.0 / (hi - lo);
  norm.x_shift = -1.0 - lo * norm.x_scale;
  double mean = 0.0;
  for (double v : series.y.data()) mean += v;
  mean /= static_cast<double>(n);
  double var = 0.0;
  for (double v : series.y.data()) var += (v - mean) * (v - mean);
  var /= static_cast<double>(n);
  norm.y_mean = mean;
  norm.y_std = std::sqrt(var);
  if (!(norm.y_std > 0.0)) {
    norm.y_std = 1.0;
    norm.constant_y = true;
  }
  return norm;
}

}  // namespace

Task make_task_with_context(const RawSeries& series, std::vector<std::size_t> context_indices) {
  series.validate();
  const std::size_t n = series.size();
  for (std::size_t idx : context_indices) {
    if (idx >= n) throw ContractError("make_task: context index out of range");
  }
  Task task;
  task.normalization = normalization_for(series);
  const Normalization& norm = task.normalization;
  const double lo = series.x[0];
  const double span = series.x[n - 1] - lo;
  task.x_target = NdArray({n});
  task.y_target = NdArray({n});
  for (std::size_t i = 0; i < n; ++i) {
    task.x_target[i] = 2.0 * (series.x[i] - lo) / span - 1.0;
    task.y_target[i] = (series.y[i] - norm.y_mean) / norm.y_std;
  }
  task.context_indices = std::move(context_indices);
  const std::size_t m = task.context_indices.size();
  task.x_context = NdArray({m});
  task.y_context = NdArray({m});
  for (std::size_t i = 0; i < m; ++i) {
    task.x_context[i] = task.x_target[task.context_indices[i]];
    task.y_context[i] = task.y_target[task.context_indices[i]];
  }
  return task;
}

Task make_task(const RawSeries& series, std::size_t m_context, Rng& rng) {
  if (m_context < 1 || m_context > series.size()) {
    throw ContractError("make_task: m_context must lie in [1, " + std::to_string(series.size()) +
                        "], got " + std::to_string(m_context));
  }
  return make_task_with_context(series,
                                sample_without_replacement(rng, series.size(), m_context));
}

Task with_context(const Task& task, const std::vector<std::size_t>& target_indices) {
  Task out = task;
  const std::size_t m = target_indices.size();
  out.context_indices = target_indices;
  out.x_context = NdArray({m});
  out.y_context = NdArray({m});
  for (std::size_t i = 0; i < m; ++i) {
    const std::size_t idx = target_indices[i];
    if (idx >= task.target_size()) throw ContractError("with_context: index out of range");
    out.x_context[i] = task.x_target[idx];
    out.y_context[i] = task.y_target[idx];
  }
  return out;
}

namespace {

double parse_number(std::string_view text, std::size_t line, const std::filesystem::path& path) {
  while (!text.empty() && std::isspace(static_cast<unsigned char>(text.front()))) text.remove_prefix(1);
  while (!text.empty() && std::isspace(static_cast<unsigned char>(text.back()))) text.remove_suffix(1);
  if (!text.empty() && text.front() == '+') text.remove_prefix(1);
  double value = 0.0;
  const auto [ptr, ec] = std::from_chars(text.data(), text.data() + text.size(), value);
  if (text.empty() || ec != std::errc() || ptr != text.data() + text.size() || !std::isfinite(value)) {
    throw FormatError(path.string() + ":" + std::to_string(line) + ": malformed number '" +
                      std::string(text) + "'");
  }
  return value;
}

}  // namespace

RawSeries load_series_csv(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw FormatError("cannot open " + path.string());
  std::string line;
  std::size_t line_no = 0;
  std::map<double, std::pair<double, std::size_t>> points;  // x -> (sum y, count)
  bool header_seen = false;
  while (std::getline(in, line)) {
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    if (!header_seen) {
      header_seen = true;
      std::string compact;
      for (char c : line) {
        if (!std::isspace(static_cast<unsigned char>(c))) compact += c;
      }
      if (compact.rfind("\xEF\xBB\xBF", 0) == 0) compact.erase(0, 3);
      if (compact != "x,y") {
        throw FormatError(path.string() + ":" + std::to_string(line_no) +
                          ": expected header 'x,y'");
      }
      continue;
    }
    const auto comma = line.find(',');
    if (comma == std::string::npos || line.find(',', comma + 1) != std::string::npos) {
      throw FormatError(path.string() + ":" + std::to_string(line_no) +
                        ": expected two comma-separated columns");
    }
    const std::string_view view(line);
    const double x = parse_number(view.substr(0, comma), line_no, path);
    const double y = parse_number(view.substr(comma + 1), line_no, path);
    auto& slot = points[x];
    slot.first += y;
    slot.second += 1;
  }
  if (points.size() < 2) {
    throw FormatError(path.string() + ": insufficient data (need at least 2 distinct x values)");
  }
  std::vector<double> xs, ys;
  for (const auto& [x, acc] : points) {
    xs.push_back(x);
    ys.push_back(acc.first / static_cast<double>(acc.second));
  }
  return RawSeries{NdArray::vector(std::move(xs)), NdArray::vector(std::move(ys))};
}

std::vector<RawSeries> sample_windows(const RawSeries& series, std::size_t count,
                                      std::size_t length, Rng& rng) {
  series.validate();
  const std::size_t len = std::min(length, series.size());
  if (len < 2) throw ContractError("sample_windows: window length must be >= 2");
  std::uniform_int_distribution<std::size_t> start(0, series.size() - len);
  std::vector<RawSeries> out;
  out.reserve(count);
  for (std::size_t i = 0; i < count; ++i) {
    const std::size_t s = start(rng);
    std::vector<double> xs(series.x.values().begin() + static_cast<std::ptrdiff_t>(s),
                           series.x.values().begin() + static_cast<std::ptrdiff_t>(s + len));
    std::vector<double> ys(series.y.values().begin() + static_cast<std::ptrdiff_t>(s),
                           series.y.values().begin() + static_cast<std::ptrdiff_t>(s + len));
    out.push_back({NdArray::vector(std::move(xs)), NdArray::vector(std::move(ys))});
  }
  return out;
}

std::vector<RawSeries> synthesize_series(KernelSpec spec, std::size_t count,
                                         std::size_t n_points, std::uint64_t seed,
                                         std::uint64_t stream) {
  std::vector<RawSeries> out;
  out.reserve(count);
  const std::uint64_t base = derive_seed(seed, stream);
  for (std::size_t i = 0; i < count; ++i) {
    Rng rng = make_rng(base, i);
    out.push_back(sample_gp_task(spec, n_points, rng));
  }
  return out;
}

void save_series_dir(const std::filesystem::path& dir, const std::vector<RawSeries>& series,
                     const std::string& source) {
  std::filesystem::create_directories(dir);
  for (std::size_t i = 0; i < series.size(); ++i) {
    Container c;
    c.metadata = {{"format_version", 1}, {"record", "series"}, {"source", source}, {"index", i}};
    c.arrays = {{"x", series[i].x}, {"y", series[i].y}};
    std::ostringstream name;
    name << "task_" << std::setw(6) << std::setfill('0') << i << ".gbcn";
    write_container(dir / name.str(), c);
  }
}

std::vector<RawSeries> load_series_dir(const std::filesystem::path& dir) {
  if (!std::filesystem::is_directory(dir)) throw FormatError("not a dataset directory: " + dir.string());
  std::vector<std::filesystem::path> files;
  for (const auto& entry : std::filesystem::directory_iterator(dir)) {
    if (entry.is_regular_file() && entry.path().extension() == ".gbcn") files.push_back(entry.path());
  }
  std::sort(files.begin(), files.end());
  std::vector<RawSeries> out;
  out.reserve(files.size());
  for (const auto& file : files) {
    const Container c = read_container(file);
    if (c.metadata.value("record", "") != "series") {
      throw FormatError(file.string() + ": not a series record");
    }
    RawSeries s{c.array("x"), c.array("y")};
    s.validate();
    out.push_back(std::move(s));
  }
  return out;
}

}  // namespace npgrid
