#include "npgrid/ndarray.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "npgrid/errors.hpp"

namespace npgrid {

std::size_t shape_size(const Shape& shape) {
  return std::accumulate(shape.begin(), shape.end(), std::size_t{1}, std::multiplies<>());
}

std::string shape_string(const Shape& shape) {
  std::string out = "[";
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i > 0) out += ",";
    out += std::to_string(shape[i]);
  }
  return out + "]";
}

NdArray::NdArray(Shape shape, double fill)
    : shape_(std::move(shape)), data_(shape_size(shape_), fill) {}

NdArray::NdArray(Shape shape, std::vector<double> data)
    : shape_(std::move(shape)), data_(std::move(data)) {
  if (shape_size(shape_) != data_.size()) {
    throw ContractError("NdArray: shape " + shape_string(shape_) + " does not match " +
                        std::to_string(data_.size()) + " values");
  }
}

NdArray NdArray::scalar(double value) { return NdArray({1}, std::vector<double>{value}); }

NdArray NdArray::vector(std::vector<double> values) {
  const std::size_t n = values.size();
  return NdArray({n}, std::move(values));
}

NdArray NdArray::matrix(std::size_t rows, std::size_t cols, std::vector<double> values) {
  return NdArray({rows, cols}, std::move(values));
}

NdArray NdArray::reshaped(Shape shape) const {
  return NdArray(std::move(shape), data_);
}

bool NdArray::all_finite() const noexcept {
  return std::all_of(data_.begin(), data_.end(), [](double v) { return std::isfinite(v); });
}

void NdArray::fill(double value) noexcept { std::fill(data_.begin(), data_.end(), value); }

double max_abs_diff(const NdArray& a, const NdArray& b) {
  if (a.shape() != b.shape()) {
    throw ContractError("max_abs_diff: shapes " + shape_string(a.shape()) + " and " +
                        shape_string(b.shape()) + " differ");
  }
  double worst = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) worst = std::max(worst, std::abs(a[i] - b[i]));
  return worst;
}

}  // namespace npgrid
