#pragma once

#include <cmath>
#include <cstddef>
#include <functional>
#include <numeric>
#include <span>
#include <sstream>
#include <string>
#include <vector>

#include "xray/error.hpp"

namespace xray {

using Shape = std::vector<std::size_t>;

inline std::size_t shape_size(const Shape& shape) {
  return std::accumulate(shape.begin(), shape.end(), std::size_t{1}, std::multiplies<>{});
}

inline std::string shape_string(const Shape& shape) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) os << (i ? "," : "") << shape[i];
  os << ']';
  return os.str();
}

/// Dense row-major array of doubles. Images are [C, H, W], vectors [N].
struct Tensor {
  Shape shape;
  std::vector<double> data;

  Tensor() = default;
  explicit Tensor(Shape s, double fill = 0.0) : shape(std::move(s)), data(shape_size(shape), fill) {}
  Tensor(Shape s, std::vector<double> values) : shape(std::move(s)), data(std::move(values)) {
    if (data.size() != shape_size(shape))
      fail(ErrorCode::ShapeMismatch,
           "tensor data length " + std::to_string(data.size()) + " does not match shape " + shape_string(shape));
  }

  std::size_t size() const noexcept { return data.size(); }
  std::size_t rank() const noexcept { return shape.size(); }

  double& operator[](std::size_t i) { return data[i]; }
  double operator[](std::size_t i) const { return data[i]; }

  // [C, H, W] accessors
  double& at(std::size_t c, std::size_t y, std::size_t x) { return data[(c * shape[1] + y) * shape[2] + x]; }
  double at(std::size_t c, std::size_t y, std::size_t x) const { return data[(c * shape[1] + y) * shape[2] + x]; }

  std::span<double> values() noexcept { return data; }
  std::span<const double> values() const noexcept { return data; }

  bool all_finite() const {
    for (double v : data)
      if (!std::isfinite(v)) return false;
    return true;
  }

  friend bool operator==(const Tensor&, const Tensor&) = default;
};

}  // namespace xray
