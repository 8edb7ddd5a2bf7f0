#pragma once

#include <cstddef>
#include <string>
#include <vector>

#include "avvp/errors.hpp"

namespace avvp {

using Shape = std::vector<std::size_t>;

std::size_t numel(const Shape& shape);
std::string shape_str(const Shape& shape);

// Dense row-major tensor of doubles with an optional gradient buffer of the
// same shape. Gradients accumulate across backward passes until zeroed.
struct Tensor {
  Shape shape;
  std::vector<double> values;
  std::vector<double> grad;  // empty until first accumulation

  Tensor() = default;
  explicit Tensor(Shape s, double fill = 0.0);
  Tensor(Shape s, std::vector<double> v);

  std::size_t size() const { return values.size(); }
  std::size_t rank() const { return shape.size(); }
  std::size_t dim(std::size_t i) const { return shape[i]; }

  double& operator[](std::size_t i) { return values[i]; }
  double operator[](std::size_t i) const { return values[i]; }

  double& at2(std::size_t i, std::size_t j) { return values[i * shape[1] + j]; }
  double at2(std::size_t i, std::size_t j) const { return values[i * shape[1] + j]; }
  double& at3(std::size_t i, std::size_t j, std::size_t k) {
    return values[(i * shape[1] + j) * shape[2] + k];
  }
  double at3(std::size_t i, std::size_t j, std::size_t k) const {
    return values[(i * shape[1] + j) * shape[2] + k];
  }

  bool has_grad() const { return !grad.empty(); }
  void ensure_grad();
  void zero_grad();

  // Throws NumericError naming `what` if any value is NaN/Inf.
  void check_finite(const std::string& what) const;
};

Tensor scalar_tensor(double v);

// Row-major strides for a shape (innermost stride 1).
std::vector<std::size_t> strides_of(const Shape& shape);

}  // namespace avvp
