#include "avvp/tensor.hpp"

#include <cmath>
#include <sstream>

namespace avvp {

std::size_t numel(const Shape& shape) {
  std::size_t n = 1;
  for (std::size_t d : shape) n *= d;
  return n;
}

std::string shape_str(const Shape& shape) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) os << 'x';
    os << shape[i];
  }
  os << ']';
  return os.str();
}

Tensor::Tensor(Shape s, double fill) : shape(std::move(s)), values(numel(shape), fill) {
  for (std::size_t d : shape) {
    if (d == 0) throw DimensionError("tensor dimensions must be positive, got " + shape_str(shape));
  }
}

Tensor::Tensor(Shape s, std::vector<double> v) : shape(std::move(s)), values(std::move(v)) {
  if (values.size() != numel(shape)) {
    throw DimensionError("tensor value count " + std::to_string(values.size()) +
                         " does not match shape " + shape_str(shape));
  }
}

void Tensor::ensure_grad() {
  if (grad.empty()) grad.assign(values.size(), 0.0);
}

void Tensor::zero_grad() {
  if (!grad.empty()) grad.assign(values.size(), 0.0);
}

void Tensor::check_finite(const std::string& what) const {
  for (double v : values) {
    if (!std::isfinite(v)) {
      throw NumericError(what + " produced a non-finite value");
    }
  }
}

Tensor scalar_tensor(double v) { return Tensor(Shape{}, std::vector<double>{v}); }

std::vector<std::size_t> strides_of(const Shape& shape) {
  std::vector<std::size_t> s(shape.size(), 1);
  for (std::size_t i = shape.size(); i-- > 1;) s[i - 1] = s[i] * shape[i];
  return s;
}

}  // namespace avvp
