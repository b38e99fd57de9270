#include "storyanchor/tensor.hpp"

#include <cmath>
#include <functional>
#include <numeric>
#include <sstream>

#include "storyanchor/error.hpp"

namespace storyanchor::numerics {

std::string shape_string(const Shape& shape) {
  std::ostringstream out;
  out << '[';
  for (size_t i = 0; i < shape.size(); ++i) {
    if (i > 0) {
      out << 'x';
    }
    out << shape[i];
  }
  out << ']';
  return out.str();
}

size_t shape_size(const Shape& shape) {
  return std::accumulate(shape.begin(), shape.end(), size_t{1}, std::multiplies<>());
}

Tensor::Tensor(Shape shape, double fill)
    : shape_(std::move(shape)), values_(shape_size(shape_), fill) {}

Tensor::Tensor(Shape shape, std::vector<double> values)
    : shape_(std::move(shape)), values_(std::move(values)) {
  if (values_.size() != shape_size(shape_)) {
    fail(ErrorCategory::kShape, "tensor of shape " + shape_string(shape_) + " given " +
                                    std::to_string(values_.size()) + " values");
  }
}

Tensor Tensor::vector(std::vector<double> values) {
  const size_t n = values.size();
  return Tensor({n}, std::move(values));
}

bool Tensor::all_finite() const noexcept {
  for (const double v : values_) {
    if (!std::isfinite(v)) {
      return false;
    }
  }
  return true;
}

}  // namespace storyanchor::numerics
