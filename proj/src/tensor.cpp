#include "stegosan/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>

#include "stegosan/error.hpp"

namespace stegosan {

std::size_t shape_size(const Shape& shape) {
  std::size_t n = 1;
  for (auto e : shape) n *= e;
  return n;
}

std::string shape_to_string(const Shape& shape) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) os << 'x';
    os << shape[i];
  }
  os << ']';
  return os.str();
}

namespace {

void check_extents(const Shape& shape) {
  if (shape.empty()) throw ShapeError("tensor shape must have at least one axis");
  for (auto e : shape) {
    if (e == 0) throw ShapeError("tensor extent must be positive: " + shape_to_string(shape));
  }
}

}  // namespace

Tensor::Tensor(Shape shape, float fill) : shape_(std::move(shape)) {
  check_extents(shape_);
  data_.assign(shape_size(shape_), fill);
}

Tensor::Tensor(Shape shape, std::vector<float> data) : shape_(std::move(shape)), data_(std::move(data)) {
  check_extents(shape_);
  if (shape_size(shape_) != data_.size()) {
    throw ShapeError("tensor data length " + std::to_string(data_.size()) + " does not match shape " +
                     shape_to_string(shape_));
  }
}

std::size_t Tensor::extent(std::size_t axis) const {
  if (axis >= shape_.size()) throw ShapeError("axis out of range");
  return shape_[axis];
}

Tensor Tensor::reshaped(Shape shape) const {
  if (shape_size(shape) != data_.size()) {
    throw ShapeError("cannot reshape " + shape_to_string(shape_) + " to " + shape_to_string(shape));
  }
  return Tensor(std::move(shape), data_);
}

void Tensor::fill(float value) { std::fill(data_.begin(), data_.end(), value); }

float max_abs_diff(const Tensor& a, const Tensor& b) {
  if (a.shape() != b.shape()) {
    throw ShapeError("max_abs_diff: " + shape_to_string(a.shape()) + " vs " + shape_to_string(b.shape()));
  }
  float m = 0.0f;
  for (std::size_t i = 0; i < a.size(); ++i) m = std::max(m, std::fabs(a[i] - b[i]));
  return m;
}

Tensor channel_slice(const Tensor& image, std::size_t c) {
  if (image.rank() != 3 || c >= image.extent(2)) throw ShapeError("channel_slice: bad image or channel");
  const std::size_t h = image.extent(0), w = image.extent(1);
  Tensor out({h, w, 1});
  for (std::size_t y = 0; y < h; ++y)
    for (std::size_t x = 0; x < w; ++x) out.at(y, x, 0) = image.at(y, x, c);
  return out;
}

}  // namespace stegosan
