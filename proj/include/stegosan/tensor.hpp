#pragma once

#include <cstddef>
#include <span>
#include <string>
#include <vector>

namespace stegosan {

using Shape = std::vector<std::size_t>;

std::size_t shape_size(const Shape& shape);
std::string shape_to_string(const Shape& shape);

/// Dense row-major float tensor. The last axis is the innermost one, so an
/// image is stored as height x width x channels.
class Tensor {
 public:
  Tensor() = default;
  explicit Tensor(Shape shape, float fill = 0.0f);
  Tensor(Shape shape, std::vector<float> data);

  const Shape& shape() const noexcept { return shape_; }
  std::size_t rank() const noexcept { return shape_.size(); }
  std::size_t extent(std::size_t axis) const;
  std::size_t size() const noexcept { return data_.size(); }
  bool empty() const noexcept { return shape_.empty(); }

  std::span<float> data() noexcept { return data_; }
  std::span<const float> data() const noexcept { return data_; }
  float* raw() noexcept { return data_.data(); }
  const float* raw() const noexcept { return data_.data(); }
  std::vector<float>& values() noexcept { return data_; }
  const std::vector<float>& values() const noexcept { return data_; }

  float& operator[](std::size_t i) noexcept { return data_[i]; }
  float operator[](std::size_t i) const noexcept { return data_[i]; }

  // Rank-3 (h, w, c) accessors; no bounds checking.
  float& at(std::size_t y, std::size_t x, std::size_t c) noexcept {
    return data_[(y * shape_[1] + x) * shape_[2] + c];
  }
  float at(std::size_t y, std::size_t x, std::size_t c) const noexcept {
    return data_[(y * shape_[1] + x) * shape_[2] + c];
  }

  Tensor reshaped(Shape shape) const;
  void fill(float value);

  bool operator==(const Tensor& other) const = default;

 private:
  Shape shape_;
  std::vector<float> data_;
};

/// Largest absolute elementwise difference; shapes must match.
float max_abs_diff(const Tensor& a, const Tensor& b);

/// Extract channel `c` of an h x w x ch tensor as h x w x 1.
Tensor channel_slice(const Tensor& image, std::size_t c);

}  // namespace stegosan
