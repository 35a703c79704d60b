#pragma once

#include <cstdint>
#include <initializer_list>
#include <span>
#include <string>
#include <vector>

#include "las/error.hpp"

namespace las {

using Shape = std::vector<int64_t>;

std::string shape_str(const Shape& shape);
int64_t shape_numel(const Shape& shape);

// Dense row-major float32 array. Value semantics: copies are deep.
class Tensor {
 public:
  Tensor() = default;
  explicit Tensor(Shape shape, float fill = 0.0f);
  Tensor(Shape shape, std::vector<float> data);

  static Tensor zeros(const Shape& shape) { return Tensor(shape, 0.0f); }
  static Tensor ones(const Shape& shape) { return Tensor(shape, 1.0f); }
  static Tensor full(const Shape& shape, float v) { return Tensor(shape, v); }
  static Tensor scalar(float v) { return Tensor(Shape{1}, v); }

  const Shape& shape() const { return shape_; }
  int rank() const { return static_cast<int>(shape_.size()); }
  int64_t dim(int axis) const;
  int64_t numel() const { return static_cast<int64_t>(data_.size()); }
  bool empty() const { return data_.empty(); }

  std::span<float> data() { return data_; }
  std::span<const float> data() const { return data_; }
  float* ptr() { return data_.data(); }
  const float* ptr() const { return data_.data(); }
  const std::vector<float>& vec() const { return data_; }

  float& operator[](int64_t i) { return data_[static_cast<size_t>(i)]; }
  float operator[](int64_t i) const { return data_[static_cast<size_t>(i)]; }

  float& at(std::initializer_list<int64_t> idx);
  float at(std::initializer_list<int64_t> idx) const;

  Tensor reshaped(Shape shape) const;
  void fill(float v);

  bool same_shape(const Tensor& o) const { return shape_ == o.shape_; }
  // Bitwise equality of shape and payload.
  bool identical(const Tensor& o) const;
  bool all_finite() const;

 private:
  int64_t offset(std::initializer_list<int64_t> idx) const;

  Shape shape_;
  std::vector<float> data_;
};

void require_shape(const Tensor& t, const Shape& expected, const char* what);
void require_rank(const Tensor& t, int rank, const char* what);
void require_finite(const Tensor& t, const char* op);

}  // namespace las
