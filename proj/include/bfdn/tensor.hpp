#pragma once

#include <cstddef>
#include <cstdint>
#include <initializer_list>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace bfdn {

using Shape = std::vector<std::size_t>;

std::size_t shape_size(const Shape& shape);
std::string shape_string(const Shape& shape);

/// Error raised for incompatible tensor shapes. The message names the
/// offending dimension.
class ShapeError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

/// Dense row-major array of real scalars. Images and activations use NCHW.
template <class T>
class Tensor {
 public:
  using value_type = T;

  Tensor() = default;
  explicit Tensor(Shape shape, T fill = T{0});
  Tensor(Shape shape, std::vector<T> data);

  const Shape& shape() const { return shape_; }
  std::size_t rank() const { return shape_.size(); }
  std::size_t dim(std::size_t axis) const { return shape_.at(axis); }
  std::size_t size() const { return data_.size(); }
  bool empty() const { return data_.empty(); }

  std::span<T> data() { return data_; }
  std::span<const T> data() const { return data_; }
  T* raw() { return data_.data(); }
  const T* raw() const { return data_.data(); }
  const std::vector<T>& vec() const { return data_; }

  T& operator[](std::size_t i) { return data_[i]; }
  const T& operator[](std::size_t i) const { return data_[i]; }

  // NCHW element access; rank must be 4.
  T& at(std::size_t n, std::size_t c, std::size_t h, std::size_t w) {
    return data_[((n * shape_[1] + c) * shape_[2] + h) * shape_[3] + w];
  }
  const T& at(std::size_t n, std::size_t c, std::size_t h, std::size_t w) const {
    return data_[((n * shape_[1] + c) * shape_[2] + h) * shape_[3] + w];
  }

  Tensor reshaped(Shape shape) const;
  void fill(T value);

  template <class U>
  Tensor<U> cast() const {
    if (shape_.empty() && data_.empty()) return {};
    std::vector<U> out(data_.size());
    for (std::size_t i = 0; i < data_.size(); ++i) out[i] = static_cast<U>(data_[i]);
    return Tensor<U>(shape_, std::move(out));
  }

  bool operator==(const Tensor& other) const = default;

 private:
  Shape shape_;
  std::vector<T> data_;
};

/// Single-channel image tensor of shape [1,1,H,W].
template <class T>
Tensor<T> image_tensor(std::size_t height, std::size_t width, T fill = T{0}) {
  return Tensor<T>({1, 1, height, width}, fill);
}

template <class T> Tensor<T> operator+(const Tensor<T>& a, const Tensor<T>& b);
template <class T> Tensor<T> operator-(const Tensor<T>& a, const Tensor<T>& b);
template <class T> Tensor<T> operator*(T alpha, const Tensor<T>& a);

template <class T> T dot(const Tensor<T>& a, const Tensor<T>& b);
template <class T> T norm2(const Tensor<T>& a);
template <class T> T max_abs(const Tensor<T>& a);
template <class T> bool all_finite(const Tensor<T>& a);

/// ‖a − b‖ / max(‖b‖, floor).
template <class T> double relative_error(const Tensor<T>& a, const Tensor<T>& b, double floor = 1e-300);

/// Extract sample n of an NCHW batch as a [1,C,H,W] tensor.
template <class T> Tensor<T> batch_slice(const Tensor<T>& batch, std::size_t n);
/// Stack [1,C,H,W] tensors along the batch axis.
template <class T> Tensor<T> batch_stack(std::span<const Tensor<T>> items);

void require_same_shape(const Shape& a, const Shape& b, const char* what);

}  // namespace bfdn
