#include "bfdn/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <sstream>

namespace bfdn {

std::size_t shape_size(const Shape& shape) {
  return std::accumulate(shape.begin(), shape.end(), std::size_t{1}, std::multiplies<>());
}

std::string shape_string(const Shape& shape) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) os << (i ? "," : "") << shape[i];
  os << ']';
  return os.str();
}

void require_same_shape(const Shape& a, const Shape& b, const char* what) {
  if (a.size() != b.size())
    throw ShapeError(std::string(what) + ": rank mismatch " + shape_string(a) + " vs " + shape_string(b));
  for (std::size_t i = 0; i < a.size(); ++i) {
    if (a[i] != b[i])
      throw ShapeError(std::string(what) + ": dimension " + std::to_string(i) + " differs (" +
                       std::to_string(a[i]) + " vs " + std::to_string(b[i]) + ")");
  }
}

template <class T>
Tensor<T>::Tensor(Shape shape, T fill) : shape_(std::move(shape)), data_(shape_size(shape_), fill) {}

template <class T>
Tensor<T>::Tensor(Shape shape, std::vector<T> data) : shape_(std::move(shape)), data_(std::move(data)) {
  if (shape_size(shape_) != data_.size())
    throw ShapeError("tensor data length " + std::to_string(data_.size()) + " does not match shape " +
                     shape_string(shape_));
}

template <class T>
Tensor<T> Tensor<T>::reshaped(Shape shape) const {
  if (shape_size(shape) != data_.size())
    throw ShapeError("cannot reshape " + shape_string(shape_) + " to " + shape_string(shape));
  return Tensor(std::move(shape), data_);
}

template <class T>
void Tensor<T>::fill(T value) {
  std::fill(data_.begin(), data_.end(), value);
}

template <class T>
Tensor<T> operator+(const Tensor<T>& a, const Tensor<T>& b) {
  require_same_shape(a.shape(), b.shape(), "add");
  Tensor<T> out = a;
  for (std::size_t i = 0; i < out.size(); ++i) out[i] += b[i];
  return out;
}

template <class T>
Tensor<T> operator-(const Tensor<T>& a, const Tensor<T>& b) {
  require_same_shape(a.shape(), b.shape(), "subtract");
  Tensor<T> out = a;
  for (std::size_t i = 0; i < out.size(); ++i) out[i] -= b[i];
  return out;
}

template <class T>
Tensor<T> operator*(T alpha, const Tensor<T>& a) {
  Tensor<T> out = a;
  for (auto& v : out.data()) v *= alpha;
  return out;
}

template <class T>
T dot(const Tensor<T>& a, const Tensor<T>& b) {
  require_same_shape(a.shape(), b.shape(), "dot");
  double s = 0;
  for (std::size_t i = 0; i < a.size(); ++i) s += double(a[i]) * double(b[i]);
  return static_cast<T>(s);
}

template <class T>
T norm2(const Tensor<T>& a) {
  double s = 0;
  for (auto v : a.data()) s += double(v) * double(v);
  return static_cast<T>(std::sqrt(s));
}

template <class T>
T max_abs(const Tensor<T>& a) {
  T m = 0;
  for (auto v : a.data()) m = std::max(m, std::abs(v));
  return m;
}

template <class T>
bool all_finite(const Tensor<T>& a) {
  return std::all_of(a.data().begin(), a.data().end(), [](T v) { return std::isfinite(v); });
}

template <class T>
double relative_error(const Tensor<T>& a, const Tensor<T>& b, double floor) {
  require_same_shape(a.shape(), b.shape(), "relative_error");
  double num = 0, den = 0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    const double d = double(a[i]) - double(b[i]);
    num += d * d;
    den += double(b[i]) * double(b[i]);
  }
  return std::sqrt(num) / std::max(std::sqrt(den), floor);
}

template <class T>
Tensor<T> batch_slice(const Tensor<T>& batch, std::size_t n) {
  if (batch.rank() != 4) throw ShapeError("batch_slice expects a rank-4 tensor");
  if (n >= batch.dim(0)) throw ShapeError("batch_slice: index out of range");
  const std::size_t per = batch.size() / batch.dim(0);
  std::vector<T> data(batch.data().begin() + n * per, batch.data().begin() + (n + 1) * per);
  return Tensor<T>({1, batch.dim(1), batch.dim(2), batch.dim(3)}, std::move(data));
}

template <class T>
Tensor<T> batch_stack(std::span<const Tensor<T>> items) {
  if (items.empty()) throw ShapeError("batch_stack: no items");
  const Shape& s0 = items[0].shape();
  if (s0.size() != 4 || s0[0] != 1) throw ShapeError("batch_stack expects [1,C,H,W] items");
  std::vector<T> data;
  data.reserve(items.size() * items[0].size());
  for (const auto& t : items) {
    require_same_shape(t.shape(), s0, "batch_stack");
    data.insert(data.end(), t.data().begin(), t.data().end());
  }
  return Tensor<T>({items.size(), s0[1], s0[2], s0[3]}, std::move(data));
}

#define BFDN_INSTANTIATE(T)                                                          \
  template class Tensor<T>;                                                          \
  template Tensor<T> operator+(const Tensor<T>&, const Tensor<T>&);                  \
  template Tensor<T> operator-(const Tensor<T>&, const Tensor<T>&);                  \
  template Tensor<T> operator*(T, const Tensor<T>&);                                 \
  template T dot(const Tensor<T>&, const Tensor<T>&);                                \
  template T norm2(const Tensor<T>&);                                                \
  template T max_abs(const Tensor<T>&);                                              \
  template bool all_finite(const Tensor<T>&);                                        \
  template double relative_error(const Tensor<T>&, const Tensor<T>&, double);        \
  template Tensor<T> batch_slice(const Tensor<T>&, std::size_t);                     \
  template Tensor<T> batch_stack(std::span<const Tensor<T>>);

BFDN_INSTANTIATE(float)
BFDN_INSTANTIATE(double)
#undef BFDN_INSTANTIATE

template class Tensor<std::uint8_t>;

}  // namespace bfdn
