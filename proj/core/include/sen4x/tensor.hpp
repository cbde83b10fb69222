#pragma once

#include <cstddef>
#include <numeric>
#include <span>
#include <string>
#include <vector>

namespace sen4x {

using Shape = std::vector<int>;

inline std::size_t shape_numel(const Shape& shape) {
  std::size_t n = 1;
  for (int d : shape) n *= static_cast<std::size_t>(d);
  return n;
}

std::string shape_str(const Shape& shape);

/// Dense row-major array. Image tensors are laid out C×H×W (no batch axis);
/// token matrices are L×C.
template <typename T>
struct Tensor {
  Shape shape;
  std::vector<T> data;

  Tensor() = default;
  explicit Tensor(Shape s, T fill = T{0}) : shape(std::move(s)), data(shape_numel(shape), fill) {}
  Tensor(Shape s, std::vector<T> values) : shape(std::move(s)), data(std::move(values)) {}

  std::size_t numel() const { return data.size(); }
  int dim(std::size_t i) const { return shape[i]; }
  int ndim() const { return static_cast<int>(shape.size()); }
  bool empty() const { return data.empty(); }

  T* ptr() { return data.data(); }
  const T* ptr() const { return data.data(); }
  std::span<T> span() { return data; }
  std::span<const T> span() const { return data; }

  T& operator[](std::size_t i) { return data[i]; }
  const T& operator[](std::size_t i) const { return data[i]; }

  // C×H×W accessors
  T& at(int c, int y, int x) { return data[(static_cast<std::size_t>(c) * shape[1] + y) * shape[2] + x]; }
  const T& at(int c, int y, int x) const {
    return data[(static_cast<std::size_t>(c) * shape[1] + y) * shape[2] + x];
  }

  /// Contiguous slice along the leading axis, e.g. one view of an N×C×H×W stack.
  Tensor<T> slice0(int i) const {
    Shape sub(shape.begin() + 1, shape.end());
    const std::size_t n = shape_numel(sub);
    return Tensor<T>(sub, std::vector<T>(data.begin() + i * n, data.begin() + (i + 1) * n));
  }

  template <typename U>
  Tensor<U> cast() const {
    return Tensor<U>(shape, std::vector<U>(data.begin(), data.end()));
  }
};

}  // namespace sen4x
