#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <initializer_list>
#include <limits>
#include <numeric>
#include <string>
#include <type_traits>
#include <vector>

#include "akhcr/errors.hpp"
#include "akhcr/gemm.hpp"
#include "akhcr/rng.hpp"

namespace akhcr {

struct Shape {
  std::vector<std::int64_t> dims;

  Shape() = default;
  Shape(std::initializer_list<std::int64_t> d) : dims(d) { validate(); }
  explicit Shape(std::vector<std::int64_t> d) : dims(std::move(d)) { validate(); }

  int rank() const { return static_cast<int>(dims.size()); }

  std::int64_t numel() const {
    std::int64_t n = 1;
    for (std::int64_t d : dims) n *= d;
    return n;
  }

  std::int64_t operator[](int i) const { return dims[static_cast<std::size_t>(i)]; }

  bool operator==(const Shape& other) const { return dims == other.dims; }
  bool operator!=(const Shape& other) const { return dims != other.dims; }

  // row-major, last axis fastest
  std::vector<std::int64_t> strides() const {
    std::vector<std::int64_t> s(dims.size());
    std::int64_t acc = 1;
    for (int i = rank() - 1; i >= 0; --i) {
      s[static_cast<std::size_t>(i)] = acc;
      acc *= dims[static_cast<std::size_t>(i)];
    }
    return s;
  }

  std::string str() const {
    std::string out = "(";
    for (std::size_t i = 0; i < dims.size(); ++i) {
      if (i) out += ", ";
      out += std::to_string(dims[i]);
    }
    out += ")";
    return out;
  }

  void validate() const {
    for (std::int64_t d : dims)
      if (d < 1) throw ShapeError("shape " + str() + " has extent < 1");
  }
};

inline std::int64_t index_of(const Shape& s, const std::vector<std::int64_t>& coord) {
  if (static_cast<int>(coord.size()) != s.rank())
    throw ShapeError("coordinate rank mismatch for shape " + s.str());
  const auto strides = s.strides();
  std::int64_t idx = 0;
  for (std::size_t i = 0; i < coord.size(); ++i) {
    if (coord[i] < 0 || coord[i] >= s.dims[i])
      throw ShapeError("coordinate out of range for shape " + s.str());
    idx += coord[i] * strides[i];
  }
  return idx;
}

inline std::vector<std::int64_t> coords_of(const Shape& s, std::int64_t idx) {
  std::vector<std::int64_t> coord(static_cast<std::size_t>(s.rank()));
  for (int i = s.rank() - 1; i >= 0; --i) {
    coord[static_cast<std::size_t>(i)] = idx % s.dims[static_cast<std::size_t>(i)];
    idx /= s.dims[static_cast<std::size_t>(i)];
  }
  return coord;
}

enum class Precision { standard, wide };

// Dense row-major tensor. `Tensor` (float) carries the training path,
// `TensorD` (double) the gradient-check path.
template <class T>
struct TensorT {
  static_assert(std::is_floating_point_v<T>);
  static constexpr Precision precision =
      std::is_same_v<T, double> ? Precision::wide : Precision::standard;

  Shape shape;
  std::vector<T> data;

  TensorT() = default;

  explicit TensorT(Shape s, T fill = T(0))
      : shape(std::move(s)), data(static_cast<std::size_t>(shape.numel()), fill) {}

  TensorT(Shape s, std::vector<T> values) : shape(std::move(s)), data(std::move(values)) {
    if (static_cast<std::int64_t>(data.size()) != shape.numel())
      throw ShapeError("value count " + std::to_string(data.size()) +
                       " does not match shape " + shape.str());
  }

  int rank() const { return shape.rank(); }
  std::int64_t size() const { return static_cast<std::int64_t>(data.size()); }
  std::int64_t dim(int i) const { return shape[i]; }

  T& operator[](std::int64_t i) { return data[static_cast<std::size_t>(i)]; }
  const T& operator[](std::int64_t i) const { return data[static_cast<std::size_t>(i)]; }

  template <class... Ix>
  T& at(Ix... ix) {
    return data[static_cast<std::size_t>(offset_of(ix...))];
  }
  template <class... Ix>
  const T& at(Ix... ix) const {
    return data[static_cast<std::size_t>(offset_of(ix...))];
  }

  template <class U>
  TensorT<U> cast() const {
    TensorT<U> out(shape);
    for (std::int64_t i = 0; i < size(); ++i)
      out.data[static_cast<std::size_t>(i)] = static_cast<U>(data[static_cast<std::size_t>(i)]);
    return out;
  }

 private:
  template <class... Ix>
  std::int64_t offset_of(Ix... ix) const {
    return index_of(shape, {static_cast<std::int64_t>(ix)...});
  }
};

using Tensor = TensorT<float>;
using TensorD = TensorT<double>;

enum class MapOp { add, sub, mul };
enum class ReduceOp { sum, mean, max };

template <class T>
bool all_finite(const TensorT<T>& t) {
  for (const T v : t.data)
    if (!std::isfinite(v)) return false;
  return true;
}

// Elementwise op; a scalar (single-element) operand broadcasts against any shape.
template <class T>
TensorT<T> map2(const TensorT<T>& a, const TensorT<T>& b, MapOp op) {
  auto apply = [op](T x, T y) -> T {
    switch (op) {
      case MapOp::add: return x + y;
      case MapOp::sub: return x - y;
      case MapOp::mul: return x * y;
    }
    return T(0);
  };
  if (a.shape == b.shape) {
    TensorT<T> out(a.shape);
    for (std::int64_t i = 0; i < a.size(); ++i) out[i] = apply(a[i], b[i]);
    return out;
  }
  if (b.size() == 1) {
    TensorT<T> out(a.shape);
    const T s = b[0];
    for (std::int64_t i = 0; i < a.size(); ++i) out[i] = apply(a[i], s);
    return out;
  }
  if (a.size() == 1) {
    TensorT<T> out(b.shape);
    const T s = a[0];
    for (std::int64_t i = 0; i < b.size(); ++i) out[i] = apply(s, b[i]);
    return out;
  }
  throw ShapeError("elementwise op on mismatched shapes " + a.shape.str() + " vs " +
                   b.shape.str());
}

template <class T>
TensorT<T> add(const TensorT<T>& a, const TensorT<T>& b) { return map2(a, b, MapOp::add); }
template <class T>
TensorT<T> sub(const TensorT<T>& a, const TensorT<T>& b) { return map2(a, b, MapOp::sub); }
template <class T>
TensorT<T> mul(const TensorT<T>& a, const TensorT<T>& b) { return map2(a, b, MapOp::mul); }

template <class T>
TensorT<T> scale(const TensorT<T>& a, T s) {
  TensorT<T> out(a.shape);
  for (std::int64_t i = 0; i < a.size(); ++i) out[i] = a[i] * s;
  return out;
}

// Reduces over `axes`; reduced axes are removed (rank-0 result for a full
// reduction). `mean` divides by the reduced element count.
template <class T>
TensorT<T> reduce(const TensorT<T>& a, const std::vector<int>& axes, ReduceOp op) {
  std::vector<bool> reduced(static_cast<std::size_t>(a.rank()), false);
  for (int axis : axes) {
    if (axis < 0 || axis >= a.rank())
      throw ShapeError("reduce axis " + std::to_string(axis) + " invalid for shape " +
                       a.shape.str());
    if (reduced[static_cast<std::size_t>(axis)])
      throw ShapeError("duplicate reduce axis " + std::to_string(axis));
    reduced[static_cast<std::size_t>(axis)] = true;
  }

  std::vector<std::int64_t> out_dims;
  for (int i = 0; i < a.rank(); ++i)
    if (!reduced[static_cast<std::size_t>(i)]) out_dims.push_back(a.shape[i]);
  Shape out_shape(std::move(out_dims));

  const T init = (op == ReduceOp::max) ? std::numeric_limits<T>::lowest() : T(0);
  TensorT<T> out(out_shape, init);

  // per-input-axis contribution to the output linear index
  std::vector<std::int64_t> out_contrib(static_cast<std::size_t>(a.rank()), 0);
  {
    std::int64_t stride = 1;
    for (int i = a.rank() - 1; i >= 0; --i) {
      if (!reduced[static_cast<std::size_t>(i)]) {
        out_contrib[static_cast<std::size_t>(i)] = stride;
        stride *= a.shape[i];
      }
    }
  }

  std::vector<std::int64_t> coord(static_cast<std::size_t>(a.rank()), 0);
  std::int64_t out_idx = 0;
  for (std::int64_t i = 0; i < a.size(); ++i) {
    T& slot = out[out_idx];
    const T v = a[i];
    if (op == ReduceOp::max)
      slot = std::max(slot, v);
    else
      slot += v;
    // odometer increment
    for (int ax = a.rank() - 1; ax >= 0; --ax) {
      auto& c = coord[static_cast<std::size_t>(ax)];
      out_idx += out_contrib[static_cast<std::size_t>(ax)];
      if (++c < a.shape[ax]) break;
      out_idx -= c * out_contrib[static_cast<std::size_t>(ax)];
      c = 0;
    }
  }

  if (op == ReduceOp::mean) {
    const T denom = static_cast<T>(a.size() / std::max<std::int64_t>(1, out.size()));
    for (auto& v : out.data) v /= denom;
  }
  return out;
}

template <class T>
T reduce_all(const TensorT<T>& a, ReduceOp op) {
  std::vector<int> axes(static_cast<std::size_t>(a.rank()));
  std::iota(axes.begin(), axes.end(), 0);
  return reduce(a, axes, op)[0];
}

template <class T>
TensorT<T> matmul(const TensorT<T>& a, const TensorT<T>& b) {
  if (a.rank() != 2 || b.rank() != 2)
    throw ShapeError("matmul needs rank-2 operands, got " + a.shape.str() + " and " +
                     b.shape.str());
  if (a.shape[1] != b.shape[0])
    throw ShapeError("matmul inner dimensions disagree: " + a.shape.str() + " x " +
                     b.shape.str());
  const std::int64_t m = a.shape[0], k = a.shape[1], n = b.shape[1];
  TensorT<T> out(Shape{m, n});
  detail::gemm(detail::Trans::no, detail::Trans::no, m, n, k, a.data.data(), k,
               b.data.data(), n, out.data.data(), n);
  return out;
}

// Pads the spatial axes of an NHWC tensor. `value` is 0 for convolution and
// -inf for max pooling.
template <class T>
TensorT<T> pad_spatial(const TensorT<T>& a, int top, int bottom, int left, int right,
                       T value) {
  if (a.rank() != 4)
    throw ShapeError("pad_spatial needs rank-4 NHWC input, got " + a.shape.str());
  if (top < 0 || bottom < 0 || left < 0 || right < 0)
    throw ShapeError("pad_spatial amounts must be non-negative");
  const std::int64_t n = a.shape[0], h = a.shape[1], w = a.shape[2], c = a.shape[3];
  TensorT<T> out(Shape{n, h + top + bottom, w + left + right, c}, value);
  const std::int64_t ow = w + left + right;
  for (std::int64_t ni = 0; ni < n; ++ni)
    for (std::int64_t y = 0; y < h; ++y) {
      const T* src = a.data.data() + ((ni * h + y) * w) * c;
      T* dst = out.data.data() + ((ni * (h + top + bottom) + y + top) * ow + left) * c;
      std::memcpy(dst, src, static_cast<std::size_t>(w * c) * sizeof(T));
    }
  return out;
}

// He-normal init: N(0, sqrt(2/fan_in)); flat row-major fill order.
template <class T>
TensorT<T> he_init(const Shape& shape, std::int64_t fan_in, Rng& rng) {
  if (fan_in < 1) throw RangeError("he_init: fan_in must be >= 1");
  TensorT<T> out(shape);
  const double stddev = std::sqrt(2.0 / static_cast<double>(fan_in));
  for (auto& v : out.data) v = static_cast<T>(stddev * rng.normal());
  return out;
}

}  // namespace akhcr
