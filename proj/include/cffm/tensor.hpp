#pragma once

#include <cstddef>
#include <cstdint>
#include <initializer_list>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "cffm/errors.hpp"

namespace cffm {

using Shape = std::vector<std::size_t>;

std::string shape_str(const Shape& shape);
std::size_t shape_numel(const Shape& shape);

/// Dense row-major array. Every extent is >= 1; a default tensor is the
/// scalar 0 with shape {1}.
template <typename T>
class Tensor {
 public:
  using value_type = T;

  Tensor() : shape_{1}, data_(1, T(0)) {}
  explicit Tensor(Shape shape, T fill = T(0));
  Tensor(Shape shape, std::vector<T> data);

  static Tensor zeros(Shape shape) { return Tensor(std::move(shape)); }
  static Tensor scalar(T v) { return Tensor(Shape{1}, std::vector<T>{v}); }

  const Shape& shape() const noexcept { return shape_; }
  std::size_t rank() const noexcept { return shape_.size(); }
  std::size_t dim(std::size_t axis) const;
  std::size_t size() const noexcept { return data_.size(); }

  std::span<T> data() noexcept { return data_; }
  std::span<const T> data() const noexcept { return data_; }
  const std::vector<T>& vec() const noexcept { return data_; }

  T& operator[](std::size_t i) noexcept { return data_[i]; }
  const T& operator[](std::size_t i) const noexcept { return data_[i]; }

  T& at(std::initializer_list<std::size_t> index);
  const T& at(std::initializer_list<std::size_t> index) const;

  /// Same data, new extents; element counts must agree.
  Tensor reshaped(Shape shape) const&;
  Tensor reshaped(Shape shape) &&;

  /// Product of all but the last extent, and the last extent.
  std::size_t rows() const noexcept;
  std::size_t cols() const noexcept { return shape_.back(); }

  void fill(T v);

  template <typename U>
  Tensor<U> cast() const {
    std::vector<U> out(data_.begin(), data_.end());
    return Tensor<U>(shape_, std::move(out));
  }

  friend bool operator==(const Tensor& a, const Tensor& b) {
    return a.shape_ == b.shape_ && a.data_ == b.data_;
  }

 private:
  std::size_t flat_index(std::initializer_list<std::size_t> index) const;

  Shape shape_;
  std::vector<T> data_;
};

/// Scalar-multiply counter for matmul-family kernels. Counting is off by
/// default; instrumented runs must be single-threaded.
namespace instrumentation {
void set_enabled(bool on) noexcept;
bool enabled() noexcept;
std::uint64_t multiplies() noexcept;
void reset() noexcept;
void record(std::uint64_t count) noexcept;
}  // namespace instrumentation

/// Enables counting from zero for the lifetime of the scope, then restores
/// the previous counter state.
class MultiplyCountScope {
 public:
  MultiplyCountScope();
  ~MultiplyCountScope();
  MultiplyCountScope(const MultiplyCountScope&) = delete;
  MultiplyCountScope& operator=(const MultiplyCountScope&) = delete;

  std::uint64_t count() const noexcept;

 private:
  bool was_enabled_;
  std::uint64_t saved_;
};

namespace kernels {

/// out[M x P] = a[M x K] * b[K x P]. Each output element is accumulated
/// from 0 over k in increasing order. Never counted.
template <typename T>
void gemm(std::span<const T> a, std::span<const T> b, std::span<T> out, std::size_t m,
          std::size_t k, std::size_t p);

/// out[M x P] += a^T * b where a is [K x M] and b is [K x P].
template <typename T>
void gemm_tn_acc(std::span<const T> a, std::span<const T> b, std::span<T> out, std::size_t m,
                 std::size_t k, std::size_t p);

/// out[M x P] += a * b^T where a is [M x K] and b is [P x K].
template <typename T>
void gemm_nt_acc(std::span<const T> a, std::span<const T> b, std::span<T> out, std::size_t m,
                 std::size_t k, std::size_t p);

/// Row-wise softmax of in[rows x n] into out (may not alias). Throws
/// NumericError on a non-finite input.
template <typename T>
void softmax_rows(const T* in, T* out, std::size_t rows, std::size_t n);

}  // namespace kernels

// Value-level operations. These never record gradients; the graph versions
// in autograd.hpp are built on top of them.

/// Standard 2-D matrix product; counted when instrumentation is on.
template <typename T>
Tensor<T> matmul(const Tensor<T>& a, const Tensor<T>& b);

template <typename T>
Tensor<T> transpose(const Tensor<T>& a);

/// Softmax over the last axis with max subtraction.
template <typename T>
Tensor<T> softmax_rows(const Tensor<T>& x);

/// Affine map over the last axis: x[..., Din] * w[Din x Dout] + b[Dout].
template <typename T>
Tensor<T> linear(const Tensor<T>& x, const Tensor<T>& w, const Tensor<T>& b);

/// [H x W x C] -> [(H/p) x (W/p) x (C*p*p)]. Output cell (i, j) holds the
/// patch rows (p*i + a, p*j + b) for a, b in row-major patch order, each
/// contributing its C channels contiguously.
template <typename T>
Tensor<T> space_to_depth(const Tensor<T>& x, std::size_t p);

/// Exact inverse of space_to_depth.
template <typename T>
Tensor<T> depth_to_space(const Tensor<T>& x, std::size_t p);

/// Flat row indices (into a row-major grid of `grid_rows x grid_cols` cells)
/// of the g x g neighbourhood around `center`. Index on each axis runs over
/// center - g/2 .. center - g/2 + g - 1, clamped into the grid.
std::vector<std::size_t> neighborhood_indices(std::size_t grid_rows, std::size_t grid_cols,
                                              std::ptrdiff_t center_row,
                                              std::ptrdiff_t center_col, std::size_t g);

/// [G_h x G_w x C] grid -> [g*g x C] block around `center`, clamped.
template <typename T>
Tensor<T> neighborhood_gather(const Tensor<T>& grid, std::ptrdiff_t center_row,
                              std::ptrdiff_t center_col, std::size_t g);

void require_finite(std::span<const float> v, const char* what);
void require_finite(std::span<const double> v, const char* what);

}  // namespace cffm
