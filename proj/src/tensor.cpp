#include "cffm/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <sstream>
#include <type_traits>

namespace cffm {

namespace {
// One 64-byte group of lanes (GCC/Clang vector extension).
template <typename T>
using Lanes [[gnu::vector_size(64)]] = T;
}  // namespace

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

std::size_t shape_numel(const Shape& shape) {
  std::size_t n = 1;
  for (auto e : shape) n *= e;
  return n;
}

namespace {

void check_extents(const Shape& shape) {
  if (shape.empty()) throw DimensionError("tensor shape must have rank >= 1");
  for (auto e : shape) {
    if (e == 0) throw DimensionError("tensor extents must be >= 1, got " + shape_str(shape));
  }
}

}  // namespace

template <typename T>
Tensor<T>::Tensor(Shape shape, T fill) : shape_(std::move(shape)) {
  check_extents(shape_);
  data_.assign(shape_numel(shape_), fill);
}

template <typename T>
Tensor<T>::Tensor(Shape shape, std::vector<T> data) : shape_(std::move(shape)), data_(std::move(data)) {
  check_extents(shape_);
  if (data_.size() != shape_numel(shape_)) {
    throw DimensionError("element count " + std::to_string(data_.size()) + " does not match shape " +
                         shape_str(shape_));
  }
}

template <typename T>
std::size_t Tensor<T>::dim(std::size_t axis) const {
  if (axis >= shape_.size()) throw RangeError("axis out of range for " + shape_str(shape_));
  return shape_[axis];
}

template <typename T>
std::size_t Tensor<T>::flat_index(std::initializer_list<std::size_t> index) const {
  if (index.size() != shape_.size()) {
    throw RangeError("index rank mismatch for " + shape_str(shape_));
  }
  std::size_t flat = 0;
  std::size_t axis = 0;
  for (auto i : index) {
    if (i >= shape_[axis]) throw RangeError("index out of range for " + shape_str(shape_));
    flat = flat * shape_[axis] + i;
    ++axis;
  }
  return flat;
}

template <typename T>
T& Tensor<T>::at(std::initializer_list<std::size_t> index) {
  return data_[flat_index(index)];
}

template <typename T>
const T& Tensor<T>::at(std::initializer_list<std::size_t> index) const {
  return data_[flat_index(index)];
}

template <typename T>
Tensor<T> Tensor<T>::reshaped(Shape shape) const& {
  return Tensor(std::move(shape), data_);
}

template <typename T>
Tensor<T> Tensor<T>::reshaped(Shape shape) && {
  return Tensor(std::move(shape), std::move(data_));
}

template <typename T>
std::size_t Tensor<T>::rows() const noexcept {
  return data_.size() / shape_.back();
}

template <typename T>
void Tensor<T>::fill(T v) {
  std::fill(data_.begin(), data_.end(), v);
}

template class Tensor<float>;
template class Tensor<double>;
template class Tensor<std::uint8_t>;
template class Tensor<std::int32_t>;

// ---------------------------------------------------------------------------
// instrumentation

namespace instrumentation {
namespace {
bool g_enabled = false;
std::uint64_t g_count = 0;
}  // namespace

void set_enabled(bool on) noexcept { g_enabled = on; }
bool enabled() noexcept { return g_enabled; }
std::uint64_t multiplies() noexcept { return g_count; }
void reset() noexcept { g_count = 0; }
void record(std::uint64_t count) noexcept {
  if (g_enabled) g_count += count;
}
}  // namespace instrumentation

MultiplyCountScope::MultiplyCountScope()
    : was_enabled_(instrumentation::enabled()), saved_(instrumentation::multiplies()) {
  instrumentation::reset();
  instrumentation::set_enabled(true);
}

MultiplyCountScope::~MultiplyCountScope() {
  instrumentation::reset();
  instrumentation::set_enabled(true);
  instrumentation::record(saved_);
  instrumentation::set_enabled(was_enabled_);
}

std::uint64_t MultiplyCountScope::count() const noexcept { return instrumentation::multiplies(); }

// ---------------------------------------------------------------------------
// kernels

namespace kernels {

namespace {

// Register tile: MR output rows x one 64-byte vector of columns stay in
// registers for the whole k loop. Every element still sums from 0 in
// increasing k; the vector type only makes the column lanes explicit.
constexpr std::size_t MR = 4;
template <typename T>
constexpr std::size_t NR = 64 / sizeof(T);

template <typename T>
void gemm_tile(const T* a, const T* b, T* out, std::size_t k, std::size_t p) {
  Lanes<T> acc[MR] = {};
  for (std::size_t kk = 0; kk < k; ++kk) {
    Lanes<T> brow;
    std::memcpy(&brow, b + kk * p, sizeof brow);
    for (std::size_t r = 0; r < MR; ++r) acc[r] += a[r * k + kk] * brow;
  }
  for (std::size_t r = 0; r < MR; ++r) std::memcpy(out + r * p, &acc[r], sizeof acc[r]);
}

// Edge rows/columns.
template <typename T>
void gemm_edge(const T* a, const T* b, T* out, std::size_t rows, std::size_t cols, std::size_t k, std::size_t p) {
  for (std::size_t r = 0; r < rows; ++r)
    for (std::size_t j = 0; j < cols; ++j) {
      T acc = 0;
      for (std::size_t kk = 0; kk < k; ++kk) acc += a[r * k + kk] * b[kk * p + j];
      out[r * p + j] = acc;
    }
}

}  // namespace

template <typename T>
void gemm(std::span<const T> a, std::span<const T> b, std::span<T> out, std::size_t m,
          std::size_t k, std::size_t p) {
  const T* ap = a.data();
  const T* bp = b.data();
  T* op = out.data();
  const std::size_t m_full = m - m % MR, p_full = p - p % NR<T>;
  for (std::size_t i = 0; i < m_full; i += MR) {
    for (std::size_t j = 0; j < p_full; j += NR<T>) gemm_tile(ap + i * k, bp + j, op + i * p + j, k, p);
    if (p_full < p) gemm_edge(ap + i * k, bp + p_full, op + i * p + p_full, MR, p - p_full, k, p);
  }
  if (m_full < m) gemm_edge(ap + m_full * k, bp, op + m_full * p, m - m_full, p, k, p);
}

template <typename T>
void gemm_tn_acc(std::span<const T> a, std::span<const T> b, std::span<T> out, std::size_t m,
                 std::size_t k, std::size_t p) {
  const T* ap = a.data();
  const T* bp = b.data();
  T* op = out.data();
  for (std::size_t kk = 0; kk < k; ++kk) {
    const T* arow = ap + kk * m;
    const T* brow = bp + kk * p;
    for (std::size_t i = 0; i < m; ++i) {
      const T av = arow[i];
      if (av == T(0)) continue;
      T* orow = op + i * p;
      for (std::size_t j = 0; j < p; ++j) orow[j] += av * brow[j];
    }
  }
}

template <typename T>
void gemm_nt_acc(std::span<const T> a, std::span<const T> b, std::span<T> out, std::size_t m,
                 std::size_t k, std::size_t p) {
  const T* ap = a.data();
  const T* bp = b.data();
  T* op = out.data();
  for (std::size_t i = 0; i < m; ++i) {
    const T* arow = ap + i * k;
    T* orow = op + i * p;
    for (std::size_t j = 0; j < p; ++j) {
      const T* brow = bp + j * k;
      T s = T(0);
      for (std::size_t kk = 0; kk < k; ++kk) s += arow[kk] * brow[kk];
      orow[j] += s;
    }
  }
}

template void gemm<float>(std::span<const float>, std::span<const float>, std::span<float>,
                          std::size_t, std::size_t, std::size_t);
template void gemm<double>(std::span<const double>, std::span<const double>, std::span<double>,
                           std::size_t, std::size_t, std::size_t);
template void gemm_tn_acc<float>(std::span<const float>, std::span<const float>, std::span<float>,
                                 std::size_t, std::size_t, std::size_t);
template void gemm_tn_acc<double>(std::span<const double>, std::span<const double>,
                                  std::span<double>, std::size_t, std::size_t, std::size_t);
template void gemm_nt_acc<float>(std::span<const float>, std::span<const float>, std::span<float>,
                                 std::size_t, std::size_t, std::size_t);
template void gemm_nt_acc<double>(std::span<const double>, std::span<const double>,
                                  std::span<double>, std::size_t, std::size_t, std::size_t);

}  // namespace kernels

// ---------------------------------------------------------------------------
// value-level ops

void require_finite(std::span<const float> v, const char* what) {
  for (float x : v) {
    if (!std::isfinite(x)) throw NumericError(std::string("non-finite value in ") + what);
  }
}

void require_finite(std::span<const double> v, const char* what) {
  for (double x : v) {
    if (!std::isfinite(x)) throw NumericError(std::string("non-finite value in ") + what);
  }
}

template <typename T>
Tensor<T> matmul(const Tensor<T>& a, const Tensor<T>& b) {
  if (a.rank() != 2 || b.rank() != 2 || a.dim(1) != b.dim(0)) {
    throw DimensionError("matmul: cannot multiply " + shape_str(a.shape()) + " by " +
                         shape_str(b.shape()));
  }
  const std::size_t m = a.dim(0), k = a.dim(1), p = b.dim(1);
  Tensor<T> out(Shape{m, p});
  kernels::gemm<T>(a.data(), b.data(), out.data(), m, k, p);
  instrumentation::record(static_cast<std::uint64_t>(m) * k * p);
  return out;
}

template <typename T>
Tensor<T> transpose(const Tensor<T>& a) {
  if (a.rank() != 2) throw DimensionError("transpose expects a matrix, got " + shape_str(a.shape()));
  const std::size_t r = a.dim(0), c = a.dim(1);
  Tensor<T> out(Shape{c, r});
  for (std::size_t i = 0; i < r; ++i)
    for (std::size_t j = 0; j < c; ++j) out[j * r + i] = a[i * c + j];
  return out;
}

namespace {

// exp for x <= 0 in float: Cody-Waite reduction by ln 2 and a degree-6
// polynomial (Cephes coefficients). Relative error stays within a few ulp;
// results below 2^-126 flush to 0. V is float or a float lane vector; both
// run the same operation sequence so every element gets the same result.
template <typename V, typename I>
inline V exp_nonpositive_impl(V x) {
  constexpr float round_magic = 12582912.0f;  // 1.5 * 2^23
  x = x < -87.0f ? V{} - 87.0f : x;
  const V n = (x * 1.44269504088896341f + round_magic) - round_magic;
  V r = x - n * 0.693359375f;
  r = r - n * -2.12194440e-4f;
  V p = V{} + 1.9875691500e-4f;
  p = p * r + 1.3981999507e-3f;
  p = p * r + 8.3334519073e-3f;
  p = p * r + 4.1665795894e-2f;
  p = p * r + 1.6666665459e-1f;
  p = p * r + 5.0000001201e-1f;
  const V y = p * r * r + r + 1.0f;
  I bits;
  if constexpr (std::is_same_v<V, float>) {
    bits = (static_cast<I>(n) + 127) << 23;
  } else {
    bits = (__builtin_convertvector(n, I) + 127) << 23;
  }
  V scale;
  std::memcpy(&scale, &bits, sizeof scale);
  return y * scale;
}

void exp_row(const float* in, float mx, float* out, std::size_t n) {
  using V = Lanes<float>;
  using I [[gnu::vector_size(64)]] = std::int32_t;
  constexpr std::size_t L = sizeof(V) / sizeof(float);
  std::size_t j = 0;
  for (; j + L <= n; j += L) {
    V v;
    std::memcpy(&v, in + j, sizeof v);
    const V e = exp_nonpositive_impl<V, I>(v - mx);
    std::memcpy(out + j, &e, sizeof e);
  }
  for (; j < n; ++j) out[j] = exp_nonpositive_impl<float, std::int32_t>(in[j] - mx);
}

void exp_row(const double* in, double mx, double* out, std::size_t n) {
  for (std::size_t j = 0; j < n; ++j) out[j] = std::exp(in[j] - mx);
}

// Row maximum; false if any element is inf or NaN (x - x != 0 exactly for
// those).
template <typename T>
bool finite_max(const T* in, std::size_t n, T& mx) {
  using V = Lanes<T>;
  using M = decltype(V{} != V{});
  constexpr std::size_t L = sizeof(V) / sizeof(T);
  T m = in[0];
  bool bad = false;
  std::size_t j = 0;
  if (n >= L) {
    V vm;
    M vbad = {};
    std::memcpy(&vm, in, sizeof vm);
    for (; j + L <= n; j += L) {
      V v;
      std::memcpy(&v, in + j, sizeof v);
      vm = v > vm ? v : vm;
      vbad |= (v - v) != 0;
    }
    for (std::size_t l = 0; l < L; ++l) {
      m = vm[l] > m ? vm[l] : m;
      bad = bad || vbad[l] != 0;
    }
  }
  for (; j < n; ++j) {
    m = in[j] > m ? in[j] : m;
    bad = bad || in[j] - in[j] != 0;
  }
  mx = m;
  return !bad;
}

// Sum with 16 interleaved partial sums combined in a fixed order.
template <typename T>
T lane_sum(const T* v, std::size_t n) {
  constexpr std::size_t L = 16;
  T part[L] = {};
  std::size_t j = 0;
  for (; j + L <= n; j += L)
    for (std::size_t l = 0; l < L; ++l) part[l] += v[j + l];
  for (std::size_t l = 0; j < n; ++j, ++l) part[l] += v[j];
  T total = 0;
  for (std::size_t l = 0; l < L; ++l) total += part[l];
  return total;
}

}  // namespace

namespace kernels {

template <typename T>
void softmax_rows(const T* in, T* out, std::size_t rows, std::size_t n) {
  for (std::size_t r = 0; r < rows; ++r, in += n, out += n) {
    T mx;
    if (!finite_max(in, n, mx)) throw NumericError("non-finite value in softmax input");
    exp_row(in, mx, out, n);
    const T inv = T(1) / lane_sum(out, n);
    for (std::size_t j = 0; j < n; ++j) out[j] *= inv;
  }
}

template void softmax_rows<float>(const float*, float*, std::size_t, std::size_t);
template void softmax_rows<double>(const double*, double*, std::size_t, std::size_t);

}  // namespace kernels

template <typename T>
Tensor<T> softmax_rows(const Tensor<T>& x) {
  Tensor<T> out(x.shape());
  kernels::softmax_rows(x.data().data(), out.data().data(), x.rows(), x.cols());
  return out;
}

template <typename T>
Tensor<T> linear(const Tensor<T>& x, const Tensor<T>& w, const Tensor<T>& b) {
  if (w.rank() != 2 || x.cols() != w.dim(0) || b.size() != w.dim(1)) {
    throw DimensionError("linear: input " + shape_str(x.shape()) + " weight " + shape_str(w.shape()) +
                         " bias " + shape_str(b.shape()));
  }
  const std::size_t rows = x.rows(), din = w.dim(0), dout = w.dim(1);
  Shape out_shape = x.shape();
  out_shape.back() = dout;
  Tensor<T> out(out_shape);
  kernels::gemm<T>(x.data(), w.data(), out.data(), rows, din, dout);
  instrumentation::record(static_cast<std::uint64_t>(rows) * din * dout);
  for (std::size_t r = 0; r < rows; ++r) {
    T* o = out.data().data() + r * dout;
    for (std::size_t j = 0; j < dout; ++j) o[j] += b[j];
  }
  return out;
}

namespace {

void check_s2d(const Shape& s, std::size_t p) {
  if (s.size() != 3) throw DimensionError("space_to_depth expects HxWxC, got " + shape_str(s));
  if (p == 0 || s[0] % p != 0 || s[1] % p != 0) {
    throw DimensionError("space_to_depth: kernel " + std::to_string(p) + " does not divide " +
                         shape_str(s));
  }
}

}  // namespace

template <typename T>
Tensor<T> space_to_depth(const Tensor<T>& x, std::size_t p) {
  check_s2d(x.shape(), p);
  const std::size_t h = x.dim(0), w = x.dim(1), c = x.dim(2);
  const std::size_t oh = h / p, ow = w / p;
  Tensor<T> out(Shape{oh, ow, c * p * p});
  T* o = out.data().data();
  for (std::size_t i = 0; i < oh; ++i)
    for (std::size_t j = 0; j < ow; ++j)
      for (std::size_t a = 0; a < p; ++a)
        for (std::size_t b = 0; b < p; ++b) {
          const T* src = x.data().data() + ((i * p + a) * w + (j * p + b)) * c;
          o = std::copy(src, src + c, o);
        }
  return out;
}

template <typename T>
Tensor<T> depth_to_space(const Tensor<T>& x, std::size_t p) {
  if (x.rank() != 3 || p == 0 || x.dim(2) % (p * p) != 0) {
    throw DimensionError("depth_to_space: kernel " + std::to_string(p) + " incompatible with " +
                         shape_str(x.shape()));
  }
  const std::size_t oh = x.dim(0), ow = x.dim(1), c = x.dim(2) / (p * p);
  const std::size_t w = ow * p;
  Tensor<T> out(Shape{oh * p, w, c});
  const T* src = x.data().data();
  for (std::size_t i = 0; i < oh; ++i)
    for (std::size_t j = 0; j < ow; ++j)
      for (std::size_t a = 0; a < p; ++a)
        for (std::size_t b = 0; b < p; ++b) {
          std::copy(src, src + c, out.data().data() + ((i * p + a) * w + (j * p + b)) * c);
          src += c;
        }
  return out;
}

std::vector<std::size_t> neighborhood_indices(std::size_t grid_rows, std::size_t grid_cols,
                                              std::ptrdiff_t center_row,
                                              std::ptrdiff_t center_col, std::size_t g) {
  if (g == 0) throw ContractError("neighborhood size must be >= 1");
  if (grid_rows == 0 || grid_cols == 0) throw ContractError("neighborhood grid is empty");
  auto clamp = [](std::ptrdiff_t v, std::size_t extent) {
    return static_cast<std::size_t>(std::clamp<std::ptrdiff_t>(v, 0, static_cast<std::ptrdiff_t>(extent) - 1));
  };
  const auto half = static_cast<std::ptrdiff_t>(g / 2);
  std::vector<std::size_t> idx;
  idx.reserve(g * g);
  for (std::size_t a = 0; a < g; ++a) {
    const std::size_t r = clamp(center_row - half + static_cast<std::ptrdiff_t>(a), grid_rows);
    for (std::size_t b = 0; b < g; ++b) {
      const std::size_t c = clamp(center_col - half + static_cast<std::ptrdiff_t>(b), grid_cols);
      idx.push_back(r * grid_cols + c);
    }
  }
  return idx;
}

template <typename T>
Tensor<T> neighborhood_gather(const Tensor<T>& grid, std::ptrdiff_t center_row,
                              std::ptrdiff_t center_col, std::size_t g) {
  if (grid.rank() != 3) throw DimensionError("neighborhood_gather expects a grid, got " + shape_str(grid.shape()));
  const std::size_t c = grid.dim(2);
  const auto idx = neighborhood_indices(grid.dim(0), grid.dim(1), center_row, center_col, g);
  Tensor<T> out(Shape{g * g, c});
  for (std::size_t r = 0; r < idx.size(); ++r) {
    const T* src = grid.data().data() + idx[r] * c;
    std::copy(src, src + c, out.data().data() + r * c);
  }
  return out;
}

#define CFFM_INSTANTIATE(T)                                                                 \
  template Tensor<T> matmul(const Tensor<T>&, const Tensor<T>&);                            \
  template Tensor<T> transpose(const Tensor<T>&);                                           \
  template Tensor<T> softmax_rows(const Tensor<T>&);                                        \
  template Tensor<T> linear(const Tensor<T>&, const Tensor<T>&, const Tensor<T>&);          \
  template Tensor<T> space_to_depth(const Tensor<T>&, std::size_t);                         \
  template Tensor<T> depth_to_space(const Tensor<T>&, std::size_t);                         \
  template Tensor<T> neighborhood_gather(const Tensor<T>&, std::ptrdiff_t, std::ptrdiff_t, \
                                         std::size_t);

CFFM_INSTANTIATE(float)
CFFM_INSTANTIATE(double)

#undef CFFM_INSTANTIATE

}  // namespace cffm
