#include "cffm/autograd.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <unordered_set>

namespace cffm {

namespace {
thread_local bool g_grad_enabled = true;
}

bool GradMode::enabled() noexcept { return g_grad_enabled; }
void GradMode::set_enabled(bool on) noexcept { g_grad_enabled = on; }

template <typename T>
Var<T>::Var(Tensor<T> value, bool requires_grad) : node_(std::make_shared<Node>()) {
  node_->value = std::move(value);
  node_->requires_grad = requires_grad;
}

template <typename T>
Var<T> Var<T>::param(Parameter<T>& p) {
  if (!GradMode::enabled()) return Var(p.value, false);
  Var v(p.value, true);
  Parameter<T>* target = &p;
  v.node_->backward = [target](Node& self) {
    if (target->grad.shape() != self.grad.shape()) target->grad = Tensor<T>(self.grad.shape());
    auto dst = target->grad.data();
    auto src = self.grad.data();
    for (std::size_t i = 0; i < dst.size(); ++i) dst[i] += src[i];
  };
  return v;
}

template <typename T>
Var<T> Var<T>::make(Tensor<T> value, std::vector<Var> parents, BackwardFn fn) {
  Var out(std::move(value), false);
  const bool any = std::any_of(parents.begin(), parents.end(),
                               [](const Var& p) { return p.requires_grad(); });
  if (any && GradMode::enabled()) {
    out.node_->requires_grad = true;
    out.node_->parents.reserve(parents.size());
    for (auto& p : parents) out.node_->parents.push_back(p.node_);
    out.node_->backward = std::move(fn);
  }
  return out;
}

template <typename T>
Tensor<T> Var<T>::grad() const {
  if (node_->has_grad) return node_->grad;
  return Tensor<T>(shape());
}

template <typename T>
void Var<T>::backward() const {
  if (node_->value.size() != 1) {
    throw ContractError("backward requires a scalar root, got shape " + shape_str(shape()));
  }
  if (!node_->requires_grad) return;

  // Iterative post-order DFS gives a topological order (parents first).
  std::vector<Node*> order;
  std::unordered_set<Node*> seen;
  std::vector<std::pair<Node*, std::size_t>> stack;
  stack.emplace_back(node_.get(), 0);
  seen.insert(node_.get());
  while (!stack.empty()) {
    auto& [n, next] = stack.back();
    if (next < n->parents.size()) {
      Node* p = n->parents[next++].get();
      if (p->requires_grad && seen.insert(p).second) stack.emplace_back(p, 0);
    } else {
      order.push_back(n);
      stack.pop_back();
    }
  }

  for (Node* n : order) {
    if (n->backward || !n->has_grad) {
      n->grad = Tensor<T>(n->value.shape());
      n->has_grad = true;
    }
  }
  node_->grad[0] += T(1);
  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    if ((*it)->backward) (*it)->backward(**it);
  }
}

// ---------------------------------------------------------------------------

namespace {

template <typename T>
void add_into(Tensor<T>* dst, std::span<const T> src) {
  if (!dst) return;
  auto d = dst->data();
  for (std::size_t i = 0; i < d.size(); ++i) d[i] += src[i];
}

}  // namespace

template <typename T>
Var<T> matmul(const Var<T>& a, const Var<T>& b) {
  auto out = matmul(a.value(), b.value());
  return Var<T>::make(std::move(out), {a, b}, [](detail::Node<T>& self) {
    const auto& av = self.parent_value(0);
    const auto& bv = self.parent_value(1);
    const std::size_t m = av.dim(0), k = av.dim(1), p = bv.dim(1);
    if (auto* ga = self.parent_grad(0)) kernels::gemm_nt_acc<T>(self.grad.data(), bv.data(), ga->data(), m, p, k);
    if (auto* gb = self.parent_grad(1)) kernels::gemm_tn_acc<T>(av.data(), self.grad.data(), gb->data(), k, m, p);
  });
}

template <typename T>
Var<T> transpose(const Var<T>& a) {
  return Var<T>::make(transpose(a.value()), {a}, [](detail::Node<T>& self) {
    if (auto* g = self.parent_grad(0)) add_into<T>(g, transpose(self.grad).data());
  });
}

template <typename T>
Var<T> add(const Var<T>& a, const Var<T>& b) {
  if (a.shape() != b.shape()) {
    throw DimensionError("add: shapes " + shape_str(a.shape()) + " and " + shape_str(b.shape()));
  }
  Tensor<T> out = a.value();
  auto o = out.data();
  auto bv = b.value().data();
  for (std::size_t i = 0; i < o.size(); ++i) o[i] += bv[i];
  return Var<T>::make(std::move(out), {a, b}, [](detail::Node<T>& self) {
    add_into<T>(self.parent_grad(0), self.grad.data());
    add_into<T>(self.parent_grad(1), self.grad.data());
  });
}

template <typename T>
Var<T> scale(const Var<T>& a, T factor) {
  Tensor<T> out = a.value();
  for (auto& v : out.data()) v *= factor;
  return Var<T>::make(std::move(out), {a}, [factor](detail::Node<T>& self) {
    if (auto* g = self.parent_grad(0)) {
      auto d = g->data();
      auto s = self.grad.data();
      for (std::size_t i = 0; i < d.size(); ++i) d[i] += factor * s[i];
    }
  });
}

template <typename T>
Var<T> gelu(const Var<T>& a) {
  const T inv_sqrt2 = T(1) / std::numbers::sqrt2_v<T>;
  Tensor<T> out(a.shape());
  auto x = a.value().data();
  auto o = out.data();
  for (std::size_t i = 0; i < o.size(); ++i) o[i] = T(0.5) * x[i] * (T(1) + std::erf(x[i] * inv_sqrt2));
  return Var<T>::make(std::move(out), {a}, [inv_sqrt2](detail::Node<T>& self) {
    auto* g = self.parent_grad(0);
    if (!g) return;
    const T inv_sqrt2pi = inv_sqrt2 * std::numbers::inv_sqrtpi_v<T>;
    auto x = self.parent_value(0).data();
    auto d = g->data();
    auto s = self.grad.data();
    for (std::size_t i = 0; i < d.size(); ++i) {
      const T cdf = T(0.5) * (T(1) + std::erf(x[i] * inv_sqrt2));
      const T pdf = inv_sqrt2pi * std::exp(T(-0.5) * x[i] * x[i]);
      d[i] += s[i] * (cdf + x[i] * pdf);
    }
  });
}

template <typename T>
Var<T> softmax_rows(const Var<T>& x) {
  return Var<T>::make(softmax_rows(x.value()), {x}, [](detail::Node<T>& self) {
    auto* g = self.parent_grad(0);
    if (!g) return;
    const std::size_t n = self.value.cols(), rows = self.value.rows();
    const T* y = self.value.data().data();
    const T* dy = self.grad.data().data();
    T* dx = g->data().data();
    for (std::size_t r = 0; r < rows; ++r, y += n, dy += n, dx += n) {
      T dot = 0;
      for (std::size_t j = 0; j < n; ++j) dot += dy[j] * y[j];
      for (std::size_t j = 0; j < n; ++j) dx[j] += y[j] * (dy[j] - dot);
    }
  });
}

template <typename T>
Var<T> linear(const Var<T>& x, const Var<T>& w, const Var<T>& b) {
  auto out = linear(x.value(), w.value(), b.value());
  return Var<T>::make(std::move(out), {x, w, b}, [](detail::Node<T>& self) {
    const auto& xv = self.parent_value(0);
    const auto& wv = self.parent_value(1);
    const std::size_t rows = xv.rows(), din = wv.dim(0), dout = wv.dim(1);
    if (auto* gx = self.parent_grad(0)) kernels::gemm_nt_acc<T>(self.grad.data(), wv.data(), gx->data(), rows, dout, din);
    if (auto* gw = self.parent_grad(1)) kernels::gemm_tn_acc<T>(xv.data(), self.grad.data(), gw->data(), din, rows, dout);
    if (auto* gb = self.parent_grad(2)) {
      T* db = gb->data().data();
      const T* dy = self.grad.data().data();
      for (std::size_t r = 0; r < rows; ++r, dy += dout)
        for (std::size_t j = 0; j < dout; ++j) db[j] += dy[j];
    }
  });
}

template <typename T>
Var<T> gather_rows(const Var<T>& x, std::span<const std::ptrdiff_t> index) {
  const std::size_t rows = x.value().rows(), cols = x.value().cols();
  for (auto i : index) {
    if (i < -1 || i >= static_cast<std::ptrdiff_t>(rows)) {
      throw RangeError("gather_rows: index " + std::to_string(i) + " outside " + std::to_string(rows) + " rows");
    }
  }
  if (index.empty()) throw DimensionError("gather_rows: empty index list");
  Tensor<T> out(Shape{index.size(), cols});
  const T* src = x.value().data().data();
  T* dst = out.data().data();
  for (std::size_t r = 0; r < index.size(); ++r) {
    if (index[r] >= 0) std::copy_n(src + index[r] * cols, cols, dst + r * cols);
  }
  std::vector<std::ptrdiff_t> idx(index.begin(), index.end());
  return Var<T>::make(std::move(out), {x}, [idx = std::move(idx), cols](detail::Node<T>& self) {
    auto* g = self.parent_grad(0);
    if (!g) return;
    T* dx = g->data().data();
    const T* dy = self.grad.data().data();
    for (std::size_t r = 0; r < idx.size(); ++r) {
      if (idx[r] < 0) continue;
      T* d = dx + idx[r] * cols;
      const T* s = dy + r * cols;
      for (std::size_t j = 0; j < cols; ++j) d[j] += s[j];
    }
  });
}

template <typename T>
Var<T> reshape(const Var<T>& x, Shape shape) {
  return Var<T>::make(x.value().reshaped(std::move(shape)), {x}, [](detail::Node<T>& self) {
    add_into<T>(self.parent_grad(0), self.grad.data());
  });
}

template <typename T>
Var<T> concat_rows(std::span<const Var<T>> parts) {
  if (parts.empty()) throw DimensionError("concat_rows: nothing to concatenate");
  const std::size_t cols = parts[0].value().cols();
  std::size_t rows = 0;
  for (const auto& p : parts) {
    if (p.value().cols() != cols) {
      throw DimensionError("concat_rows: column mismatch " + shape_str(parts[0].shape()) + " vs " +
                           shape_str(p.shape()));
    }
    rows += p.value().rows();
  }
  Tensor<T> out(Shape{rows, cols});
  T* dst = out.data().data();
  for (const auto& p : parts) dst = std::copy(p.value().data().begin(), p.value().data().end(), dst);
  std::vector<Var<T>> parents(parts.begin(), parts.end());
  return Var<T>::make(std::move(out), std::move(parents), [](detail::Node<T>& self) {
    const T* src = self.grad.data().data();
    for (std::size_t i = 0; i < self.parents.size(); ++i) {
      const std::size_t n = self.parents[i]->value.size();
      if (auto* g = self.parent_grad(i)) add_into<T>(g, std::span<const T>(src, n));
      src += n;
    }
  });
}

template <typename T>
Var<T> slice_cols(const Var<T>& x, std::size_t begin, std::size_t end) {
  const std::size_t rows = x.value().rows(), cols = x.value().cols();
  if (begin >= end || end > cols) {
    throw RangeError("slice_cols: [" + std::to_string(begin) + ", " + std::to_string(end) + ") of " +
                     std::to_string(cols));
  }
  const std::size_t width = end - begin;
  Tensor<T> out(Shape{rows, width});
  const T* src = x.value().data().data();
  T* dst = out.data().data();
  for (std::size_t r = 0; r < rows; ++r) std::copy_n(src + r * cols + begin, width, dst + r * width);
  return Var<T>::make(std::move(out), {x}, [begin, width, cols, rows](detail::Node<T>& self) {
    auto* g = self.parent_grad(0);
    if (!g) return;
    T* dx = g->data().data();
    const T* dy = self.grad.data().data();
    for (std::size_t r = 0; r < rows; ++r)
      for (std::size_t j = 0; j < width; ++j) dx[r * cols + begin + j] += dy[r * width + j];
  });
}

template <typename T>
Var<T> concat_cols(std::span<const Var<T>> parts) {
  if (parts.empty()) throw DimensionError("concat_cols: nothing to concatenate");
  const std::size_t rows = parts[0].value().rows();
  std::size_t cols = 0;
  for (const auto& p : parts) {
    if (p.value().rows() != rows) {
      throw DimensionError("concat_cols: row mismatch " + shape_str(parts[0].shape()) + " vs " +
                           shape_str(p.shape()));
    }
    cols += p.value().cols();
  }
  Tensor<T> out(Shape{rows, cols});
  T* dst = out.data().data();
  std::size_t offset = 0;
  for (const auto& p : parts) {
    const std::size_t w = p.value().cols();
    const T* src = p.value().data().data();
    for (std::size_t r = 0; r < rows; ++r) std::copy_n(src + r * w, w, dst + r * cols + offset);
    offset += w;
  }
  std::vector<Var<T>> parents(parts.begin(), parts.end());
  return Var<T>::make(std::move(out), std::move(parents), [rows, cols](detail::Node<T>& self) {
    const T* dy = self.grad.data().data();
    std::size_t offset = 0;
    for (std::size_t i = 0; i < self.parents.size(); ++i) {
      const std::size_t w = self.parents[i]->value.cols();
      if (auto* g = self.parent_grad(i)) {
        T* dx = g->data().data();
        for (std::size_t r = 0; r < rows; ++r)
          for (std::size_t j = 0; j < w; ++j) dx[r * w + j] += dy[r * cols + offset + j];
      }
      offset += w;
    }
  });
}

template <typename T>
Var<T> take(const Var<T>& x, std::size_t i) {
  const auto& shape = x.shape();
  if (shape.size() < 2) throw DimensionError("take needs rank >= 2, got " + shape_str(shape));
  if (i >= shape[0]) throw RangeError("take: index " + std::to_string(i) + " outside " + shape_str(shape));
  Shape rest(shape.begin() + 1, shape.end());
  const std::size_t n = shape_numel(rest);
  std::vector<T> data(x.value().data().begin() + i * n, x.value().data().begin() + (i + 1) * n);
  return Var<T>::make(Tensor<T>(std::move(rest), std::move(data)), {x}, [i, n](detail::Node<T>& self) {
    if (auto* g = self.parent_grad(0)) {
      T* dx = g->data().data() + i * n;
      const T* dy = self.grad.data().data();
      for (std::size_t j = 0; j < n; ++j) dx[j] += dy[j];
    }
  });
}

template <typename T>
Var<T> sum(const Var<T>& x) {
  T s = 0;
  for (T v : x.value().data()) s += v;
  return Var<T>::make(Tensor<T>::scalar(s), {x}, [](detail::Node<T>& self) {
    if (auto* g = self.parent_grad(0)) {
      const T d = self.grad[0];
      for (auto& v : g->data()) v += d;
    }
  });
}

template <typename T>
Var<T> space_to_depth(const Var<T>& x, std::size_t p) {
  auto out = space_to_depth(x.value(), p);
  return Var<T>::make(std::move(out), {x}, [p](detail::Node<T>& self) {
    if (auto* g = self.parent_grad(0)) add_into<T>(g, depth_to_space(self.grad, p).data());
  });
}

template <typename T>
Var<T> cross_entropy(const Var<T>& logits, std::span<const std::int32_t> labels,
                     std::int32_t ignore_label) {
  const std::size_t rows = logits.value().rows(), k = logits.value().cols();
  if (labels.size() != rows) {
    throw DimensionError("cross_entropy: " + std::to_string(labels.size()) + " labels for logits " +
                         shape_str(logits.shape()));
  }
  require_finite(logits.value().data(), "cross_entropy logits");
  Tensor<T> probs(Shape{rows, k});
  std::size_t valid = 0;
  T total = 0;
  const T* z = logits.value().data().data();
  for (std::size_t r = 0; r < rows; ++r) {
    const std::int32_t y = labels[r];
    if (y == ignore_label) continue;
    if (y < 0 || static_cast<std::size_t>(y) >= k) {
      throw ContractError("cross_entropy: label " + std::to_string(y) + " outside [0, " + std::to_string(k) + ")");
    }
    const T* row = z + r * k;
    T* pr = probs.data().data() + r * k;
    T mx = *std::max_element(row, row + k);
    T s = 0;
    for (std::size_t j = 0; j < k; ++j) {
      pr[j] = std::exp(row[j] - mx);
      s += pr[j];
    }
    for (std::size_t j = 0; j < k; ++j) pr[j] /= s;
    total += mx + std::log(s) - row[y];
    ++valid;
  }
  const T inv = valid ? T(1) / static_cast<T>(valid) : T(0);
  std::vector<std::int32_t> lab(labels.begin(), labels.end());
  return Var<T>::make(Tensor<T>::scalar(total * inv), {logits},
                      [probs = std::move(probs), lab = std::move(lab), inv, k, ignore_label](detail::Node<T>& self) {
                        auto* g = self.parent_grad(0);
                        if (!g) return;
                        const T d = self.grad[0] * inv;
                        T* dz = g->data().data();
                        const T* pr = probs.data().data();
                        for (std::size_t r = 0; r < lab.size(); ++r) {
                          if (lab[r] == ignore_label) continue;
                          for (std::size_t j = 0; j < k; ++j) dz[r * k + j] += d * pr[r * k + j];
                          dz[r * k + static_cast<std::size_t>(lab[r])] -= d;
                        }
                      });
}

namespace {

struct Taps {
  std::vector<std::size_t> lo, hi;
  std::vector<double> frac;
};

Taps bilinear_taps(std::size_t in, std::size_t factor) {
  Taps t;
  const std::size_t out = in * factor;
  t.lo.resize(out);
  t.hi.resize(out);
  t.frac.resize(out);
  for (std::size_t o = 0; o < out; ++o) {
    double src = (static_cast<double>(o) + 0.5) / static_cast<double>(factor) - 0.5;
    if (src < 0) src = 0;
    auto i0 = static_cast<std::size_t>(src);
    if (i0 > in - 1) i0 = in - 1;
    t.lo[o] = i0;
    t.hi[o] = std::min(i0 + 1, in - 1);
    t.frac[o] = src - static_cast<double>(i0);
  }
  return t;
}

void check_upsample(const Shape& s, std::size_t factor) {
  if (s.size() != 3 || factor == 0) throw DimensionError("upsample_bilinear expects HxWxC, got " + shape_str(s));
}

}  // namespace

template <typename T>
Tensor<T> upsample_bilinear(const Tensor<T>& x, std::size_t factor) {
  check_upsample(x.shape(), factor);
  const std::size_t h = x.dim(0), w = x.dim(1), c = x.dim(2);
  const auto ty = bilinear_taps(h, factor), tx = bilinear_taps(w, factor);
  const std::size_t oh = h * factor, ow = w * factor;
  Tensor<T> out(Shape{oh, ow, c});
  const T* src = x.data().data();
  T* dst = out.data().data();
  for (std::size_t y = 0; y < oh; ++y) {
    const T fy = static_cast<T>(ty.frac[y]);
    for (std::size_t xo = 0; xo < ow; ++xo) {
      const T fx = static_cast<T>(tx.frac[xo]);
      const T* a = src + (ty.lo[y] * w + tx.lo[xo]) * c;
      const T* b = src + (ty.lo[y] * w + tx.hi[xo]) * c;
      const T* cc = src + (ty.hi[y] * w + tx.lo[xo]) * c;
      const T* d = src + (ty.hi[y] * w + tx.hi[xo]) * c;
      T* o = dst + (y * ow + xo) * c;
      for (std::size_t ch = 0; ch < c; ++ch) {
        const T top = a[ch] + fx * (b[ch] - a[ch]);
        const T bot = cc[ch] + fx * (d[ch] - cc[ch]);
        o[ch] = top + fy * (bot - top);
      }
    }
  }
  return out;
}

template <typename T>
Var<T> upsample_bilinear(const Var<T>& x, std::size_t factor) {
  return Var<T>::make(upsample_bilinear(x.value(), factor), {x}, [factor](detail::Node<T>& self) {
    auto* g = self.parent_grad(0);
    if (!g) return;
    const std::size_t h = g->dim(0), w = g->dim(1), c = g->dim(2);
    const auto ty = bilinear_taps(h, factor), tx = bilinear_taps(w, factor);
    const std::size_t oh = h * factor, ow = w * factor;
    T* dx = g->data().data();
    const T* dy = self.grad.data().data();
    for (std::size_t y = 0; y < oh; ++y) {
      const T fy = static_cast<T>(ty.frac[y]);
      for (std::size_t xo = 0; xo < ow; ++xo) {
        const T fx = static_cast<T>(tx.frac[xo]);
        const T wa = (1 - fy) * (1 - fx), wb = (1 - fy) * fx, wc = fy * (1 - fx), wd = fy * fx;
        T* a = dx + (ty.lo[y] * w + tx.lo[xo]) * c;
        T* b = dx + (ty.lo[y] * w + tx.hi[xo]) * c;
        T* cc = dx + (ty.hi[y] * w + tx.lo[xo]) * c;
        T* d = dx + (ty.hi[y] * w + tx.hi[xo]) * c;
        const T* o = dy + (y * ow + xo) * c;
        for (std::size_t ch = 0; ch < c; ++ch) {
          a[ch] += wa * o[ch];
          b[ch] += wb * o[ch];
          cc[ch] += wc * o[ch];
          d[ch] += wd * o[ch];
        }
      }
    }
  });
}

#define CFFM_INSTANTIATE(T)                                                                     \
  template class Var<T>;                                                                        \
  template Var<T> matmul(const Var<T>&, const Var<T>&);                                         \
  template Var<T> transpose(const Var<T>&);                                                     \
  template Var<T> add(const Var<T>&, const Var<T>&);                                            \
  template Var<T> scale(const Var<T>&, T);                                                      \
  template Var<T> gelu(const Var<T>&);                                                          \
  template Var<T> softmax_rows(const Var<T>&);                                                  \
  template Var<T> linear(const Var<T>&, const Var<T>&, const Var<T>&);                          \
  template Var<T> gather_rows(const Var<T>&, std::span<const std::ptrdiff_t>);                  \
  template Var<T> reshape(const Var<T>&, Shape);                                                \
  template Var<T> concat_rows(std::span<const Var<T>>);                                         \
  template Var<T> slice_cols(const Var<T>&, std::size_t, std::size_t);                          \
  template Var<T> concat_cols(std::span<const Var<T>>);                                         \
  template Var<T> take(const Var<T>&, std::size_t);                                             \
  template Var<T> sum(const Var<T>&);                                                           \
  template Var<T> space_to_depth(const Var<T>&, std::size_t);                                   \
  template Var<T> cross_entropy(const Var<T>&, std::span<const std::int32_t>, std::int32_t);    \
  template Var<T> upsample_bilinear(const Var<T>&, std::size_t);                                \
  template Tensor<T> upsample_bilinear(const Tensor<T>&, std::size_t);

CFFM_INSTANTIATE(float)
CFFM_INSTANTIATE(double)

#undef CFFM_INSTANTIATE

}  // namespace cffm
