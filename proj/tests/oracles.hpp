#pragma once
// Loop-based reference implementations shared by the tests.

#include <algorithm>
#include <cmath>
#include <optional>
#include <set>
#include <vector>

#include "cffm/cfm.hpp"
#include "cffm/metrics.hpp"

namespace cffm::oracle {

// x*W + b per row, accumulated in long double.
inline Tensor<double> affine(const Tensor<double>& x, const Tensor<double>& w, const Tensor<double>& b) {
  const std::size_t n = x.dim(0), din = x.dim(1), dout = w.dim(1);
  Tensor<double> out(Shape{n, dout});
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t o = 0; o < dout; ++o) {
      long double acc = b[o];
      for (std::size_t k = 0; k < din; ++k) acc += static_cast<long double>(x[i * din + k]) * w[k * dout + o];
      out[i * dout + o] = static_cast<double>(acc);
    }
  return out;
}

// Multi-head attention of `queries` over `keys` with the layer's projections,
// no position bias, plus residual.
inline Tensor<double> attention(const AttentionLayer<double>& layer, const Tensor<double>& queries,
                                const Tensor<double>& keys) {
  const std::size_t c = layer.shape.c, heads = layer.shape.heads, d = c / heads;
  const auto q = affine(queries, layer.q_weight.value, layer.q_bias.value);
  const auto k = affine(keys, layer.k_weight.value, layer.k_bias.value);
  const auto v = affine(keys, layer.v_weight.value, layer.v_bias.value);
  const std::size_t nq = queries.dim(0), nk = keys.dim(0);
  Tensor<double> out = queries;
  for (std::size_t h = 0; h < heads; ++h)
    for (std::size_t i = 0; i < nq; ++i) {
      std::vector<long double> s(nk);
      long double mx = -INFINITY;
      for (std::size_t j = 0; j < nk; ++j) {
        long double dot = 0;
        for (std::size_t e = 0; e < d; ++e) dot += static_cast<long double>(q[i * c + h * d + e]) * k[j * c + h * d + e];
        s[j] = dot / std::sqrt(static_cast<long double>(d));
        mx = std::max(mx, s[j]);
      }
      long double z = 0;
      for (auto& x : s) z += (x = std::exp(x - mx));
      for (std::size_t e = 0; e < d; ++e) {
        long double acc = 0;
        for (std::size_t j = 0; j < nk; ++j) acc += s[j] / z * v[j * c + h * d + e];
        out[i * c + h * d + e] += static_cast<double>(acc);
      }
    }
  return out;
}

inline double max_abs_diff(const Tensor<double>& a, const Tensor<double>& b) {
  double m = 0;
  for (std::size_t i = 0; i < a.size(); ++i) m = std::max(m, std::abs(a[i] - b[i]));
  return m;
}

// Per window: sets of stable GT and stable predicted pixels, then intersect.
inline std::optional<double> vc(const MaskSequence& gt, const MaskSequence& pred, std::size_t n) {
  double total = 0;
  std::size_t used = 0;
  for (std::size_t i = 0; i + n <= gt.length(); ++i) {
    std::set<std::size_t> g, p;
    for (std::size_t px = 0; px < gt.h * gt.w; ++px) {
      std::set<std::int32_t> gl, pl;
      for (std::size_t f = i; f < i + n; ++f) {
        gl.insert(gt.frames[f][px]);
        pl.insert(pred.frames[f][px]);
      }
      if (gl.size() == 1 && *gl.begin() != gt.ignore) g.insert(px);
      if (pl.size() == 1) p.insert(px);
    }
    if (g.empty()) continue;
    std::size_t both = 0;
    for (auto px : g) both += p.count(px);
    total += static_cast<double>(both) / static_cast<double>(g.size());
    ++used;
  }
  if (used == 0) return std::nullopt;
  return total / static_cast<double>(used);
}

}  // namespace cffm::oracle
