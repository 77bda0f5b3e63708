#include "cffm/cfm.hpp"

#include <cmath>

namespace cffm {

void AttentionShape::validate() const {
  if (c == 0 || s == 0 || m == 0 || heads == 0) throw ContractError("attention shape extents must be >= 1");
  if (c % heads != 0) {
    throw ContractError("channels " + std::to_string(c) + " not divisible by " + std::to_string(heads) + " heads");
  }
}

namespace {

template <typename T>
Tensor<T> trunc_normal(Shape shape, Rng& rng, double sigma = 0.02) {
  Tensor<T> t(std::move(shape));
  for (auto& v : t.data()) v = static_cast<T>(rng.truncated_normal(sigma));
  return t;
}

template <typename T>
struct BoundLayer {
  const AttentionShape* shape;
  Var<T> q_w, q_b, k_w, k_b, v_w, v_b;
  std::vector<Var<T>> bias;  // per head [s*s x m]
};

template <typename T>
BoundLayer<T> bind(AttentionLayer<T>& layer) {
  BoundLayer<T> b{&layer.shape,
                  Var<T>::param(layer.q_weight), Var<T>::param(layer.q_bias),
                  Var<T>::param(layer.k_weight), Var<T>::param(layer.k_bias),
                  Var<T>::param(layer.v_weight), Var<T>::param(layer.v_bias),
                  {}};
  auto table = Var<T>::param(layer.position_bias);
  for (std::size_t h = 0; h < layer.shape.heads; ++h) b.bias.push_back(take(table, h));
  return b;
}

void check_operands(const AttentionShape& sh, const Shape& window, const Shape& context) {
  const Shape want_w{sh.s * sh.s, sh.c}, want_c{sh.m, sh.c};
  if (window != want_w || context != want_c) {
    throw DimensionError("attention operands " + shape_str(window) + " / " + shape_str(context) +
                         " do not match layer (expected " + shape_str(want_w) + " / " + shape_str(want_c) + ")");
  }
}

template <typename T>
QKV<T> project(const BoundLayer<T>& b, const Var<T>& window, const Var<T>& context) {
  check_operands(*b.shape, window.shape(), context.shape());
  return {linear(window, b.q_w, b.q_b), linear(context, b.k_w, b.k_b), linear(context, b.v_w, b.v_b)};
}

template <typename T>
Var<T> update(const BoundLayer<T>& b, const Var<T>& window, const Var<T>& context, AttentionMaps<T>* maps) {
  const auto& sh = *b.shape;
  auto qkv = project(b, window, context);
  const std::size_t d = sh.head_dim();
  const T inv_scale = T(1) / std::sqrt(static_cast<T>(d));
  std::vector<Var<T>> outs;
  outs.reserve(sh.heads);
  for (std::size_t h = 0; h < sh.heads; ++h) {
    Var<T> qh = qkv.q, kh = qkv.k, vh = qkv.v;
    if (sh.heads > 1) {
      qh = slice_cols(qkv.q, h * d, (h + 1) * d);
      kh = slice_cols(qkv.k, h * d, (h + 1) * d);
      vh = slice_cols(qkv.v, h * d, (h + 1) * d);
    }
    auto scores = add(scale(matmul(qh, transpose(kh)), inv_scale), b.bias[h]);
    auto attn = softmax_rows(scores);
    if (maps) maps->push_back(attn.value());
    outs.push_back(matmul(attn, vh));
  }
  auto merged = sh.heads == 1 ? outs.front() : concat_cols(std::span<const Var<T>>(outs));
  return add(merged, window);
}

}  // namespace

template <typename T>
AttentionLayer<T> AttentionLayer<T>::init(const AttentionShape& shape, Rng& rng, const std::string& name) {
  shape.validate();
  const std::size_t c = shape.c;
  AttentionLayer layer;
  layer.shape = shape;
  layer.q_weight = {name + ".q.weight", trunc_normal<T>({c, c}, rng)};
  layer.q_bias = {name + ".q.bias", Tensor<T>(Shape{c})};
  layer.k_weight = {name + ".k.weight", trunc_normal<T>({c, c}, rng)};
  layer.k_bias = {name + ".k.bias", Tensor<T>(Shape{c})};
  layer.v_weight = {name + ".v.weight", trunc_normal<T>({c, c}, rng)};
  layer.v_bias = {name + ".v.bias", Tensor<T>(Shape{c})};
  layer.position_bias = {name + ".position_bias", Tensor<T>(Shape{shape.heads, shape.s * shape.s, shape.m})};
  return layer;
}

template <typename T>
std::vector<Parameter<T>*> AttentionLayer<T>::parameters() {
  return {&q_weight, &q_bias, &k_weight, &k_bias, &v_weight, &v_bias, &position_bias};
}

template <typename T>
CFMStack<T> CFMStack<T>::init(const AttentionShape& shape, std::size_t depth, std::size_t classes, Rng& rng) {
  if (classes == 0) throw ContractError("class count must be >= 1");
  shape.validate();
  CFMStack st;
  st.attention = shape;
  for (std::size_t n = 0; n < depth; ++n) {
    st.layers.push_back(AttentionLayer<T>::init(shape, rng, "cfm.layer" + std::to_string(n)));
  }
  const std::size_t c = shape.c;
  st.classes = classes;
  st.head_hidden_weight = {"head.hidden.weight", trunc_normal<T>({2 * c, c}, rng)};
  st.head_hidden_bias = {"head.hidden.bias", Tensor<T>(Shape{c})};
  st.classifier_weight = {"head.classifier.weight", trunc_normal<T>({c, classes}, rng)};
  st.classifier_bias = {"head.classifier.bias", Tensor<T>(Shape{classes})};
  st.aux_weight = {"aux.weight", trunc_normal<T>({c, classes}, rng)};
  st.aux_bias = {"aux.bias", Tensor<T>(Shape{classes})};
  return st;
}

template <typename T>
std::vector<Parameter<T>*> CFMStack<T>::parameters() {
  std::vector<Parameter<T>*> out;
  for (auto& l : layers)
    for (auto* p : l.parameters()) out.push_back(p);
  for (auto* p : {&head_hidden_weight, &head_hidden_bias, &classifier_weight, &classifier_bias, &aux_weight, &aux_bias})
    out.push_back(p);
  return out;
}

template <typename T>
QKV<T> project_qkv(AttentionLayer<T>& layer, const Var<T>& window, const Var<T>& context) {
  return project(bind(layer), window, context);
}

template <typename T>
Var<T> attention_update(AttentionLayer<T>& layer, const Var<T>& window, const Var<T>& context,
                        AttentionMaps<T>* maps) {
  return update(bind(layer), window, context, maps);
}

template <typename T>
WindowGrid<T> mine(CFMStack<T>& stack, const WindowGrid<T>& target, const ContextTokenSet<T>& context,
                   std::vector<std::vector<AttentionMaps<T>>>* maps) {
  if (context.tokens.size() != target.windows.size()) {
    throw ContractError("mine: " + std::to_string(context.tokens.size()) + " context sets for " +
                        std::to_string(target.windows.size()) + " windows");
  }
  const auto& sh = stack.attention;
  if (sh.s != target.s || sh.c != target.c || sh.m != context.m) {
    throw ContractError("mine: stack expects s=" + std::to_string(sh.s) + " c=" + std::to_string(sh.c) +
                        " m=" + std::to_string(sh.m) + ", got s=" + std::to_string(target.s) +
                        " c=" + std::to_string(target.c) + " m=" + std::to_string(context.m));
  }
  WindowGrid<T> current = target;
  for (auto& layer : stack.layers) {
    const auto bound = bind(layer);
    std::vector<AttentionMaps<T>> layer_maps;
    WindowGrid<T> next = current;
    for (std::size_t i = 0; i < current.windows.size(); ++i) {
      AttentionMaps<T> window_maps;
      next.windows[i] = update(bound, current.windows[i], context.tokens[i], maps ? &window_maps : nullptr);
      if (maps) layer_maps.push_back(std::move(window_maps));
    }
    if (maps) maps->push_back(std::move(layer_maps));
    current = std::move(next);
  }
  return current;
}

template <typename T>
Var<T> segment_head(CFMStack<T>& stack, const Var<T>& mined, const Var<T>& raw) {
  if (mined.shape() != raw.shape() || mined.shape().size() != 3) {
    throw DimensionError("segment_head: feature maps " + shape_str(mined.shape()) + " and " +
                         shape_str(raw.shape()) + " must match");
  }
  const std::size_t h = raw.shape()[0], w = raw.shape()[1], c = raw.shape()[2];
  const std::vector<Var<T>> parts{reshape(mined, Shape{h * w, c}), reshape(raw, Shape{h * w, c})};
  auto joined = concat_cols(std::span<const Var<T>>(parts));
  auto hidden = gelu(linear(joined, Var<T>::param(stack.head_hidden_weight), Var<T>::param(stack.head_hidden_bias)));
  auto logits = linear(hidden, Var<T>::param(stack.classifier_weight), Var<T>::param(stack.classifier_bias));
  return reshape(logits, Shape{h, w, stack.classes});
}

template <typename T>
Var<T> aux_head(CFMStack<T>& stack, const Var<T>& raw) {
  return linear(raw, Var<T>::param(stack.aux_weight), Var<T>::param(stack.aux_bias));
}

template <typename T>
Var<T> segmentation_loss(const Var<T>& logits, std::span<const std::int32_t> labels, const Var<T>& aux_logits,
                         T aux_weight, std::int32_t ignore_label) {
  auto main = cross_entropy(logits, labels, ignore_label);
  if (aux_weight == T(0)) return main;
  return add(main, scale(cross_entropy(aux_logits, labels, ignore_label), aux_weight));
}

namespace {

template <typename T>
Tensor<T> columns(const Tensor<T>& x, std::size_t begin, std::size_t width) {
  const std::size_t rows = x.rows(), cols = x.cols();
  Tensor<T> out(Shape{rows, width});
  for (std::size_t r = 0; r < rows; ++r)
    std::copy_n(x.data().data() + r * cols + begin, width, out.data().data() + r * width);
  return out;
}

}  // namespace

template <typename T>
Tensor<T> full_attention_update(const AttentionLayer<T>& layer, const Tensor<T>& tokens, std::size_t block) {
  const auto& sh = layer.shape;
  if (tokens.rank() != 2 || tokens.dim(1) != sh.c) {
    throw DimensionError("full_attention_update: tokens " + shape_str(tokens.shape()) + " for c=" + std::to_string(sh.c));
  }
  const std::size_t n = tokens.dim(0), c = sh.c, d = sh.head_dim();
  block = std::max<std::size_t>(1, std::min(block, n));
  const auto q = linear(tokens, layer.q_weight.value, layer.q_bias.value);
  const auto k = linear(tokens, layer.k_weight.value, layer.k_bias.value);
  const auto v = linear(tokens, layer.v_weight.value, layer.v_bias.value);
  const T inv_scale = T(1) / std::sqrt(static_cast<T>(d));
  Tensor<T> out = tokens;
  std::vector<T> scores(block * n), attn(block * n), ob(block * d);
  for (std::size_t h = 0; h < sh.heads; ++h) {
    const auto qh = columns(q, h * d, d);
    const auto kt = transpose(columns(k, h * d, d));
    const auto vh = columns(v, h * d, d);
    for (std::size_t r0 = 0; r0 < n; r0 += block) {
      const std::size_t rows = std::min(block, n - r0);
      const std::span<const T> qb(qh.data().data() + r0 * d, rows * d);
      kernels::gemm<T>(qb, kt.data(), std::span<T>(scores.data(), rows * n), rows, d, n);
      instrumentation::record(static_cast<std::uint64_t>(rows) * d * n);
      for (std::size_t i = 0; i < rows * n; ++i) scores[i] *= inv_scale;
      kernels::softmax_rows(scores.data(), attn.data(), rows, n);
      kernels::gemm<T>(std::span<const T>(attn.data(), rows * n), vh.data(), std::span<T>(ob.data(), rows * d), rows,
                       n, d);
      instrumentation::record(static_cast<std::uint64_t>(rows) * n * d);
      for (std::size_t r = 0; r < rows; ++r)
        for (std::size_t j = 0; j < d; ++j) out[(r0 + r) * c + h * d + j] += ob[r * d + j];
    }
  }
  return out;
}

#define CFFM_INSTANTIATE(T)                                                                                 \
  template struct AttentionLayer<T>;                                                                        \
  template struct CFMStack<T>;                                                                              \
  template QKV<T> project_qkv(AttentionLayer<T>&, const Var<T>&, const Var<T>&);                            \
  template Var<T> attention_update(AttentionLayer<T>&, const Var<T>&, const Var<T>&, AttentionMaps<T>*);    \
  template WindowGrid<T> mine(CFMStack<T>&, const WindowGrid<T>&, const ContextTokenSet<T>&,                \
                              std::vector<std::vector<AttentionMaps<T>>>*);                                 \
  template Var<T> segment_head(CFMStack<T>&, const Var<T>&, const Var<T>&);                                 \
  template Var<T> aux_head(CFMStack<T>&, const Var<T>&);                                                    \
  template Var<T> segmentation_loss(const Var<T>&, std::span<const std::int32_t>, const Var<T>&, T,         \
                                    std::int32_t);                                                          \
  template Tensor<T> full_attention_update(const AttentionLayer<T>&, const Tensor<T>&, std::size_t);

CFFM_INSTANTIATE(float)
CFFM_INSTANTIATE(double)

#undef CFFM_INSTANTIATE

}  // namespace cffm
