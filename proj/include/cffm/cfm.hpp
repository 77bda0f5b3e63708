#pragma once

// Cross-frame feature mining: stacked multi-head non-self attention from
// target windows (queries) to fixed context tokens (keys/values), followed by
// the per-pixel segmentation head.

#include <cstddef>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "cffm/autograd.hpp"
#include "cffm/cffa.hpp"
#include "cffm/rng.hpp"

namespace cffm {

struct AttentionShape {
  std::size_t c = 0;      // channels
  std::size_t s = 0;      // window side
  std::size_t m = 0;      // context tokens per window
  std::size_t heads = 1;  // c % heads == 0

  std::size_t head_dim() const { return c / heads; }
  void validate() const;
  friend bool operator==(const AttentionShape&, const AttentionShape&) = default;
};

template <typename T>
struct AttentionLayer {
  AttentionShape shape;
  Parameter<T> q_weight, q_bias;
  Parameter<T> k_weight, k_bias;
  Parameter<T> v_weight, v_bias;
  Parameter<T> position_bias;  // [heads x s*s x m], shared by all windows

  /// Projection weights ~ truncated normal(0.02), biases and position bias 0.
  static AttentionLayer init(const AttentionShape& shape, Rng& rng, const std::string& name);

  std::vector<Parameter<T>*> parameters();
};

template <typename T>
struct CFMStack {
  AttentionShape attention;
  std::vector<AttentionLayer<T>> layers;
  std::size_t classes = 0;
  Parameter<T> head_hidden_weight, head_hidden_bias;  // 2c -> c
  Parameter<T> classifier_weight, classifier_bias;    // c -> K
  Parameter<T> aux_weight, aux_bias;                  // c -> K on the raw features

  static CFMStack init(const AttentionShape& shape, std::size_t depth, std::size_t classes, Rng& rng);

  std::size_t depth() const { return layers.size(); }
  std::vector<Parameter<T>*> parameters();
};

template <typename T>
struct QKV {
  Var<T> q, k, v;
};

/// Attention probabilities of one call, one [s*s x m] tensor per head.
template <typename T>
using AttentionMaps = std::vector<Tensor<T>>;

template <typename T>
QKV<T> project_qkv(AttentionLayer<T>& layer, const Var<T>& window, const Var<T>& context);

/// One non-self attention step with residual:
///   out = concat_h softmax(Q_h K_h^T / sqrt(c/H) + B_h) V_h + window
template <typename T>
Var<T> attention_update(AttentionLayer<T>& layer, const Var<T>& window, const Var<T>& context,
                        AttentionMaps<T>* maps = nullptr);

/// Runs every layer over every window. Context tokens are read-only and
/// reused by all layers; `maps` (if given) receives [layer][window][head].
template <typename T>
WindowGrid<T> mine(CFMStack<T>& stack, const WindowGrid<T>& target, const ContextTokenSet<T>& context,
                   std::vector<std::vector<AttentionMaps<T>>>* maps = nullptr);

/// [h x w x c] mined and raw features -> [h x w x K] logits via
/// linear(2c->c), GELU, linear(c->K).
template <typename T>
Var<T> segment_head(CFMStack<T>& stack, const Var<T>& mined, const Var<T>& raw);

/// Single linear c->K on the raw target features.
template <typename T>
Var<T> aux_head(CFMStack<T>& stack, const Var<T>& raw);

inline constexpr std::int32_t kIgnoreLabel = 255;

/// Mean CE on logits plus aux_weight * mean CE on aux logits. Both logit maps
/// must have one row per label. With aux_weight == 0 the aux term is skipped.
template <typename T>
Var<T> segmentation_loss(const Var<T>& logits, std::span<const std::int32_t> labels, const Var<T>& aux_logits,
                         T aux_weight, std::int32_t ignore_label = kIgnoreLabel);

/// Joint self-attention over all rows of `tokens` ([n x c]) with the layer's
/// q/k/v projections and no position bias; rows are processed in blocks of
/// `block` queries so the score matrix never exceeds block x n.
template <typename T>
Tensor<T> full_attention_update(const AttentionLayer<T>& layer, const Tensor<T>& tokens,
                                std::size_t block = 256);

}  // namespace cffm
