#pragma once

// Streaming inference: every frame is encoded once and kept in a ring buffer
// long enough to serve the farthest reference offset.

#include <cstddef>
#include <deque>
#include <utility>
#include <vector>

#include "cffm/model.hpp"
#include "cffm/synth.hpp"

namespace cffm {

template <typename T>
class FeatureCache {
 public:
  explicit FeatureCache(std::size_t capacity);

  std::size_t capacity() const { return capacity_; }
  std::size_t size() const { return items_.size(); }

  /// Indices must arrive in increasing order; the oldest entry is evicted
  /// once the buffer is full.
  void put(std::size_t index, Var<T> features);

  /// nullptr when `index` is not cached.
  const Var<T>* find(std::size_t index) const;

  /// Smallest cached index; throws ContractError when empty.
  std::size_t earliest() const;

 private:
  std::size_t capacity_;
  std::deque<std::pair<std::size_t, Var<T>>> items_;
};

template <typename T>
struct StreamResult {
  std::vector<Tensor<T>> logits;  // per frame, [H x W x K]
  std::size_t encoder_calls = 0;
};

/// Processes the clip in order with one encoder call per frame. Offsets that
/// reach before the first frame use the earliest cached features.
template <typename T>
StreamResult<T> stream_segment(const Clip& clip, SegModel<T>& model);

/// Reference path for frame t: re-encodes every frame it needs from scratch.
template <typename T>
Tensor<T> recompute_segment(const Clip& clip, SegModel<T>& model, std::size_t t);

/// Argmax masks of streamed logits as a sequence aligned with clip.gt.
template <typename T>
MaskSequence predicted_masks(const StreamResult<T>& result, const MaskSequence& like);

}  // namespace cffm
