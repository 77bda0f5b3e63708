#pragma once

// Toy segmentation model: patch-embedding encoder, per-entry pooling
// projections, the attention stack and its heads, plus the padding plan
// that makes arbitrary image extents fit the schedule.

#include <cstddef>
#include <span>
#include <vector>

#include "cffm/cfm.hpp"
#include "cffm/config.hpp"

namespace cffm {

template <typename T>
struct ToyEncoder {
  std::size_t patch = 4;
  std::size_t channels = 0;
  Parameter<T> embed_weight, embed_bias;  // 3*patch^2 -> c
  Parameter<T> mix_weight, mix_bias;      // 9c -> c (3x3 neighbourhood)

  static ToyEncoder init(std::size_t patch, std::size_t channels, Rng& rng);
  std::vector<Parameter<T>*> parameters();
};

/// [H x W x 3] image -> [H/patch x W/patch x c]:
///   E = linear(patches), F = E + GELU(linear(3x3 neighbourhood of E))
/// with zero rows outside the map.
template <typename T>
Var<T> toy_encode(ToyEncoder<T>& enc, const Var<T>& image);

/// Symmetric zero padding of an h x w map up to multiples of `multiple`.
struct PadPlan {
  std::size_t h = 0, w = 0;
  std::size_t padded_h = 0, padded_w = 0;
  std::size_t top = 0, left = 0;

  static PadPlan make(std::size_t h, std::size_t w, std::size_t multiple);
  bool trivial() const { return padded_h == h && padded_w == w; }
};

/// [h x w x C] -> [padded_h x padded_w x C] with zeros around.
template <typename T>
Var<T> pad(const Var<T>& x, const PadPlan& plan);

/// Inverse of pad: keeps the original h x w region.
template <typename T>
Var<T> crop(const Var<T>& x, const PadPlan& plan);

template <typename T>
struct SegOutput {
  Var<T> logits;  // [H x W x K] at image resolution
  Var<T> aux;     // same shape; empty unless requested
};

template <typename T>
struct SegModel {
  RunConfig config;
  ToyEncoder<T> encoder;
  std::vector<PoolProjection<T>> pool;  // one per schedule entry
  CFMStack<T> stack;
  std::size_t encoder_calls = 0;

  static SegModel init(const RunConfig& config);

  std::vector<Parameter<T>*> parameters();

  /// Image extents are padded to multiples of patch * schedule alignment.
  PadPlan plan(std::size_t image_h, std::size_t image_w) const;

  /// Pads, encodes and counts the call.
  Var<T> encode(const Tensor<float>& image);

  /// `frames` holds one feature map per schedule offset (offset 0 = target),
  /// all produced by encode() under the same plan.
  SegOutput<T> predict(std::span<const FrameFeature<T>> frames, const PadPlan& plan, bool with_aux = false);
};

/// Frame supplying offset k for target t: t - k, clamped to the first frame
/// during warm-up.
inline std::size_t source_frame(std::size_t t, std::size_t k) { return t >= k ? t - k : 0; }

/// Per-pixel argmax over the last axis of [H x W x K] logits.
template <typename T>
std::vector<std::int32_t> argmax_labels(const Tensor<T>& logits);

}  // namespace cffm
