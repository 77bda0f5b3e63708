#include "cffm/stream.hpp"

#include <string>

namespace cffm {

template <typename T>
FeatureCache<T>::FeatureCache(std::size_t capacity) : capacity_(capacity) {
  if (capacity == 0) throw ContractError("feature cache capacity must be >= 1");
}

template <typename T>
void FeatureCache<T>::put(std::size_t index, Var<T> features) {
  if (!items_.empty() && index <= items_.back().first) {
    throw ContractError("feature cache: index " + std::to_string(index) + " is not newer than " +
                        std::to_string(items_.back().first));
  }
  if (items_.size() == capacity_) items_.pop_front();
  items_.emplace_back(index, std::move(features));
}

template <typename T>
const Var<T>* FeatureCache<T>::find(std::size_t index) const {
  for (const auto& [i, f] : items_)
    if (i == index) return &f;
  return nullptr;
}

template <typename T>
std::size_t FeatureCache<T>::earliest() const {
  if (items_.empty()) throw ContractError("feature cache is empty");
  return items_.front().first;
}

template <typename T>
StreamResult<T> stream_segment(const Clip& clip, SegModel<T>& model) {
  const auto& offsets = model.config.offsets;
  const std::size_t k1 = offsets.empty() ? 0 : offsets.front();
  if (clip.length() < k1 + 1) {
    throw ContractError("stream_segment: clip of " + std::to_string(clip.length()) + " frames needs at least " +
                        std::to_string(k1 + 1));
  }
  NoGradGuard no_grad;
  const auto plan = model.plan(clip.gt.h, clip.gt.w);
  FeatureCache<T> cache(k1 + 1);
  StreamResult<T> out;
  const std::size_t calls_before = model.encoder_calls;

  for (std::size_t t = 0; t < clip.length(); ++t) {
    cache.put(t, model.encode(clip.images[t]));
    std::vector<FrameFeature<T>> frames{{0, *cache.find(t)}};
    for (auto k : offsets) {
      const Var<T>* f = t >= k ? cache.find(t - k) : nullptr;
      if (!f) f = cache.find(cache.earliest());
      frames.push_back({k, *f});
    }
    out.logits.push_back(model.predict(std::span<const FrameFeature<T>>(frames), plan).logits.value());
  }
  out.encoder_calls = model.encoder_calls - calls_before;
  if (out.encoder_calls != clip.length()) {
    throw ContractError("stream_segment: " + std::to_string(out.encoder_calls) + " encoder calls for " +
                        std::to_string(clip.length()) + " frames");
  }
  return out;
}

template <typename T>
Tensor<T> recompute_segment(const Clip& clip, SegModel<T>& model, std::size_t t) {
  if (t >= clip.length()) throw RangeError("recompute_segment: frame " + std::to_string(t) + " outside the clip");
  NoGradGuard no_grad;
  const auto plan = model.plan(clip.gt.h, clip.gt.w);
  std::vector<FrameFeature<T>> frames{{0, model.encode(clip.images[t])}};
  for (auto k : model.config.offsets) frames.push_back({k, model.encode(clip.images[source_frame(t, k)])});
  return model.predict(std::span<const FrameFeature<T>>(frames), plan).logits.value();
}

template <typename T>
MaskSequence predicted_masks(const StreamResult<T>& result, const MaskSequence& like) {
  MaskSequence out;
  out.h = like.h;
  out.w = like.w;
  out.classes = like.classes;
  out.ignore = like.ignore;
  for (const auto& l : result.logits) out.frames.push_back(argmax_labels(l));
  return out;
}

#define CFFM_INSTANTIATE(T)                                                          \
  template class FeatureCache<T>;                                                    \
  template StreamResult<T> stream_segment<T>(const Clip&, SegModel<T>&);             \
  template Tensor<T> recompute_segment<T>(const Clip&, SegModel<T>&, std::size_t);   \
  template MaskSequence predicted_masks<T>(const StreamResult<T>&, const MaskSequence&);

CFFM_INSTANTIATE(float)
CFFM_INSTANTIATE(double)
#undef CFFM_INSTANTIATE

}  // namespace cffm
