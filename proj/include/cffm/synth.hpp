#pragma once

// Synthetic clips: a static background split into horizontal bands plus
// rigid squares translating at a constant velocity. Ground truth is exact.

#include <cstddef>
#include <cstdint>
#include <vector>

#include <json.hpp>

#include "cffm/metrics.hpp"
#include "cffm/tensor.hpp"

namespace cffm {

struct SynthClipSpec {
  std::size_t frames = 12;
  std::size_t height = 48, width = 48;
  std::size_t classes = 4;
  std::size_t objects = 2;
  std::size_t object_size = 12;
  std::ptrdiff_t velocity_x = 1, velocity_y = 1;  // pixels per frame
  double noise = 0.1;
  std::uint64_t seed = 0;

  /// Background bands take labels [0, background_classes()), squares the rest.
  std::size_t background_classes() const { return classes >= 3 ? 2 : 1; }
  void validate() const;
};

struct Clip {
  std::vector<Tensor<float>> images;  // [H x W x 3], values around [0, 1]
  MaskSequence gt;

  std::size_t length() const { return images.size(); }
};

Clip gen_clip(const SynthClipSpec& spec);

/// `count` clips with seeds spec.seed, spec.seed + 1, ...
std::vector<Clip> gen_clips(const SynthClipSpec& spec, std::size_t count);

void to_json(nlohmann::json& j, const SynthClipSpec& s);
void from_json(const nlohmann::json& j, SynthClipSpec& s);

}  // namespace cffm
