#pragma once

#include <cstddef>
#include <cstdint>
#include <map>
#include <optional>
#include <span>
#include <vector>

#include <json.hpp>

#include "cffm/tensor.hpp"

namespace cffm {

/// Ordered label maps of one clip. Labels lie in [0, classes) or equal the
/// ignore label.
struct MaskSequence {
  std::size_t h = 0, w = 0;
  std::size_t classes = 0;
  std::int32_t ignore = 255;
  std::vector<std::vector<std::int32_t>> frames;

  std::size_t length() const { return frames.size(); }
  void validate() const;
  void push(const Tensor<std::uint8_t>& mask);
  Tensor<std::uint8_t> frame_tensor(std::size_t i) const;
};

struct VideoConsistency {
  std::optional<double> value;     // absent when no window has a stable GT pixel
  std::size_t windows_used = 0;    // windows with |G| > 0
  std::size_t windows_total = 0;   // C - n + 1
};

/// VC_n over all windows of n consecutive frames: |G ∩ P| / |G| averaged over
/// windows with non-empty G. G holds pixels whose ground truth keeps one
/// label for all n frames (never the ignore label), P pixels whose
/// prediction keeps one label. With `strict`, P additionally requires the
/// predicted label to equal the ground truth label.
VideoConsistency vc_n(const MaskSequence& gt, const MaskSequence& pred, std::size_t n, bool strict = false);

/// Unweighted mean of the defined per-video VC_n values.
double mvc(std::span<const VideoConsistency> per_video);

struct IoUReport {
  std::vector<std::uint64_t> true_positive, false_positive, false_negative, gt_pixels;
  std::vector<std::optional<double>> class_iou;  // absent when the class appears nowhere
  double miou = 0.0;          // over classes present in ground truth
  double weighted_iou = 0.0;  // ground-truth share weighted
  std::uint64_t pixels = 0;   // non-ignored pixels counted
};

/// Confusion counts over every pixel of every frame; ignore pixels skipped.
IoUReport iou_report(std::span<const MaskSequence> gt, std::span<const MaskSequence> pred, std::size_t classes);

struct MetricReport {
  std::map<std::size_t, std::vector<VideoConsistency>> vc;  // n -> per video
  std::map<std::size_t, std::optional<double>> mvc;         // n -> mean
  std::optional<IoUReport> iou;
};

void to_json(nlohmann::json& j, const VideoConsistency& v);
void to_json(nlohmann::json& j, const IoUReport& r);
void to_json(nlohmann::json& j, const MetricReport& r);

}  // namespace cffm
