#include "cffm/metrics.hpp"

#include <string>

namespace cffm {

void MaskSequence::validate() const {
  for (const auto& f : frames) {
    if (f.size() != h * w) throw ContractError("mask frame size does not match " + std::to_string(h) + "x" + std::to_string(w));
    for (auto v : f) {
      if (v != ignore && (v < 0 || static_cast<std::size_t>(v) >= classes)) {
        throw ContractError("mask label " + std::to_string(v) + " outside [0, " + std::to_string(classes) + ")");
      }
    }
  }
}

void MaskSequence::push(const Tensor<std::uint8_t>& mask) {
  if (mask.rank() != 2) throw DimensionError("mask must be HxW, got " + shape_str(mask.shape()));
  if (frames.empty()) {
    h = mask.dim(0);
    w = mask.dim(1);
  } else if (mask.dim(0) != h || mask.dim(1) != w) {
    throw DimensionError("mask " + shape_str(mask.shape()) + " differs from the sequence extents");
  }
  frames.emplace_back(mask.data().begin(), mask.data().end());
}

Tensor<std::uint8_t> MaskSequence::frame_tensor(std::size_t i) const {
  const auto& f = frames.at(i);
  std::vector<std::uint8_t> data(f.size());
  for (std::size_t k = 0; k < f.size(); ++k) data[k] = static_cast<std::uint8_t>(f[k]);
  return Tensor<std::uint8_t>(Shape{h, w}, std::move(data));
}

VideoConsistency vc_n(const MaskSequence& gt, const MaskSequence& pred, std::size_t n, bool strict) {
  if (n == 0) throw ContractError("vc_n: n must be >= 1");
  if (gt.length() < n) {
    throw ContractError("vc_n: clip of " + std::to_string(gt.length()) + " frames is shorter than n=" + std::to_string(n));
  }
  if (pred.length() != gt.length() || pred.h != gt.h || pred.w != gt.w) {
    throw ContractError("vc_n: prediction and ground truth are not aligned");
  }
  const std::size_t pixels = gt.h * gt.w;
  VideoConsistency out;
  out.windows_total = gt.length() - n + 1;
  double total = 0.0;
  for (std::size_t start = 0; start + n <= gt.length(); ++start) {
    std::uint64_t stable_gt = 0, both = 0;
    for (std::size_t px = 0; px < pixels; ++px) {
      const auto g0 = gt.frames[start][px];
      const auto p0 = pred.frames[start][px];
      bool g_ok = g0 != gt.ignore;
      bool p_ok = !strict || p0 == g0;
      for (std::size_t f = start + 1; f < start + n && g_ok; ++f) {
        g_ok = g_ok && gt.frames[f][px] == g0;
        p_ok = p_ok && pred.frames[f][px] == p0;
      }
      if (!g_ok) continue;
      ++stable_gt;
      if (p_ok) ++both;
    }
    if (stable_gt == 0) continue;
    total += static_cast<double>(both) / static_cast<double>(stable_gt);
    ++out.windows_used;
  }
  if (out.windows_used > 0) out.value = total / static_cast<double>(out.windows_used);
  return out;
}

double mvc(std::span<const VideoConsistency> per_video) {
  double total = 0.0;
  std::size_t count = 0;
  for (const auto& v : per_video) {
    if (!v.value) continue;
    total += *v.value;
    ++count;
  }
  if (count == 0) throw ContractError("mvc: no video has a defined VC value");
  return total / static_cast<double>(count);
}

IoUReport iou_report(std::span<const MaskSequence> gt, std::span<const MaskSequence> pred, std::size_t classes) {
  if (gt.size() != pred.size()) throw ContractError("iou_report: video counts differ");
  IoUReport r;
  r.true_positive.assign(classes, 0);
  r.false_positive.assign(classes, 0);
  r.false_negative.assign(classes, 0);
  r.gt_pixels.assign(classes, 0);
  for (std::size_t v = 0; v < gt.size(); ++v) {
    const auto& g = gt[v];
    const auto& p = pred[v];
    if (g.length() != p.length() || g.h != p.h || g.w != p.w) throw ContractError("iou_report: frames not aligned");
    for (std::size_t f = 0; f < g.length(); ++f) {
      for (std::size_t px = 0; px < g.frames[f].size(); ++px) {
        const auto gl = g.frames[f][px];
        if (gl == g.ignore) continue;
        const auto pl = p.frames[f][px];
        if (gl < 0 || static_cast<std::size_t>(gl) >= classes || pl < 0 || static_cast<std::size_t>(pl) >= classes) {
          throw ContractError("iou_report: label outside [0, " + std::to_string(classes) + ")");
        }
        ++r.pixels;
        ++r.gt_pixels[gl];
        if (gl == pl) {
          ++r.true_positive[gl];
        } else {
          ++r.false_negative[gl];
          ++r.false_positive[pl];
        }
      }
    }
  }
  r.class_iou.resize(classes);
  double sum = 0.0;
  std::size_t present = 0;
  for (std::size_t k = 0; k < classes; ++k) {
    const auto uni = r.true_positive[k] + r.false_positive[k] + r.false_negative[k];
    if (uni == 0) continue;
    const double iou = static_cast<double>(r.true_positive[k]) / static_cast<double>(uni);
    r.class_iou[k] = iou;
    if (r.gt_pixels[k] > 0) {
      sum += iou;
      ++present;
      r.weighted_iou += iou * static_cast<double>(r.gt_pixels[k]);
    }
  }
  r.miou = present ? sum / static_cast<double>(present) : 0.0;
  if (r.pixels > 0) r.weighted_iou /= static_cast<double>(r.pixels);
  return r;
}

void to_json(nlohmann::json& j, const VideoConsistency& v) {
  j = {{"windows_used", v.windows_used}, {"windows_total", v.windows_total}};
  j["value"] = v.value ? nlohmann::json(*v.value) : nlohmann::json(nullptr);
}

void to_json(nlohmann::json& j, const IoUReport& r) {
  nlohmann::json per_class = nlohmann::json::array();
  for (const auto& v : r.class_iou) per_class.push_back(v ? nlohmann::json(*v) : nlohmann::json(nullptr));
  j = {{"class_iou", per_class}, {"miou", r.miou}, {"weighted_iou", r.weighted_iou}, {"pixels", r.pixels},
       {"gt_pixels", r.gt_pixels}, {"true_positive", r.true_positive},
       {"false_positive", r.false_positive}, {"false_negative", r.false_negative}};
}

void to_json(nlohmann::json& j, const MetricReport& r) {
  j = nlohmann::json::object();
  for (const auto& [n, videos] : r.vc) j["vc"][std::to_string(n)] = videos;
  for (const auto& [n, v] : r.mvc) j["mvc"][std::to_string(n)] = v ? nlohmann::json(*v) : nlohmann::json(nullptr);
  if (r.iou) j["iou"] = *r.iou;
}

}  // namespace cffm
