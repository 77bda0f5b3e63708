#pragma once

// Exact scalar-multiply accounting for CFFM mining and for joint full
// self-attention over every pixel of every frame. Only matmul-family work is
// counted (projections, scores, value aggregation); softmax, bias adds and
// residuals are free.

#include <cstdint>
#include <optional>
#include <string>

#include <json.hpp>

#include "cffm/cffa.hpp"

namespace cffm {

struct CostModel {
  std::uint64_t h = 1, w = 1, c = 1;
  std::uint64_t l = 0;  // reference frames
  std::uint64_t m = 1;  // context tokens per window
  std::uint64_t layers = 1;
  std::uint64_t heads = 1;
  std::uint64_t s = 1;

  /// l is the number of distinct reference offsets, m the schedule's budget.
  static CostModel from_schedule(const ContextSchedule& schedule, std::uint64_t h, std::uint64_t w,
                                 std::uint64_t c, std::uint64_t layers, std::uint64_t heads);

  void validate() const;
  std::uint64_t pixels() const { return h * w; }
  std::uint64_t windows() const { return (h / s) * (w / s); }
  std::uint64_t joint_tokens() const { return (l + 1) * pixels(); }
};

struct MultiplyBreakdown {
  std::uint64_t projections = 0;
  std::uint64_t scores = 0;
  std::uint64_t aggregation = 0;
  std::uint64_t total() const { return projections + scores + aggregation; }
};

struct CostReport {
  std::string method;                  // "cffm" or "full_attention"
  std::uint64_t keys_per_query = 0;    // m, or (l+1)hw
  std::uint64_t score_pairs = 0;       // query-key pairs per layer
  MultiplyBreakdown per_layer;
  std::uint64_t analytic_multiplies = 0;  // all layers
  std::uint64_t asymptotic_terms = 0;     // leading O-terms evaluated, all layers
  std::optional<std::uint64_t> measured_multiplies;

  std::uint64_t baseline_pairs = 0;
  std::uint64_t baseline_multiplies = 0;
  std::uint64_t joint_term = 0;  // (l+1)^2 hw, the quantity m is compared against
  double pair_ratio = 0.0;      // baseline / this
  double multiply_ratio = 0.0;  // baseline / this

  bool measured_matches() const { return measured_multiplies && *measured_multiplies == analytic_multiplies; }
};

/// Per layer: Q on hw pixels plus K and V on m tokens for each of hw/s^2
/// windows (hw + 2m*hw/s^2) c^2, scores hw*m*c, aggregation hw*m*c.
CostReport cffm_cost(const CostModel& model);

/// Joint self-attention over n = (l+1)hw tokens: pairs n^2, multiplies
/// 2 n^2 c + 3 n c^2 per layer.
CostReport baseline_cost(const CostModel& model);

/// Multiplies of the pooling projections that build the context tokens:
/// hw c^2 per schedule entry.
std::uint64_t assembly_multiplies(const ContextSchedule& schedule, std::uint64_t h, std::uint64_t w,
                                  std::uint64_t c);

struct MeasureOptions {
  bool baseline = false;
  std::uint64_t seed = 0;
  std::size_t block = 256;  // query rows per full-attention block
};

struct MeasuredCost {
  CostReport cffm;
  std::optional<CostReport> baseline;
  /// Present when the schedule's kernels divide the features, so that real
  /// context assembly could run and be counted.
  std::optional<std::uint64_t> measured_assembly;
  std::uint64_t analytic_assembly = 0;
};

/// Runs one instrumented forward at the model's shape and reads the multiply
/// counter. Tensor values are random; counts only depend on shapes. If the
/// schedule cannot pool the features without padding, context tokens of the
/// right count are drawn at random instead of assembled.
MeasuredCost measured_cost(const CostModel& model, const ContextSchedule& schedule, const MeasureOptions& options);

void to_json(nlohmann::json& j, const CostModel& m);
void from_json(const nlohmann::json& j, CostModel& m);
void to_json(nlohmann::json& j, const CostReport& r);
void to_json(nlohmann::json& j, const MeasuredCost& r);

}  // namespace cffm
