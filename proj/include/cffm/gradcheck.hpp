#pragma once

// Finite-difference check of every parameter gradient of a small
// assembling + mining + head pipeline in 64-bit.

#include <cstddef>
#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include <json.hpp>

#include "cffm/autograd.hpp"
#include "cffm/cffa.hpp"

namespace cffm {

struct GradcheckConfig {
  std::size_t h = 8, w = 8, c = 8;
  std::size_t heads = 2;
  std::size_t layers = 2;
  std::size_t classes = 3;
  // s=4 with offsets {2,1}; m = 4 + 4 + 9 = 17
  ContextSchedule schedule{4, {{2, 8, 4}, {1, 4, 2}, {0, 3, 1}}};
  double aux_weight = 0.4;
  double eps = 1e-5;
  double tolerance = 1e-4;
  // Gradients smaller than this in magnitude are compared absolutely.
  double floor = 1e-6;
  std::uint64_t seed = 0;
  std::string only;  // check only parameters whose name contains this
  // Test hook: edits analytic gradients before comparison.
  std::function<void(std::vector<Parameter<double>*>&)> corrupt;
};

struct ParameterCheck {
  std::string name;
  std::size_t elements = 0;
  double max_rel_error = 0.0;
  double max_abs_error = 0.0;
  std::size_t worst_index = 0;
};

struct GradcheckReport {
  bool pass = false;
  double max_rel_error = 0.0;
  std::string worst_parameter;
  std::size_t checked = 0;
  std::vector<ParameterCheck> parameters;
};

/// Relative error used by the check: |a - n| / max(|a|, |n|, floor).
double relative_error(double analytic, double numeric, double floor);

GradcheckReport gradcheck(const GradcheckConfig& config);

void to_json(nlohmann::json& j, const GradcheckReport& r);
void from_json(const nlohmann::json& j, GradcheckConfig& c);

}  // namespace cffm
