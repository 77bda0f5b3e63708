#pragma once

// Wall-clock comparison of CFFM mining against joint full self-attention
// over every pixel of every frame, with the same c, H and N.

#include <cstddef>
#include <cstdint>
#include <vector>

#include <json.hpp>

#include "cffm/cost.hpp"

namespace cffm {

struct BenchConfig {
  std::size_t h = 64, w = 64, c = 32;
  std::size_t layers = 2;
  std::size_t heads = 2;
  std::size_t reps = 10;
  std::size_t block = 64;  // query rows per full-attention block
  bool baseline = true;
  std::uint64_t seed = 0;
  ContextSchedule schedule = bench_schedule();

  /// s=8, offsets {9,6,3} (four frames), r={32,24,16,8}, p={8,4,2,1}, m=180.
  static ContextSchedule bench_schedule();
};

struct BenchReport {
  CostModel model;
  bool assembled = true;  // false: kernels do not divide the features, context drawn at random
  std::vector<double> cffm_seconds, baseline_seconds;
  double cffm_median = 0.0, baseline_median = 0.0;
  CostReport cffm, baseline;
};

double median(std::vector<double> values);

BenchReport bench(const BenchConfig& config);

void to_json(nlohmann::json& j, const BenchReport& r);
void from_json(const nlohmann::json& j, BenchConfig& c);

}  // namespace cffm
