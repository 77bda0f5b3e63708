#pragma once

// Run configuration shared by the CLI subcommands, with JSON round-trip.

#include <cstddef>
#include <cstdint>
#include <string>
#include <vector>

#include <json.hpp>

#include "cffm/cffa.hpp"
#include "cffm/synth.hpp"

namespace cffm {

struct OptimizerConfig {
  double lr = 6e-4;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

enum class Precision { f32, f64 };

struct TrainSettings {
  std::size_t iterations = 300;
  std::size_t batch = 4;
  std::size_t clips = 8;
  std::size_t eval_every = 50;  // 0: evaluate only at the end
};

struct RunConfig {
  ContextSchedule schedule = ContextSchedule::defaults();
  std::vector<std::size_t> offsets{9, 6, 3};  // must equal schedule.reference_offsets()
  std::size_t layers = 2;                     // N
  std::size_t heads = 2;                      // H
  std::size_t channels = 32;                  // c
  std::size_t classes = 4;                    // K
  std::size_t patch = 4;
  double aux_weight = 0.4;
  OptimizerConfig optimizer;
  Precision precision = Precision::f32;
  std::uint64_t seed = 0;
  bool vc_strict = false;
  std::vector<std::size_t> vc_windows{8, 16};
  TrainSettings train;
  SynthClipSpec data;

  /// Throws ContractError; returns the schedule's soft warnings.
  std::vector<std::string> validate() const;

  /// Small-image preset: 48x48 clips of 12 frames, 12x12 features, s=4 and
  /// offsets {9,6,3}.
  static RunConfig toy();

  static RunConfig load(const std::string& path);
};

/// Coarse-to-fine schedule sized for 12x12 features:
/// s=4, offsets {9,6,3,0}, r={12,8,4,4}, p={4,2,1,1}.
ContextSchedule toy_schedule();

void to_json(nlohmann::json& j, const ScheduleEntry& e);
void from_json(const nlohmann::json& j, ScheduleEntry& e);
void to_json(nlohmann::json& j, const ContextSchedule& s);
void from_json(const nlohmann::json& j, ContextSchedule& s);
void to_json(nlohmann::json& j, const OptimizerConfig& o);
void from_json(const nlohmann::json& j, OptimizerConfig& o);
void to_json(nlohmann::json& j, const RunConfig& c);
void from_json(const nlohmann::json& j, RunConfig& c);

std::string to_string(Precision p);
Precision parse_precision(const std::string& s);

}  // namespace cffm
