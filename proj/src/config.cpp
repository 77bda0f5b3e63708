#include "cffm/config.hpp"

#include <fstream>

namespace cffm {

std::vector<std::string> RunConfig::validate() const {
  auto warnings = schedule.validate();
  for (std::size_t i = 0; i < offsets.size(); ++i) {
    if (offsets[i] == 0) throw ContractError("reference offsets must be > 0");
    if (i > 0 && offsets[i] >= offsets[i - 1]) throw ContractError("reference offsets must strictly decrease");
  }
  if (offsets != schedule.reference_offsets()) {
    throw ContractError("reference offsets do not match the schedule's non-target entries");
  }
  if (layers == 0 && classes == 0) throw ContractError("empty model");
  if (channels == 0 || heads == 0 || channels % heads != 0) throw ContractError("heads must divide c");
  if (classes < 2) throw ContractError("need at least 2 classes");
  if (data.classes != classes) throw ContractError("data.classes must equal K");
  if (patch == 0) throw ContractError("patch size must be >= 1");
  if (aux_weight < 0) throw ContractError("aux weight must be >= 0");
  if (optimizer.lr < 0 || optimizer.beta1 < 0 || optimizer.beta1 >= 1 || optimizer.beta2 < 0 ||
      optimizer.beta2 >= 1 || optimizer.eps <= 0) {
    throw ContractError("optimizer settings out of range");
  }
  if (train.batch == 0) throw ContractError("batch must be >= 1");
  for (auto n : vc_windows)
    if (n == 0) throw ContractError("VC window length must be >= 1");
  return warnings;
}

ContextSchedule toy_schedule() { return ContextSchedule{4, {{9, 12, 4}, {6, 8, 2}, {3, 4, 1}, {0, 4, 1}}}; }

RunConfig RunConfig::toy() {
  RunConfig c;
  c.schedule = toy_schedule();
  c.offsets = {9, 6, 3};
  c.data.frames = 12;
  c.data.height = 48;
  c.data.width = 48;
  c.data.classes = 4;
  c.train.batch = 8;
  return c;
}

RunConfig RunConfig::load(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open config " + path);
  nlohmann::json j;
  try {
    in >> j;
  } catch (const nlohmann::json::exception& e) {
    throw ContractError("config " + path + ": " + e.what());
  }
  return j.get<RunConfig>();
}

std::string to_string(Precision p) { return p == Precision::f64 ? "f64" : "f32"; }

Precision parse_precision(const std::string& s) {
  if (s == "f32" || s == "float32") return Precision::f32;
  if (s == "f64" || s == "float64") return Precision::f64;
  throw ContractError("unknown precision '" + s + "' (f32 or f64)");
}

void to_json(nlohmann::json& j, const ScheduleEntry& e) { j = {{"offset", e.offset}, {"r", e.r}, {"p", e.p}}; }

void from_json(const nlohmann::json& j, ScheduleEntry& e) {
  e.offset = j.at("offset");
  e.r = j.at("r");
  e.p = j.at("p");
}

void to_json(nlohmann::json& j, const ContextSchedule& s) { j = {{"s", s.s}, {"entries", s.entries}}; }

void from_json(const nlohmann::json& j, ContextSchedule& s) {
  s.s = j.at("s");
  s.entries = j.at("entries").get<std::vector<ScheduleEntry>>();
}

void to_json(nlohmann::json& j, const OptimizerConfig& o) {
  j = {{"lr", o.lr}, {"beta1", o.beta1}, {"beta2", o.beta2}, {"eps", o.eps}};
}

void from_json(const nlohmann::json& j, OptimizerConfig& o) {
  OptimizerConfig d;
  o.lr = j.value("lr", d.lr);
  o.beta1 = j.value("beta1", d.beta1);
  o.beta2 = j.value("beta2", d.beta2);
  o.eps = j.value("eps", d.eps);
}

void to_json(nlohmann::json& j, const RunConfig& c) {
  j = {{"schedule", c.schedule},
       {"offsets", c.offsets},
       {"N", c.layers},
       {"H", c.heads},
       {"c", c.channels},
       {"K", c.classes},
       {"patch", c.patch},
       {"lambda_aux", c.aux_weight},
       {"optimizer", c.optimizer},
       {"precision", to_string(c.precision)},
       {"seed", c.seed},
       {"vc_strict", c.vc_strict},
       {"vc_n", c.vc_windows},
       {"train",
        {{"iterations", c.train.iterations},
         {"batch", c.train.batch},
         {"clips", c.train.clips},
         {"eval_every", c.train.eval_every}}},
       {"data", c.data}};
}

void from_json(const nlohmann::json& j, RunConfig& c) {
  RunConfig d;
  c = d;
  if (j.contains("schedule")) c.schedule = j.at("schedule").get<ContextSchedule>();
  // Offsets default to whatever the schedule references.
  c.offsets = j.contains("offsets") ? j.at("offsets").get<std::vector<std::size_t>>() : c.schedule.reference_offsets();
  c.layers = j.value("N", d.layers);
  c.heads = j.value("H", d.heads);
  c.channels = j.value("c", d.channels);
  c.classes = j.value("K", d.classes);
  c.patch = j.value("patch", d.patch);
  c.aux_weight = j.value("lambda_aux", d.aux_weight);
  if (j.contains("optimizer")) c.optimizer = j.at("optimizer").get<OptimizerConfig>();
  if (j.contains("precision")) c.precision = parse_precision(j.at("precision").get<std::string>());
  c.seed = j.value("seed", d.seed);
  c.vc_strict = j.value("vc_strict", d.vc_strict);
  c.vc_windows = j.value("vc_n", d.vc_windows);
  if (j.contains("train")) {
    const auto& t = j.at("train");
    c.train.iterations = t.value("iterations", d.train.iterations);
    c.train.batch = t.value("batch", d.train.batch);
    c.train.clips = t.value("clips", d.train.clips);
    c.train.eval_every = t.value("eval_every", d.train.eval_every);
  }
  if (j.contains("data")) c.data = j.at("data").get<SynthClipSpec>();
  c.data.classes = j.contains("data") && j.at("data").contains("classes") ? c.data.classes : c.classes;
}

}  // namespace cffm
