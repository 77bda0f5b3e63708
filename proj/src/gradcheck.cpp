#include "cffm/gradcheck.hpp"

#include <algorithm>
#include <cmath>

#include "cffm/cfm.hpp"
#include "cffm/config.hpp"

namespace cffm {

double relative_error(double analytic, double numeric, double floor) {
  const double denom = std::max({std::abs(analytic), std::abs(numeric), floor});
  return std::abs(analytic - numeric) / denom;
}

namespace {

struct Pipeline {
  const GradcheckConfig& config;
  std::vector<FrameFeature<double>> frames;
  std::vector<PoolProjection<double>> pool;
  CFMStack<double> stack;
  std::vector<std::int32_t> labels;

  Var<double> loss() {
    auto context = assemble_context(std::span<const FrameFeature<double>>(frames), config.schedule,
                                    std::span<PoolProjection<double>>(pool));
    const auto& target = frames.front().features;
    auto mined = merge_windows(mine(stack, partition_windows(target, config.schedule.s), context));
    auto logits = segment_head(stack, mined, target);
    auto aux = aux_head(stack, target);
    return segmentation_loss(logits, std::span<const std::int32_t>(labels), aux, config.aux_weight);
  }

  std::vector<Parameter<double>*> parameters() {
    std::vector<Parameter<double>*> out;
    for (auto& p : pool) {
      out.push_back(&p.weight);
      out.push_back(&p.bias);
    }
    for (auto* p : stack.parameters()) out.push_back(p);
    return out;
  }
};

}  // namespace

GradcheckReport gradcheck(const GradcheckConfig& config) {
  config.schedule.validate();
  Rng rng(config.seed);
  Pipeline pipe{config, {}, {}, {}, {}};

  auto random_tensor = [&](Shape shape) {
    Tensor<double> t(std::move(shape));
    for (auto& v : t.data()) v = rng.uniform(-1.0, 1.0);
    return t;
  };
  pipe.frames.push_back({0, Var<double>(random_tensor({config.h, config.w, config.c}))});
  for (auto k : config.schedule.reference_offsets())
    pipe.frames.push_back({k, Var<double>(random_tensor({config.h, config.w, config.c}))});
  for (std::size_t j = 0; j < config.schedule.entries.size(); ++j) {
    pipe.pool.push_back(PoolProjection<double>::init(config.c, config.schedule.entries[j].p, rng,
                                                     "cffa.pool" + std::to_string(j)));
  }
  const AttentionShape shape{config.c, config.schedule.s, config.schedule.token_count(), config.heads};
  pipe.stack = CFMStack<double>::init(shape, config.layers, config.classes, rng);
  for (std::size_t i = 0; i < config.h * config.w; ++i)
    pipe.labels.push_back(static_cast<std::int32_t>(rng.below(config.classes)));

  auto params = pipe.parameters();

  for (auto* p : params) p->zero_grad();
  pipe.loss().backward();
  if (config.corrupt) config.corrupt(params);

  GradcheckReport report;
  report.pass = true;
  NoGradGuard no_grad;
  for (auto* p : params) {
    if (!config.only.empty() && p->name.find(config.only) == std::string::npos) continue;
    ParameterCheck check;
    check.name = p->name;
    auto value = p->value.data();
    for (std::size_t i = 0; i < value.size(); ++i) {
      const double saved = value[i];
      value[i] = saved + config.eps;
      const double plus = pipe.loss().value()[0];
      value[i] = saved - config.eps;
      const double minus = pipe.loss().value()[0];
      value[i] = saved;
      const double numeric = (plus - minus) / (2.0 * config.eps);
      const double analytic = p->grad[i];
      const double rel = relative_error(analytic, numeric, config.floor);
      if (rel > check.max_rel_error) {
        check.max_rel_error = rel;
        check.worst_index = i;
      }
      check.max_abs_error = std::max(check.max_abs_error, std::abs(analytic - numeric));
      ++check.elements;
    }
    report.checked += check.elements;
    if (report.worst_parameter.empty() || check.max_rel_error > report.max_rel_error) {
      report.max_rel_error = check.max_rel_error;
      report.worst_parameter = check.name;
    }
    report.parameters.push_back(std::move(check));
  }
  if (report.checked == 0) throw ContractError("gradcheck: no parameter matches '" + config.only + "'");
  report.pass = report.max_rel_error <= config.tolerance;
  return report;
}

void to_json(nlohmann::json& j, const GradcheckReport& r) {
  j = {{"pass", r.pass},
       {"max_rel_error", r.max_rel_error},
       {"worst_parameter", r.worst_parameter},
       {"checked", r.checked},
       {"parameters", nlohmann::json::array()}};
  for (const auto& p : r.parameters) {
    j["parameters"].push_back({{"name", p.name},
                               {"elements", p.elements},
                               {"max_rel_error", p.max_rel_error},
                               {"max_abs_error", p.max_abs_error},
                               {"worst_index", p.worst_index}});
  }
}

void from_json(const nlohmann::json& j, GradcheckConfig& c) {
  GradcheckConfig d;
  c.h = j.value("h", d.h);
  c.w = j.value("w", d.w);
  c.c = j.value("c", d.c);
  c.heads = j.value("H", d.heads);
  c.layers = j.value("N", d.layers);
  c.classes = j.value("K", d.classes);
  if (j.contains("schedule")) c.schedule = j.at("schedule").get<ContextSchedule>();
  c.aux_weight = j.value("lambda_aux", d.aux_weight);
  c.eps = j.value("eps", d.eps);
  c.tolerance = j.value("tolerance", d.tolerance);
  c.floor = j.value("floor", d.floor);
  c.seed = j.value("seed", d.seed);
  c.only = j.value("only", d.only);
}

}  // namespace cffm
