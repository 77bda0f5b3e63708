#include "cffm/bench.hpp"

#include <algorithm>
#include <chrono>

#include "cffm/cfm.hpp"
#include "cffm/config.hpp"

namespace cffm {

ContextSchedule BenchConfig::bench_schedule() {
  return ContextSchedule{8, {{9, 32, 8}, {6, 24, 4}, {3, 16, 2}, {0, 8, 1}}};
}

double median(std::vector<double> values) {
  if (values.empty()) return 0.0;
  std::sort(values.begin(), values.end());
  const std::size_t n = values.size();
  return n % 2 ? values[n / 2] : 0.5 * (values[n / 2 - 1] + values[n / 2]);
}

BenchReport bench(const BenchConfig& config) {
  using T = float;
  using Clock = std::chrono::steady_clock;
  config.schedule.validate();
  if (config.reps == 0) throw ContractError("bench: need at least one repetition");

  BenchReport report;
  report.model = CostModel::from_schedule(config.schedule, config.h, config.w, config.c, config.layers, config.heads);
  report.model.validate();
  report.cffm = cffm_cost(report.model);
  report.baseline = baseline_cost(report.model);

  Rng rng(config.seed);
  auto random_tensor = [&](Shape shape) {
    Tensor<T> t(std::move(shape));
    for (auto& v : t.data()) v = static_cast<T>(rng.uniform(-1.0, 1.0));
    return t;
  };
  const std::size_t h = config.h, w = config.w, c = config.c;
  std::vector<FrameFeature<T>> frames{{0, Var<T>(random_tensor({h, w, c}))}};
  for (auto k : config.schedule.reference_offsets()) frames.push_back({k, Var<T>(random_tensor({h, w, c}))});

  std::vector<PoolProjection<T>> pool;
  for (std::size_t j = 0; j < config.schedule.entries.size(); ++j) {
    pool.push_back(PoolProjection<T>::init(c, config.schedule.entries[j].p, rng, "pool" + std::to_string(j)));
  }
  const AttentionShape shape{c, config.schedule.s, config.schedule.token_count(), config.heads};
  auto stack = CFMStack<T>::init(shape, config.layers, 1, rng);

  for (const auto& e : config.schedule.entries) report.assembled = report.assembled && h % e.p == 0 && w % e.p == 0;
  ContextTokenSet<T> fixed_context;
  if (!report.assembled) {
    fixed_context.m = shape.m;
    for (std::size_t i = 0; i < report.model.windows(); ++i) fixed_context.tokens.emplace_back(random_tensor({shape.m, c}));
  }

  NoGradGuard no_grad;
  for (std::size_t rep = 0; rep < config.reps; ++rep) {
    const auto start = Clock::now();
    auto context = report.assembled ? assemble_context(std::span<const FrameFeature<T>>(frames), config.schedule,
                                                       std::span<PoolProjection<T>>(pool))
                                    : fixed_context;
    const auto grid = partition_windows(frames.front().features, config.schedule.s);
    if (rep == 0) {
      MultiplyCountScope counter;
      auto mined = merge_windows(mine(stack, grid, context));
      report.cffm.measured_multiplies = counter.count();
    } else {
      auto mined = merge_windows(mine(stack, grid, context));
    }
    report.cffm_seconds.push_back(std::chrono::duration<double>(Clock::now() - start).count());
  }

  if (config.baseline) {
    const std::size_t n = frames.size() * h * w;
    Tensor<T> all(Shape{n, c});
    std::size_t row = 0;
    for (const auto& f : frames) {
      std::copy(f.features.value().data().begin(), f.features.value().data().end(), all.data().begin() + row * c);
      row += h * w;
    }
    for (std::size_t rep = 0; rep < config.reps; ++rep) {
      const auto start = Clock::now();
      Tensor<T> tokens = all;
      if (rep == 0) {
        MultiplyCountScope counter;
        for (auto& layer : stack.layers) tokens = full_attention_update(layer, tokens, config.block);
        report.baseline.measured_multiplies = counter.count();
      } else {
        for (auto& layer : stack.layers) tokens = full_attention_update(layer, tokens, config.block);
      }
      report.baseline_seconds.push_back(std::chrono::duration<double>(Clock::now() - start).count());
    }
  }
  report.cffm_median = median(report.cffm_seconds);
  report.baseline_median = median(report.baseline_seconds);
  return report;
}

void to_json(nlohmann::json& j, const BenchReport& r) {
  j = {{"model", r.model},
       {"context_assembled", r.assembled},
       {"cffm", {{"seconds", r.cffm_seconds}, {"median_seconds", r.cffm_median}, {"cost", r.cffm}}}};
  if (!r.baseline_seconds.empty()) {
    j["baseline"] = {{"seconds", r.baseline_seconds}, {"median_seconds", r.baseline_median}, {"cost", r.baseline}};
    j["speedup"] = r.cffm_median > 0 ? r.baseline_median / r.cffm_median : 0.0;
  } else {
    j["baseline"] = {{"cost", r.baseline}};
  }
  j["pair_ratio"] = r.cffm.pair_ratio;
  j["multiply_ratio"] = r.cffm.multiply_ratio;
}

void from_json(const nlohmann::json& j, BenchConfig& c) {
  BenchConfig d;
  c.h = j.value("h", d.h);
  c.w = j.value("w", d.w);
  c.c = j.value("c", d.c);
  c.layers = j.value("N", d.layers);
  c.heads = j.value("H", d.heads);
  c.reps = j.value("reps", d.reps);
  c.block = j.value("block", d.block);
  c.baseline = j.value("baseline", d.baseline);
  c.seed = j.value("seed", d.seed);
  c.schedule = j.contains("schedule") ? j.at("schedule").get<ContextSchedule>() : d.schedule;
}

}  // namespace cffm
