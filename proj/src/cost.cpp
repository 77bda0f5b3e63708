#include "cffm/cost.hpp"

#include "cffm/cfm.hpp"

namespace cffm {

CostModel CostModel::from_schedule(const ContextSchedule& schedule, std::uint64_t h, std::uint64_t w,
                                   std::uint64_t c, std::uint64_t layers, std::uint64_t heads) {
  CostModel m;
  m.h = h;
  m.w = w;
  m.c = c;
  m.l = schedule.reference_offsets().size();
  m.m = schedule.token_count();
  m.layers = layers;
  m.heads = heads;
  m.s = schedule.s;
  return m;
}

void CostModel::validate() const {
  if (h == 0 || w == 0 || c == 0 || m == 0 || heads == 0 || s == 0) {
    throw ContractError("cost model extents must be >= 1");
  }
  if (h % s != 0 || w % s != 0) throw DimensionError("cost model: window size must divide h and w");
  if (c % heads != 0) throw ContractError("cost model: heads must divide c");
}

namespace {

double ratio(std::uint64_t num, std::uint64_t den) {
  return den == 0 ? 0.0 : static_cast<double>(num) / static_cast<double>(den);
}

}  // namespace

CostReport baseline_cost(const CostModel& model) {
  if (model.h == 0 || model.w == 0 || model.c == 0) throw ContractError("cost model extents must be >= 1");
  const std::uint64_t n = model.joint_tokens();
  const std::uint64_t c = model.c;
  CostReport r;
  r.method = "full_attention";
  r.keys_per_query = n;
  r.score_pairs = n * n;
  r.per_layer.projections = 3 * n * c * c;
  r.per_layer.scores = n * n * c;
  r.per_layer.aggregation = n * n * c;
  r.analytic_multiplies = model.layers * r.per_layer.total();
  r.asymptotic_terms = model.layers * (n * n * c + n * c * c);
  r.baseline_pairs = r.score_pairs;
  r.baseline_multiplies = r.analytic_multiplies;
  r.joint_term = (model.l + 1) * n;
  r.pair_ratio = 1.0;
  r.multiply_ratio = 1.0;
  return r;
}

CostReport cffm_cost(const CostModel& model) {
  model.validate();
  const std::uint64_t hw = model.pixels(), c = model.c, m = model.m;
  CostReport r;
  r.method = "cffm";
  r.keys_per_query = m;
  r.score_pairs = hw * m;
  r.per_layer.projections = (hw + 2 * m * model.windows()) * c * c;
  r.per_layer.scores = hw * m * c;
  r.per_layer.aggregation = hw * m * c;
  r.analytic_multiplies = model.layers * r.per_layer.total();
  r.asymptotic_terms = model.layers * (hw * m * c + hw * c * c);
  const auto base = baseline_cost(model);
  r.baseline_pairs = base.score_pairs;
  r.baseline_multiplies = base.analytic_multiplies;
  r.joint_term = base.joint_term;
  r.pair_ratio = ratio(r.baseline_pairs, r.score_pairs);
  r.multiply_ratio = ratio(r.baseline_multiplies, r.analytic_multiplies);
  return r;
}

std::uint64_t assembly_multiplies(const ContextSchedule& schedule, std::uint64_t h, std::uint64_t w,
                                  std::uint64_t c) {
  std::uint64_t total = 0;
  for (const auto& e : schedule.entries) {
    const std::uint64_t p = e.p;
    total += (h / p) * (w / p) * (c * p * p) * c;
  }
  return total;
}

MeasuredCost measured_cost(const CostModel& model, const ContextSchedule& schedule, const MeasureOptions& options) {
  model.validate();
  schedule.validate();
  if (schedule.token_count() != model.m || schedule.s != model.s) {
    throw ContractError("measured_cost: cost model m/s disagree with the schedule");
  }
  using T = float;
  Rng rng(options.seed);
  const std::size_t h = model.h, w = model.w, c = model.c;
  auto random_tensor = [&](Shape shape) {
    Tensor<T> t(std::move(shape));
    for (auto& v : t.data()) v = static_cast<T>(rng.uniform(-1.0, 1.0));
    return t;
  };

  MeasuredCost out;
  out.cffm = cffm_cost(model);
  out.analytic_assembly = assembly_multiplies(schedule, h, w, c);

  const AttentionShape shape{c, model.s, model.m, model.heads};
  auto stack = CFMStack<T>::init(shape, model.layers, 1, rng);

  Var<T> target(random_tensor({h, w, c}));
  const auto windows = partition_windows(target, model.s);

  ContextTokenSet<T> context;
  bool divisible = true;
  for (const auto& e : schedule.entries) divisible = divisible && h % e.p == 0 && w % e.p == 0;
  if (divisible) {
    std::vector<FrameFeature<T>> frames{{0, target}};
    for (auto offset : schedule.reference_offsets()) frames.push_back({offset, Var<T>(random_tensor({h, w, c}))});
    std::vector<PoolProjection<T>> pool;
    for (std::size_t j = 0; j < schedule.entries.size(); ++j) {
      pool.push_back(PoolProjection<T>::init(c, schedule.entries[j].p, rng, "pool" + std::to_string(j)));
    }
    MultiplyCountScope counter;
    context = assemble_context(std::span<const FrameFeature<T>>(frames), schedule, std::span<PoolProjection<T>>(pool));
    out.measured_assembly = counter.count();
  } else {
    context.m = model.m;
    for (std::size_t i = 0; i < windows.windows.size(); ++i) context.tokens.emplace_back(random_tensor({model.m, c}));
  }

  {
    MultiplyCountScope counter;
    auto mined = mine(stack, windows, context);
    out.cffm.measured_multiplies = counter.count();
  }

  if (options.baseline) {
    CostReport base = baseline_cost(model);
    const std::size_t n = (model.l + 1) * model.pixels();
    auto tokens = random_tensor({n, c});
    MultiplyCountScope counter;
    for (auto& layer : stack.layers) tokens = full_attention_update(layer, tokens, options.block);
    base.measured_multiplies = counter.count();
    out.baseline = base;
  }
  return out;
}

void to_json(nlohmann::json& j, const CostModel& m) {
  j = {{"h", m.h}, {"w", m.w}, {"c", m.c}, {"l", m.l}, {"m", m.m}, {"N", m.layers}, {"H", m.heads}, {"s", m.s}};
}

void from_json(const nlohmann::json& j, CostModel& m) {
  m.h = j.at("h");
  m.w = j.at("w");
  m.c = j.at("c");
  m.l = j.value("l", std::uint64_t{0});
  m.m = j.at("m");
  m.layers = j.value("N", std::uint64_t{1});
  m.heads = j.value("H", std::uint64_t{1});
  m.s = j.value("s", std::uint64_t{1});
}

void to_json(nlohmann::json& j, const CostReport& r) {
  j = {{"method", r.method},
       {"keys_per_query", r.keys_per_query},
       {"score_pairs", r.score_pairs},
       {"per_layer", {{"projections", r.per_layer.projections},
                      {"scores", r.per_layer.scores},
                      {"aggregation", r.per_layer.aggregation},
                      {"total", r.per_layer.total()}}},
       {"analytic_multiplies", r.analytic_multiplies},
       {"asymptotic_terms", r.asymptotic_terms},
       {"baseline_pairs", r.baseline_pairs},
       {"baseline_multiplies", r.baseline_multiplies},
       {"joint_term", r.joint_term},
       {"pair_ratio", r.pair_ratio},
       {"multiply_ratio", r.multiply_ratio}};
  if (r.measured_multiplies) {
    j["measured_multiplies"] = *r.measured_multiplies;
    j["measured_matches_analytic"] = r.measured_matches();
  }
}

void to_json(nlohmann::json& j, const MeasuredCost& r) {
  j = {{"cffm", r.cffm}, {"analytic_assembly_multiplies", r.analytic_assembly}};
  if (r.baseline) j["baseline"] = *r.baseline;
  if (r.measured_assembly) j["measured_assembly_multiplies"] = *r.measured_assembly;
}

}  // namespace cffm
