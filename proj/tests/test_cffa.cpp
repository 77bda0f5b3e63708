#include <gtest/gtest.h>

#include <algorithm>
#include <numeric>
#include <set>
#include <vector>

#include "cffm/cffa.hpp"

using namespace cffm;

namespace {

using V = Var<double>;

Tensor<double> random_tensor(Shape shape, Rng& rng) {
  Tensor<double> t(std::move(shape));
  for (auto& v : t.data()) v = rng.uniform(-1.0, 1.0);
  return t;
}

std::size_t sum_tokens(std::vector<std::size_t> r, std::vector<std::size_t> p) {
  std::size_t m = 0;
  for (std::size_t i = 0; i < r.size(); ++i) {
    std::size_t g = 0;
    while ((g + 1) * p[i] <= r[i]) ++g;
    m += g * g;
  }
  return m;
}

std::vector<PoolProjection<double>> make_pool(const ContextSchedule& s, std::size_t c, Rng& rng) {
  std::vector<PoolProjection<double>> pool;
  for (std::size_t j = 0; j < s.entries.size(); ++j) {
    auto proj = PoolProjection<double>::init(c, s.entries[j].p, rng, "pool" + std::to_string(j));
    for (auto& v : proj.bias.value.data()) v = rng.uniform(-0.1, 0.1);
    pool.push_back(std::move(proj));
  }
  return pool;
}

}  // namespace

TEST(Windows, CountsAndShapes) {
  Rng rng(0);
  auto g = partition_windows(V(random_tensor({20, 20, 8}, rng)), 5);
  EXPECT_EQ(g.windows.size(), 16u);
  for (const auto& w : g.windows) EXPECT_EQ(w.shape(), (Shape{25, 8}));
  auto g2 = partition_windows(V(random_tensor({14, 14, 3}, rng)), 7);
  EXPECT_EQ(g2.windows.size(), 4u);
  EXPECT_EQ(g2.windows[0].shape(), (Shape{49, 3}));
  EXPECT_THROW(partition_windows(V(Tensor<double>(Shape{20, 21, 8})), 5), DimensionError);
}

TEST(Windows, CoverageAndLosslessMerge) {
  Rng rng(1);
  auto f = random_tensor({6, 9, 2}, rng);
  auto g = partition_windows(V(f), 3);
  ASSERT_EQ(g.windows.size(), 6u);
  for (std::size_t i = 0; i < 6; ++i) {
    const std::size_t r0 = (i / 3) * 3, c0 = (i % 3) * 3;
    for (std::size_t a = 0; a < 3; ++a)
      for (std::size_t b = 0; b < 3; ++b)
        for (std::size_t ch = 0; ch < 2; ++ch)
          EXPECT_EQ(g.windows[i].value()[(a * 3 + b) * 2 + ch], f.at({r0 + a, c0 + b, ch}));
  }
  EXPECT_EQ(merge_windows(g).value(), f);
}

TEST(Pool, ShapeChain) {
  Rng rng(2);
  auto proj = PoolProjection<double>::init(8, 4, rng, "p");
  EXPECT_EQ(proj.weight.value.shape(), (Shape{128, 8}));
  auto pooled = pool_reduce(V(random_tensor({20, 20, 8}, rng)), 4, proj.weight, proj.bias);
  EXPECT_EQ(pooled.grid.shape(), (Shape{5, 5, 8}));
}

TEST(Pool, IdentityAndConstant) {
  Rng rng(3);
  auto f = random_tensor({4, 6, 3}, rng);
  auto id = PoolProjection<double>::identity(3);
  EXPECT_EQ(pool_reduce(V(f), 1, id.weight, id.bias).grid.value(), f);

  Tensor<double> flat(Shape{8, 8, 3});
  for (std::size_t i = 0; i < flat.size(); ++i) flat[i] = 0.25 * static_cast<double>(i % 3);
  auto proj = PoolProjection<double>::init(3, 2, rng, "p");
  auto grid = pool_reduce(V(flat), 2, proj.weight, proj.bias).grid.value();
  for (std::size_t cell = 1; cell < 16; ++cell)
    for (std::size_t ch = 0; ch < 3; ++ch) EXPECT_EQ(grid[cell * 3 + ch], grid[ch]);
}

TEST(Pool, MatchesLinearOfSpaceToDepth) {
  Rng rng(4);
  auto f = random_tensor({6, 6, 2}, rng);
  auto proj = PoolProjection<double>::init(2, 3, rng, "p");
  for (auto& v : proj.bias.value.data()) v = rng.uniform(-1, 1);
  auto grid = pool_reduce(V(f), 3, proj.weight, proj.bias).grid.value();
  for (std::size_t i = 0; i < 2; ++i)
    for (std::size_t j = 0; j < 2; ++j)
      for (std::size_t o = 0; o < 2; ++o) {
        double ref = proj.bias.value[o];
        std::size_t k = 0;
        for (std::size_t a = 0; a < 3; ++a)
          for (std::size_t b = 0; b < 3; ++b)
            for (std::size_t ch = 0; ch < 2; ++ch, ++k) ref += f.at({3 * i + a, 3 * j + b, ch}) * proj.weight.value.at({k, o});
        EXPECT_NEAR(grid.at({i, j, o}), ref, 1e-13);
      }
}

TEST(Pool, ShiftEquivariance) {
  Rng rng(5);
  const std::size_t p = 2;
  auto f = random_tensor({8, 12, 2}, rng);
  Tensor<double> shifted(f.shape());
  for (std::size_t y = 0; y < 8; ++y)
    for (std::size_t x = p; x < 12; ++x)
      for (std::size_t c = 0; c < 2; ++c) shifted.at({y, x, c}) = f.at({y, x - p, c});
  auto proj = PoolProjection<double>::init(2, p, rng, "p");
  auto a = pool_reduce(V(f), p, proj.weight, proj.bias).grid.value();
  auto b = pool_reduce(V(shifted), p, proj.weight, proj.bias).grid.value();
  for (std::size_t i = 0; i < 4; ++i)
    for (std::size_t j = 1; j < 6; ++j)
      for (std::size_t c = 0; c < 2; ++c) EXPECT_EQ(b.at({i, j, c}), a.at({i, j - 1, c}));
}

TEST(Pool, ProjectionShapeChecked) {
  Rng rng(6);
  auto proj = PoolProjection<double>::init(3, 2, rng, "p");
  EXPECT_THROW(pool_reduce(V(random_tensor({4, 4, 3}, rng)), 4, proj.weight, proj.bias), DimensionError);
  EXPECT_THROW(pool_reduce(V(random_tensor({5, 4, 3}, rng)), 2, proj.weight, proj.bias), DimensionError);
}

TEST(Gather, FigureFrames) {
  Rng rng(7);
  const std::size_t c = 4;
  auto f = random_tensor({20, 20, c}, rng);
  auto far = PoolProjection<double>::init(c, 4, rng, "far");
  auto pooled = pool_reduce(V(f), 4, far.weight, far.bias);
  const auto& grid = pooled.grid.value();
  // Farthest frame: g=5 on a 5x5 grid. Every window gets 25 rows drawn from
  // the clamped neighbourhood; together the windows cover all 25 cells.
  std::set<std::size_t> covered;
  for (std::size_t i = 0; i < 16; ++i) {
    auto tokens = gather_context(pooled, i, 4, 4, 5, 20).value();
    ASSERT_EQ(tokens.shape(), (Shape{25, c}));
    const long cr = static_cast<long>(((i / 4) * 5 + 2) / 4), cc = static_cast<long>(((i % 4) * 5 + 2) / 4);
    for (long a = 0; a < 5; ++a)
      for (long b = 0; b < 5; ++b) {
        const auto y = static_cast<std::size_t>(std::clamp(cr - 2 + a, 0L, 4L));
        const auto x = static_cast<std::size_t>(std::clamp(cc - 2 + b, 0L, 4L));
        covered.insert(y * 5 + x);
        for (std::size_t ch = 0; ch < c; ++ch)
          EXPECT_EQ(tokens[static_cast<std::size_t>(a * 5 + b) * c + ch], grid.at({y, x, ch}));
      }
  }
  EXPECT_EQ(covered.size(), 25u);
  // A window whose centre maps to the middle cell sees the whole pooled frame.
  auto whole = gather_context(pooled, 0, 1, 1, 20, 20).value();
  std::set<std::size_t> seen;
  for (std::size_t row = 0; row < 25; ++row)
    for (std::size_t cell = 0; cell < 25; ++cell)
      if (std::equal(whole.data().begin() + row * c, whole.data().begin() + (row + 1) * c, grid.data().begin() + cell * c))
        seen.insert(cell);
  EXPECT_EQ(seen.size(), 25u);

  auto second = PoolProjection<double>::init(c, 3, rng, "second");
  auto f2 = random_tensor({18, 18, c}, rng);
  auto pooled2 = pool_reduce(V(f2), 3, second.weight, second.bias);
  EXPECT_EQ(gather_context(pooled2, 0, 3, 3, 6, 12).shape(), (Shape{16, c}));
}

TEST(Gather, CornerClampingOracle) {
  Rng rng(8);
  const std::size_t c = 2, s = 4, p = 2, r = 8;
  auto f = random_tensor({8, 8, c}, rng);
  auto proj = PoolProjection<double>::init(c, p, rng, "p");
  auto pooled = pool_reduce(V(f), p, proj.weight, proj.bias);
  const auto& grid = pooled.grid.value();
  for (std::size_t win = 0; win < 4; ++win) {
    auto tokens = gather_context(pooled, win, 2, 2, s, r).value();
    ASSERT_EQ(tokens.shape(), (Shape{16, c}));
    const long cr = static_cast<long>(((win / 2) * s + s / 2) / p);
    const long cc = static_cast<long>(((win % 2) * s + s / 2) / p);
    for (long a = 0; a < 4; ++a)
      for (long b = 0; b < 4; ++b) {
        const long y = std::clamp(cr - 2 + a, 0L, 3L), x = std::clamp(cc - 2 + b, 0L, 3L);
        for (std::size_t ch = 0; ch < c; ++ch)
          EXPECT_EQ(tokens[static_cast<std::size_t>(a * 4 + b) * c + ch],
                    grid.at({static_cast<std::size_t>(y), static_cast<std::size_t>(x), ch}));
      }
  }
  EXPECT_THROW(gather_context(pooled, 4, 2, 2, s, r), RangeError);
  EXPECT_THROW(gather_context(pooled, 0, 2, 2, s, 7), ContractError);
}

TEST(Schedule, TokenCounts) {
  const auto fig = ContextSchedule::four_frame_demo();
  EXPECT_TRUE(fig.validate().empty());
  EXPECT_EQ(fig.token_count(), 66u);
  EXPECT_EQ(fig.token_count(), sum_tokens({20, 12, 6, 4}, {4, 3, 2, 1}));
  const auto def = ContextSchedule::defaults();
  EXPECT_EQ(def.validate().size(), 1u);  // r grows from 6 to 7 toward the target
  EXPECT_EQ(def.token_count(), 181u);
  EXPECT_EQ(def.token_count(), sum_tokens({49, 20, 6, 7, 35}, {7, 4, 2, 1, 5}));
  EXPECT_EQ(def.reference_offsets(), (std::vector<std::size_t>{9, 6, 3}));
  EXPECT_EQ(def.alignment(), 140u);
  EXPECT_EQ(def.target_only().token_count(), 49u + 49u);
  EXPECT_EQ((ContextSchedule{4, {{0, 4, 1}}}.token_count()), 16u);
}

TEST(Schedule, HardViolations) {
  EXPECT_THROW((ContextSchedule{4, {}}.validate()), ContractError);
  EXPECT_THROW((ContextSchedule{0, {{0, 4, 1}}}.validate()), ContractError);
  EXPECT_THROW((ContextSchedule{4, {{0, 5, 2}}}.validate()), ContractError);
  EXPECT_THROW((ContextSchedule{4, {{0, 1, 2}}}.validate()), ContractError);
  EXPECT_THROW((ContextSchedule{4, {{3, 4, 1}}}.validate()), ContractError);
  EXPECT_THROW((ContextSchedule{4, {{3, 4, 1}, {6, 4, 1}, {0, 4, 1}}}.validate()), ContractError);
  EXPECT_THROW((ContextSchedule{4, {{3, 4, 1}, {0, 4, 2}}}.validate()), ContractError);
}

TEST(Assemble, SingleTargetEntryIsNeighbourhood) {
  Rng rng(9);
  auto f = random_tensor({8, 8, 3}, rng);
  ContextSchedule sched{4, {{0, 4, 1}}};
  std::vector<PoolProjection<double>> pool{PoolProjection<double>::identity(3)};
  std::vector<FrameFeature<double>> frames{{0, V(f)}};
  auto ctx = assemble_context(std::span<const FrameFeature<double>>(frames), sched, std::span(pool));
  EXPECT_EQ(ctx.m, 16u);
  ASSERT_EQ(ctx.tokens.size(), 4u);
  // s=4 windows centre on cell (2, 2) + window origin, neighbourhood starts 2 cells earlier: the window itself
  auto windows = partition_windows(V(f), 4);
  for (std::size_t i = 0; i < 4; ++i) EXPECT_EQ(ctx.tokens[i].value(), windows.windows[i].value());
}

TEST(Assemble, FigureScheduleAndSegments) {
  Rng rng(10);
  const auto sched = ContextSchedule::four_frame_demo();
  const std::size_t c = 4;
  std::vector<FrameFeature<double>> frames;
  for (std::size_t off : {0, 3, 6, 9}) frames.push_back({off, V(random_tensor({60, 60, c}, rng))});
  auto pool = make_pool(sched, c, rng);
  auto ctx = assemble_context(std::span<const FrameFeature<double>>(frames), sched, std::span(pool));
  EXPECT_EQ(ctx.m, 66u);
  EXPECT_EQ(ctx.tokens.size(), 144u);
  for (const auto& t : ctx.tokens) EXPECT_EQ(t.shape(), (Shape{66, c}));
  ASSERT_EQ(ctx.segments.size(), 4u);
  std::vector<std::size_t> counts, begins;
  for (const auto& s : ctx.segments) {
    counts.push_back(s.count);
    begins.push_back(s.begin);
  }
  EXPECT_EQ(counts, (std::vector<std::size_t>{25, 16, 9, 16}));
  EXPECT_EQ(begins, (std::vector<std::size_t>{0, 25, 41, 50}));

  std::reverse(frames.begin(), frames.end());
  auto again = assemble_context(std::span<const FrameFeature<double>>(frames), sched, std::span(pool));
  for (std::size_t i = 0; i < ctx.tokens.size(); ++i) EXPECT_EQ(again.tokens[i].value(), ctx.tokens[i].value());
}

TEST(Assemble, DefaultScheduleBudget) {
  Rng rng(11);
  const auto sched = ContextSchedule::defaults();
  const std::size_t c = 2;
  std::vector<FrameFeature<double>> frames;
  for (std::size_t off : {0, 3, 6, 9}) frames.push_back({off, V(random_tensor({140, 140, c}, rng))});
  auto pool = make_pool(sched, c, rng);
  auto ctx = assemble_context(std::span<const FrameFeature<double>>(frames), sched, std::span(pool));
  EXPECT_EQ(ctx.m, 181u);
  for (const auto& t : ctx.tokens) ASSERT_EQ(t.shape()[0], 181u);
}

TEST(Assemble, Errors) {
  Rng rng(12);
  const auto sched = ContextSchedule::four_frame_demo();
  auto pool = make_pool(sched, 2, rng);
  std::vector<FrameFeature<double>> missing{{0, V(random_tensor({60, 60, 2}, rng))}, {3, V(random_tensor({60, 60, 2}, rng))}};
  EXPECT_THROW(assemble_context(std::span<const FrameFeature<double>>(missing), sched, std::span(pool)), ContractError);
  std::vector<FrameFeature<double>> mixed;
  for (std::size_t off : {0, 3, 6}) mixed.push_back({off, V(random_tensor({60, 60, 2}, rng))});
  mixed.push_back({9, V(random_tensor({120, 60, 2}, rng))});
  EXPECT_THROW(assemble_context(std::span<const FrameFeature<double>>(mixed), sched, std::span(pool)), ContractError);
  std::vector<PoolProjection<double>> short_pool(pool.begin(), pool.begin() + 2);
  mixed.back().features = V(random_tensor({60, 60, 2}, rng));
  EXPECT_THROW(assemble_context(std::span<const FrameFeature<double>>(mixed), sched, std::span(short_pool)),
               ContractError);
}
