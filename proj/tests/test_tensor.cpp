#include <gtest/gtest.h>

#include <cmath>
#include <vector>

#include "cffm/rng.hpp"
#include "cffm/tensor.hpp"

using namespace cffm;

namespace {

Tensor<double> random_tensor(Shape shape, std::uint64_t seed) {
  Rng rng(seed);
  Tensor<double> t(std::move(shape));
  for (auto& v : t.data()) v = rng.uniform(-1.0, 1.0);
  return t;
}

}  // namespace

TEST(Tensor, DefaultIsScalarZero) {
  Tensor<float> t;
  EXPECT_EQ(t.shape(), Shape{1});
  EXPECT_EQ(t[0], 0.0f);
}

TEST(Tensor, RejectsZeroExtentAndBadData) {
  EXPECT_THROW(Tensor<float>(Shape{2, 0}), DimensionError);
  EXPECT_THROW(Tensor<float>(Shape{2, 2}, std::vector<float>(3)), DimensionError);
  EXPECT_THROW(Tensor<float>(Shape{}), DimensionError);
}

TEST(Tensor, AtChecksRange) {
  Tensor<int> t(Shape{2, 3});
  t.at({1, 2}) = 7;
  EXPECT_EQ(t[5], 7);
  EXPECT_THROW(t.at({2, 0}), RangeError);
  EXPECT_THROW(t.at({0}), RangeError);
}

TEST(Tensor, ReshapeKeepsData) {
  Tensor<int> t(Shape{2, 3}, {0, 1, 2, 3, 4, 5});
  auto r = t.reshaped({3, 2});
  EXPECT_EQ(r.vec(), t.vec());
  EXPECT_THROW(t.reshaped({4, 2}), DimensionError);
}

TEST(Matmul, IdentityCase) {
  Tensor<double> a(Shape{2, 2}, {1, 0, 0, 1});
  Tensor<double> b(Shape{2, 2}, {3, 4, 5, 6});
  EXPECT_EQ(matmul(a, b), b);
}

TEST(Matmul, RowTimesColumn) {
  Tensor<double> a(Shape{1, 2}, {1, 2});
  Tensor<double> b(Shape{2, 1}, {3, 4});
  EXPECT_EQ(matmul(a, b).vec(), std::vector<double>{11});
}

TEST(Matmul, MatchesTripleLoopExactly) {
  // Includes shapes that hit the register tile and its edges.
  for (auto [m, k, p] : std::vector<std::array<std::size_t, 3>>{{7, 5, 3}, {8, 3, 16}, {9, 17, 33}, {4, 64, 8}}) {
    auto a = random_tensor({m, k}, 1 + m);
    auto b = random_tensor({k, p}, 2 + p);
    auto got = matmul(a, b);
    for (std::size_t i = 0; i < m; ++i)
      for (std::size_t j = 0; j < p; ++j) {
        double acc = 0;
        for (std::size_t kk = 0; kk < k; ++kk) acc += a[i * k + kk] * b[kk * p + j];
        ASSERT_EQ(got[i * p + j], acc) << m << "x" << k << "x" << p << " at " << i << "," << j;
      }
  }
}

TEST(Matmul, FloatMatchesTripleLoopExactly) {
  Rng rng(3);
  Tensor<float> a(Shape{6, 40}), b(Shape{40, 37});
  for (auto& v : a.data()) v = static_cast<float>(rng.uniform(-1, 1));
  for (auto& v : b.data()) v = static_cast<float>(rng.uniform(-1, 1));
  auto got = matmul(a, b);
  for (std::size_t i = 0; i < 6; ++i)
    for (std::size_t j = 0; j < 37; ++j) {
      float acc = 0;
      for (std::size_t kk = 0; kk < 40; ++kk) acc += a[i * 40 + kk] * b[kk * 37 + j];
      ASSERT_EQ(got[i * 37 + j], acc);
    }
}

TEST(Matmul, ShapeMismatch) {
  EXPECT_THROW(matmul(Tensor<double>(Shape{2, 3}), Tensor<double>(Shape{2, 3})), DimensionError);
}

TEST(Softmax, UniformRow) {
  auto y = softmax_rows(Tensor<double>(Shape{1, 3}, {0, 0, 0}));
  for (double v : y.vec()) EXPECT_DOUBLE_EQ(v, 1.0 / 3.0);
}

TEST(Softmax, NoOverflow) {
  auto y = softmax_rows(Tensor<double>(Shape{1, 2}, {1000, 0}));
  EXPECT_NEAR(y[0], 1.0, 1e-12);
  EXPECT_NEAR(y[1], 0.0, 1e-12);
}

TEST(Softmax, MatchesExtendedPrecision) {
  auto y = softmax_rows(Tensor<double>(Shape{1, 3}, {1, 2, 3}));
  long double e[3] = {expl(1.0L), expl(2.0L), expl(3.0L)};
  const long double sum = e[0] + e[1] + e[2];
  for (int i = 0; i < 3; ++i) EXPECT_NEAR(y[i], static_cast<double>(e[i] / sum), 1e-15);
}

TEST(Softmax, FloatPathIsAccurate) {
  // Long rows take the vectorised exp; compare with long double on the same
  // float-rounded shifted inputs.
  Rng rng(5);
  const std::size_t n = 203;
  Tensor<float> x(Shape{3, n});
  for (auto& v : x.data()) v = static_cast<float>(rng.uniform(-30, 30));
  auto y = softmax_rows(x);
  for (std::size_t r = 0; r < 3; ++r) {
    float mx = -1e30f;
    long double sum = 0;
    for (std::size_t j = 0; j < n; ++j) mx = std::max(mx, x[r * n + j]);
    auto shifted = [&](std::size_t j) { return static_cast<long double>(x[r * n + j] - mx); };
    for (std::size_t j = 0; j < n; ++j) sum += expl(shifted(j));
    double row = 0;
    for (std::size_t j = 0; j < n; ++j) {
      const long double ref = expl(shifted(j)) / sum;
      EXPECT_NEAR(y[r * n + j], static_cast<double>(ref), 4e-7 * static_cast<double>(ref) + 1e-30);
      row += y[r * n + j];
    }
    EXPECT_NEAR(row, 1.0, 1e-5);
  }
}

TEST(Softmax, RejectsNonFinite) {
  EXPECT_THROW(softmax_rows(Tensor<double>(Shape{1, 2}, {NAN, 0})), NumericError);
  EXPECT_THROW(softmax_rows(Tensor<float>(Shape{1, 2}, {INFINITY, 0})), NumericError);
  std::vector<float> longrow(40, 0.0f);
  longrow[33] = -INFINITY;
  EXPECT_THROW(softmax_rows(Tensor<float>(Shape{1, 40}, longrow)), NumericError);
}

TEST(Linear, IdentityWeights) {
  Tensor<double> x(Shape{2, 2}, {1, 2, 3, 4});
  Tensor<double> w(Shape{2, 2}, {1, 0, 0, 1});
  EXPECT_EQ(linear(x, w, Tensor<double>(Shape{2})), x);
}

TEST(Linear, ZeroInputGivesBias) {
  Tensor<double> w(Shape{3, 2}, {1, 2, 3, 4, 5, 6});
  Tensor<double> b(Shape{2}, {0.5, -1});
  auto y = linear(Tensor<double>(Shape{4, 3}), w, b);
  for (std::size_t r = 0; r < 4; ++r) {
    EXPECT_EQ(y[r * 2], 0.5);
    EXPECT_EQ(y[r * 2 + 1], -1);
  }
}

TEST(Linear, MatchesRowDotProducts) {
  auto x = random_tensor({3, 4}, 7);
  auto w = random_tensor({4, 2}, 8);
  auto b = random_tensor({2}, 9);
  auto y = linear(x, w, b);
  for (std::size_t r = 0; r < 3; ++r)
    for (std::size_t j = 0; j < 2; ++j) {
      double acc = 0;
      for (std::size_t k = 0; k < 4; ++k) acc += x[r * 4 + k] * w[k * 2 + j];
      EXPECT_EQ(y[r * 2 + j], acc + b[j]);
    }
}

TEST(Linear, KeepsLeadingExtents) {
  auto y = linear(Tensor<double>(Shape{2, 3, 4}), Tensor<double>(Shape{4, 5}), Tensor<double>(Shape{5}));
  EXPECT_EQ(y.shape(), (Shape{2, 3, 5}));
  EXPECT_THROW(linear(Tensor<double>(Shape{2, 3}), Tensor<double>(Shape{4, 5}), Tensor<double>(Shape{5})),
               DimensionError);
}

TEST(SpaceToDepth, LayoutDefinition) {
  Tensor<double> x(Shape{4, 4, 1});
  for (std::size_t i = 0; i < 16; ++i) x[i] = static_cast<double>(i);
  auto y = space_to_depth(x, 2);
  EXPECT_EQ(y.shape(), (Shape{2, 2, 4}));
  // cell (0,0) = x(0,0), x(0,1), x(1,0), x(1,1)
  EXPECT_EQ(std::vector<double>(y.vec().begin(), y.vec().begin() + 4), (std::vector<double>{0, 1, 4, 5}));
}

TEST(SpaceToDepth, PatchOneIsIdentity) {
  auto x = random_tensor({3, 5, 2}, 4);
  EXPECT_EQ(space_to_depth(x, 1), x);
}

TEST(SpaceToDepth, MatchesIndexEnumeration) {
  const std::size_t H = 6, W = 6, C = 2, p = 3;
  auto x = random_tensor({H, W, C}, 11);
  auto y = space_to_depth(x, p);
  for (std::size_t i = 0; i < H / p; ++i)
    for (std::size_t j = 0; j < W / p; ++j)
      for (std::size_t a = 0; a < p; ++a)
        for (std::size_t b = 0; b < p; ++b)
          for (std::size_t c = 0; c < C; ++c)
            EXPECT_EQ(y.at({i, j, (a * p + b) * C + c}), x.at({i * p + a, j * p + b, c}));
  EXPECT_EQ(depth_to_space(y, p), x);
}

TEST(SpaceToDepth, NonDivisible) { EXPECT_THROW(space_to_depth(Tensor<double>(Shape{5, 4, 1}), 2), DimensionError); }

TEST(Neighborhood, FullCoverage) {
  auto idx = neighborhood_indices(5, 5, 2, 2, 5);
  std::vector<std::size_t> expect(25);
  for (std::size_t i = 0; i < 25; ++i) expect[i] = i;
  EXPECT_EQ(idx, expect);
}

TEST(Neighborhood, CornerClampingDuplicates) {
  auto idx = neighborhood_indices(5, 5, 0, 0, 3);
  // rows {0,0,1} x cols {0,0,1}
  std::vector<std::size_t> expect;
  for (std::size_t r : {0, 0, 1})
    for (std::size_t c : {0, 0, 1}) expect.push_back(r * 5 + c);
  EXPECT_EQ(idx, expect);
}

TEST(Neighborhood, SingleCell) {
  EXPECT_EQ(neighborhood_indices(5, 5, 3, 1, 1), std::vector<std::size_t>{16});
  EXPECT_EQ(neighborhood_indices(5, 5, 9, -2, 1), std::vector<std::size_t>{20});
}

TEST(Neighborhood, GatherMatchesEnumeration) {
  auto grid = random_tensor({4, 6, 3}, 12);
  for (std::ptrdiff_t cr : {0, 2, 3})
    for (std::ptrdiff_t cc : {0, 1, 5}) {
      auto got = neighborhood_gather(grid, cr, cc, 4);
      ASSERT_EQ(got.shape(), (Shape{16, 3}));
      std::size_t row = 0;
      for (std::ptrdiff_t dr = 0; dr < 4; ++dr)
        for (std::ptrdiff_t dc = 0; dc < 4; ++dc, ++row) {
          const auto r = std::clamp<std::ptrdiff_t>(cr - 2 + dr, 0, 3);
          const auto c = std::clamp<std::ptrdiff_t>(cc - 2 + dc, 0, 5);
          for (std::size_t k = 0; k < 3; ++k)
            EXPECT_EQ(got[row * 3 + k], grid.at({std::size_t(r), std::size_t(c), k}));
        }
    }
}

TEST(Instrumentation, CountsMatmulAndLinear) {
  MultiplyCountScope scope;
  matmul(Tensor<float>(Shape{3, 4}), Tensor<float>(Shape{4, 5}));
  EXPECT_EQ(scope.count(), 60u);
  linear(Tensor<float>(Shape{2, 3, 4}), Tensor<float>(Shape{4, 2}), Tensor<float>(Shape{2}));
  EXPECT_EQ(scope.count(), 60u + 48u);
  softmax_rows(Tensor<float>(Shape{3, 3}));
  EXPECT_EQ(scope.count(), 108u);
}

TEST(Instrumentation, OffByDefault) {
  instrumentation::reset();
  matmul(Tensor<float>(Shape{3, 4}), Tensor<float>(Shape{4, 5}));
  EXPECT_EQ(instrumentation::multiplies(), 0u);
}

TEST(Rng, DeterministicAndInRange) {
  Rng a(42), b(42);
  for (int i = 0; i < 100; ++i) {
    const double u = a.uniform();
    EXPECT_EQ(u, b.uniform());
    EXPECT_GE(u, 0.0);
    EXPECT_LT(u, 1.0);
  }
  for (int i = 0; i < 1000; ++i) EXPECT_LE(std::abs(a.truncated_normal(0.02)), 0.04);
  EXPECT_LT(a.below(7), 7u);
}
