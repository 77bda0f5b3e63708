#include <gtest/gtest.h>

#include <vector>

#include "cffm/metrics.hpp"
#include "cffm/rng.hpp"
#include "cffm/synth.hpp"
#include "oracles.hpp"

using namespace cffm;

namespace {

MaskSequence seq(std::size_t h, std::size_t w, std::size_t classes, std::vector<std::vector<std::int32_t>> frames) {
  MaskSequence s;
  s.h = h;
  s.w = w;
  s.classes = classes;
  s.frames = std::move(frames);
  return s;
}

}  // namespace

TEST(VC, TwoThirdsCase) {
  auto gt = seq(2, 2, 2, {{0, 1, 1, 0}, {0, 1, 1, 1}});
  auto pred = seq(2, 2, 2, {{0, 0, 1, 1}, {0, 1, 1, 1}});
  const auto r = vc_n(gt, pred, 2);
  ASSERT_TRUE(r.value);
  EXPECT_DOUBLE_EQ(*r.value, 2.0 / 3.0);
  EXPECT_EQ(r.windows_used, 1u);
  EXPECT_EQ(r.windows_total, 1u);
}

TEST(VC, WindowOfOneAndIdentity) {
  Rng rng(0);
  MaskSequence gt = seq(3, 3, 3, {}), pred = seq(3, 3, 3, {});
  for (int f = 0; f < 5; ++f) {
    std::vector<std::int32_t> a(9), b(9);
    for (auto& v : a) v = static_cast<std::int32_t>(rng.below(3));
    for (auto& v : b) v = static_cast<std::int32_t>(rng.below(3));
    gt.frames.push_back(a);
    pred.frames.push_back(b);
  }
  EXPECT_EQ(*vc_n(gt, pred, 1).value, 1.0);
  for (std::size_t n = 1; n <= 5; ++n) {
    const auto r = vc_n(gt, gt, n);
    if (r.value) EXPECT_EQ(*r.value, 1.0);
  }
}

TEST(VC, StrictRequiresCorrectLabel) {
  auto gt = seq(1, 3, 3, {{0, 1, 2}, {0, 1, 2}});
  auto pred = seq(1, 3, 3, {{0, 2, 1}, {0, 2, 1}});
  EXPECT_EQ(*vc_n(gt, pred, 2).value, 1.0);
  EXPECT_DOUBLE_EQ(*vc_n(gt, pred, 2, true).value, 1.0 / 3.0);
}

TEST(VC, RelabelingInvariance) {
  auto gt = seq(2, 2, 3, {{0, 1, 2, 2}, {0, 1, 1, 2}, {0, 2, 1, 2}});
  auto pred = seq(2, 2, 3, {{0, 1, 2, 0}, {0, 1, 1, 0}, {2, 1, 1, 0}});
  auto perm = [](MaskSequence s) {
    for (auto& f : s.frames)
      for (auto& v : f) v = (v + 1) % 3;
    return s;
  };
  for (std::size_t n : {2u, 3u}) EXPECT_EQ(*vc_n(gt, pred, n).value, *vc_n(perm(gt), perm(pred), n).value);
}

TEST(VC, IgnoreAndUndefined) {
  auto gt = seq(1, 2, 2, {{255, 0}, {255, 1}});
  auto pred = seq(1, 2, 2, {{0, 0}, {0, 0}});
  const auto r = vc_n(gt, pred, 2);
  EXPECT_FALSE(r.value);
  EXPECT_EQ(r.windows_used, 0u);
  EXPECT_THROW(vc_n(gt, pred, 3), ContractError);
  EXPECT_THROW(vc_n(gt, pred, 0), ContractError);
  auto short_pred = seq(1, 2, 2, {{0, 0}});
  EXPECT_THROW(vc_n(gt, short_pred, 1), ContractError);
}

TEST(MVC, MeanOfDefined) {
  std::vector<VideoConsistency> v(3);
  v[0].value = 1.0;
  v[1].value = 0.5;
  EXPECT_EQ(mvc(v), 0.75);
  std::vector<VideoConsistency> one(1);
  one[0].value = 0.3;
  EXPECT_EQ(mvc(one), 0.3);
  std::vector<VideoConsistency> none(2);
  EXPECT_THROW(mvc(none), ContractError);
}

TEST(MVC, SixteenFrameClipsMatchEnumeration) {
  SynthClipSpec spec;
  spec.frames = 16;
  spec.height = spec.width = 24;
  spec.object_size = 4;
  spec.seed = 3;
  auto clips = gen_clips(spec, 2);
  Rng rng(1);
  for (std::size_t n : {8u, 16u}) {
    std::vector<VideoConsistency> per;
    double oracle = 0;
    for (const auto& clip : clips) {
      auto pred = clip.gt;
      for (auto& f : pred.frames)
        for (auto& v : f)
          if (rng.uniform() < 0.01) v = static_cast<std::int32_t>(rng.below(4));
      per.push_back(vc_n(clip.gt, pred, n));
      oracle += *oracle::vc(clip.gt, pred, n);
    }
    EXPECT_DOUBLE_EQ(mvc(per), oracle / 2.0) << "n=" << n;
  }
}

TEST(IoU, IdentityAndFullyWrong) {
  std::vector<MaskSequence> gt{seq(2, 2, 3, {{0, 1, 2, 2}, {1, 1, 0, 255}})};
  auto r = iou_report(gt, gt, 3);
  EXPECT_EQ(r.miou, 1.0);
  EXPECT_EQ(r.weighted_iou, 1.0);
  EXPECT_EQ(r.pixels, 7u);

  std::vector<MaskSequence> g1{seq(1, 3, 2, {{0, 0, 0}})}, p1{seq(1, 3, 2, {{1, 1, 1}})};
  auto w = iou_report(g1, p1, 2);
  EXPECT_EQ(*w.class_iou[0], 0.0);
  EXPECT_EQ(*w.class_iou[1], 0.0);
  EXPECT_EQ(w.miou, 0.0);
}

TEST(IoU, HandCountedFourByFour) {
  // class 1 occupies the right half; three pixels mislabeled:
  // two class-1 pixels predicted 0, one class-0 pixel predicted 1.
  std::vector<std::int32_t> g{0, 0, 1, 1, 0, 0, 1, 1, 0, 0, 1, 1, 0, 0, 1, 1};
  std::vector<std::int32_t> p = g;
  p[2] = 0;
  p[11] = 0;
  p[4] = 1;
  std::vector<MaskSequence> gt{seq(4, 4, 2, {g})}, pred{seq(4, 4, 2, {p})};
  const auto r = iou_report(gt, pred, 2);
  // class 0: TP 7, FP 2, FN 1 ; class 1: TP 6, FP 1, FN 2
  EXPECT_EQ(r.true_positive, (std::vector<std::uint64_t>{7, 6}));
  EXPECT_EQ(r.false_positive, (std::vector<std::uint64_t>{2, 1}));
  EXPECT_EQ(r.false_negative, (std::vector<std::uint64_t>{1, 2}));
  EXPECT_DOUBLE_EQ(*r.class_iou[0], 0.7);
  EXPECT_DOUBLE_EQ(*r.class_iou[1], 6.0 / 9.0);
  EXPECT_DOUBLE_EQ(r.miou, (0.7 + 6.0 / 9.0) / 2);
  EXPECT_DOUBLE_EQ(r.weighted_iou, 0.5 * 0.7 + 0.5 * 6.0 / 9.0);
}

TEST(IoU, BruteForceConfusion) {
  Rng rng(2);
  const std::size_t K = 8, H = 32, W = 32;
  std::vector<MaskSequence> gt, pred;
  for (int v = 0; v < 2; ++v) {
    MaskSequence g = seq(H, W, K, {}), p = seq(H, W, K, {});
    for (int f = 0; f < 3; ++f) {
      std::vector<std::int32_t> a(H * W), b(H * W);
      for (std::size_t i = 0; i < a.size(); ++i) {
        a[i] = rng.uniform() < 0.05 ? 255 : static_cast<std::int32_t>(rng.below(K - 1));
        b[i] = rng.uniform() < 0.7 && a[i] != 255 ? a[i] : static_cast<std::int32_t>(rng.below(K));
      }
      g.frames.push_back(a);
      p.frames.push_back(b);
    }
    gt.push_back(g);
    pred.push_back(p);
  }
  std::vector<std::vector<std::uint64_t>> conf(K, std::vector<std::uint64_t>(K, 0));
  for (std::size_t v = 0; v < 2; ++v)
    for (std::size_t f = 0; f < 3; ++f)
      for (std::size_t i = 0; i < H * W; ++i)
        if (gt[v].frames[f][i] != 255) ++conf[gt[v].frames[f][i]][pred[v].frames[f][i]];
  const auto r = iou_report(gt, pred, K);
  std::uint64_t total = 0;
  for (auto& row : conf)
    for (auto x : row) total += x;
  double miou = 0, wiou = 0;
  std::size_t present = 0;
  for (std::size_t k = 0; k < K; ++k) {
    std::uint64_t tp = conf[k][k], fp = 0, fn = 0, gtk = 0;
    for (std::size_t j = 0; j < K; ++j) {
      gtk += conf[k][j];
      if (j != k) fp += conf[j][k], fn += conf[k][j];
    }
    EXPECT_EQ(r.true_positive[k], tp);
    EXPECT_EQ(r.false_positive[k], fp);
    EXPECT_EQ(r.false_negative[k], fn);
    if (gtk == 0) {
      if (tp + fp + fn == 0) EXPECT_FALSE(r.class_iou[k]);
      continue;
    }
    const double iou = static_cast<double>(tp) / static_cast<double>(tp + fp + fn);
    miou += iou;
    wiou += iou * static_cast<double>(gtk) / static_cast<double>(total);
    ++present;
  }
  EXPECT_EQ(present, K - 1);
  EXPECT_NEAR(r.miou, miou / static_cast<double>(present), 1e-15);
  EXPECT_NEAR(r.weighted_iou, wiou, 1e-15);
  EXPECT_EQ(r.pixels, total);
}

TEST(IoU, Errors) {
  std::vector<MaskSequence> g{seq(1, 2, 2, {{0, 1}})}, p{seq(1, 2, 2, {{0, 2}})};
  EXPECT_THROW(iou_report(g, p, 2), ContractError);
  std::vector<MaskSequence> two{g[0], g[0]};
  EXPECT_THROW(iou_report(g, two, 2), ContractError);
  auto bad = seq(1, 2, 2, {{0, 3}});
  EXPECT_THROW(bad.validate(), ContractError);
}
