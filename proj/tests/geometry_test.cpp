#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>

#include "iris/error.hpp"
#include "iris/geometry.hpp"
#include "iris/rng.hpp"

using namespace iris;

namespace {

// Counts unit pixels covered by integer-coordinate boxes.
double raster_iou(const Box& a, const Box& b) {
  const int x0 = static_cast<int>(std::min(a.x_min, b.x_min)), x1 = static_cast<int>(std::max(a.x_max, b.x_max));
  const int y0 = static_cast<int>(std::min(a.y_min, b.y_min)), y1 = static_cast<int>(std::max(a.y_max, b.y_max));
  long inter = 0, uni = 0;
  for (int y = y0; y < y1; ++y)
    for (int x = x0; x < x1; ++x) {
      const double px = x + 0.5, py = y + 0.5;
      const bool in_a = px > a.x_min && px < a.x_max && py > a.y_min && py < a.y_max;
      const bool in_b = px > b.x_min && px < b.x_max && py > b.y_min && py < b.y_max;
      inter += in_a && in_b;
      uni += in_a || in_b;
    }
  return uni == 0 ? 0.0 : static_cast<double>(inter) / static_cast<double>(uni);
}

Box random_int_box(Rng& rng, int extent) {
  const int x0 = static_cast<int>(rng.index(static_cast<std::size_t>(extent)));
  const int y0 = static_cast<int>(rng.index(static_cast<std::size_t>(extent)));
  const int x1 = x0 + 1 + static_cast<int>(rng.index(static_cast<std::size_t>(extent - x0)));
  const int y1 = y0 + 1 + static_cast<int>(rng.index(static_cast<std::size_t>(extent - y0)));
  return Box{double(x0), double(y0), double(x1), double(y1)};
}

// The greedy result is the unique subset with no over-threshold pair in which every
// excluded box overlaps a higher-scoring member above the threshold.
std::vector<std::size_t> nms_subset_oracle(const std::vector<Detection>& d, double thresh) {
  const std::size_t n = d.size();
  std::vector<std::vector<std::size_t>> hits;
  for (std::uint32_t mask = 0; mask < (1u << n); ++mask) {
    bool ok = true;
    for (std::size_t i = 0; i < n && ok; ++i)
      for (std::size_t j = i + 1; j < n && ok; ++j)
        if ((mask >> i & 1) && (mask >> j & 1) && iou(d[i].box, d[j].box) > thresh) ok = false;
    for (std::size_t i = 0; i < n && ok; ++i) {
      if (mask >> i & 1) continue;
      bool covered = false;
      for (std::size_t j = 0; j < n; ++j)
        if ((mask >> j & 1) && d[j].objectness > d[i].objectness && iou(d[i].box, d[j].box) > thresh) covered = true;
      ok = covered;
    }
    if (!ok) continue;
    std::vector<std::size_t> members;
    for (std::size_t i = 0; i < n; ++i)
      if (mask >> i & 1) members.push_back(i);
    std::sort(members.begin(), members.end(),
              [&](std::size_t a, std::size_t b) { return d[a].objectness > d[b].objectness; });
    hits.push_back(members);
  }
  EXPECT_EQ(hits.size(), 1u);
  return hits.empty() ? std::vector<std::size_t>{} : hits.front();
}

}  // namespace

TEST(Anchors, CountForEightByEight) { EXPECT_EQ(generate_anchors(8, 8, AnchorGridConfig{}).size(), 576u); }

TEST(Anchors, SingleCellCenteredAtHalfStride) {
  const auto anchors = generate_anchors(1, 1, AnchorGridConfig{});
  ASSERT_EQ(anchors.size(), 9u);
  for (const Box& a : anchors) {
    EXPECT_NEAR(a.cx(), 8.0, 1e-12);
    EXPECT_NEAR(a.cy(), 8.0, 1e-12);
  }
}

TEST(Anchors, UnitScaleAndRatioGivesBaseSquare) {
  AnchorGridConfig cfg;
  cfg.scales = {1.0};
  cfg.ratios = {1.0};
  const Box a = generate_anchors(1, 1, cfg).front();
  EXPECT_DOUBLE_EQ(a.width(), 16.0);
  EXPECT_DOUBLE_EQ(a.height(), 16.0);
}

TEST(Anchors, OrderingAndShapes) {
  AnchorGridConfig cfg;
  cfg.stride = 4;
  cfg.base_size = 4;
  const auto anchors = generate_anchors(2, 3, cfg);
  // Cell (1,2) starts at index (1*3+2)*9; its third anchor is scale 1, ratio 2.
  const Box& a = anchors[(1 * 3 + 2) * 9 + 2];
  EXPECT_DOUBLE_EQ(a.cx(), 10.0);
  EXPECT_DOUBLE_EQ(a.cy(), 6.0);
  EXPECT_NEAR(a.width(), 4.0 * std::sqrt(2.0), 1e-12);
  EXPECT_NEAR(a.height(), 4.0 / std::sqrt(2.0), 1e-12);
  EXPECT_NEAR(a.width() / a.height(), 2.0, 1e-12);
}

TEST(Anchors, CountPropertyOverRandomConfigs) {
  Rng rng(17);
  for (int trial = 0; trial < 100; ++trial) {
    AnchorGridConfig cfg;
    cfg.stride = rng.uniform(1, 32);
    cfg.base_size = rng.uniform(1, 64);
    cfg.scales.assign(1 + rng.index(4), 0.0);
    cfg.ratios.assign(1 + rng.index(4), 0.0);
    for (auto& s : cfg.scales) s = rng.uniform(0.25, 8);
    for (auto& r : cfg.ratios) r = rng.uniform(0.2, 5);
    const int h = 1 + static_cast<int>(rng.index(20)), w = 1 + static_cast<int>(rng.index(20));
    EXPECT_EQ(generate_anchors(h, w, cfg).size(),
              static_cast<std::size_t>(h) * w * cfg.scales.size() * cfg.ratios.size());
  }
}

TEST(Anchors, RejectsBadConfig) {
  AnchorGridConfig cfg;
  cfg.scales = {1.0, -2.0, 4.0};
  EXPECT_THROW(generate_anchors(2, 2, cfg), ContractViolation);
  EXPECT_THROW(generate_anchors(0, 2, AnchorGridConfig{}), ContractViolation);
}

TEST(Iou, Examples) {
  const Box a{0, 0, 2, 2}, b{1, 1, 3, 3};
  EXPECT_DOUBLE_EQ(iou(a, a), 1.0);
  EXPECT_DOUBLE_EQ(iou(a, Box{5, 5, 6, 6}), 0.0);
  EXPECT_NEAR(iou(a, b), 1.0 / 7.0, 1e-12);
  EXPECT_DOUBLE_EQ(iou(Box{1, 1, 1, 1}, Box{1, 1, 1, 1}), 0.0);
}

TEST(Iou, SymmetricBoundedAndMatchesRasterOracle) {
  Rng rng(99);
  for (int trial = 0; trial < 1000; ++trial) {
    const Box a = random_int_box(rng, 64), b = random_int_box(rng, 64);
    const double v = iou(a, b);
    EXPECT_EQ(v, iou(b, a));
    EXPECT_GE(v, 0.0);
    EXPECT_LE(v, 1.0);
    EXPECT_NEAR(v, raster_iou(a, b), 0.02);
  }
}

TEST(LabelAnchors, PositiveNegativeAndForcedMatch) {
  const std::vector<Box> anchors{{0, 0, 10, 10}, {50, 50, 60, 60}, {20, 20, 30, 30}};
  const std::vector<Box> gt{{0, 0, 10, 10}};
  const auto labels = label_anchors(anchors, gt, 0.7, 0.3);
  EXPECT_EQ(labels.label[0], AnchorLabel::Positive);
  EXPECT_EQ(labels.matched_gt[0], 0);
  EXPECT_EQ(labels.label[1], AnchorLabel::Negative);
  EXPECT_EQ(labels.matched_gt[1], -1);

  // Best anchor overlaps only 0.4; it must still be positive.
  const std::vector<Box> gt2{{0, 0, 10, 14}};
  const std::vector<Box> anchors2{{0, 0, 10, 4}, {0, 0, 4, 4}, {40, 40, 50, 50}};
  double best = -1;
  std::size_t arg = 0;
  for (std::size_t i = 0; i < anchors2.size(); ++i)
    if (iou(anchors2[i], gt2[0]) > best) best = iou(anchors2[i], gt2[0]), arg = i;
  ASSERT_LT(best, 0.7);
  const auto l2 = label_anchors(anchors2, gt2, 0.7, 0.3);
  EXPECT_EQ(l2.label[arg], AnchorLabel::Positive);
  EXPECT_EQ(l2.matched_gt[arg], 0);
  EXPECT_EQ(l2.count(AnchorLabel::Positive), 1u);
}

TEST(LabelAnchors, EveryGtHasPositiveAndPositivesAreMatched) {
  Rng rng(5);
  AnchorGridConfig cfg;
  cfg.stride = 4;
  cfg.base_size = 4;
  cfg.scales = {2, 4, 8};
  const auto anchors = generate_anchors(16, 16, cfg);
  for (int trial = 0; trial < 50; ++trial) {
    std::vector<Box> gts;
    for (std::size_t g = 0; g < 1 + rng.index(3); ++g) gts.push_back(random_int_box(rng, 64));
    const auto labels = label_anchors(anchors, gts, 0.7, 0.3);
    std::vector<int> hits(gts.size(), 0);
    for (std::size_t a = 0; a < anchors.size(); ++a) {
      if (labels.label[a] != AnchorLabel::Positive) continue;
      ASSERT_GE(labels.matched_gt[a], 0);
      ++hits[static_cast<std::size_t>(labels.matched_gt[a])];
    }
    EXPECT_EQ(labels.count(AnchorLabel::Positive) + labels.count(AnchorLabel::Negative) +
                  labels.count(AnchorLabel::Ignore),
              anchors.size());
    for (int h : hits) EXPECT_GE(h, 1);
  }
  EXPECT_THROW(label_anchors({}, std::vector<Box>{{0, 0, 1, 1}}, 0.7, 0.3), ContractViolation);
}

TEST(Deltas, Examples) {
  const Box anchor = Box::from_center(8, 8, 16, 16);
  const Delta4 zero = encode_deltas(anchor, anchor);
  EXPECT_EQ(zero.dx, 0.0);
  EXPECT_EQ(zero.dw, 0.0);
  const Delta4 d = encode_deltas(anchor, Box::from_center(12, 8, 32, 16));
  EXPECT_DOUBLE_EQ(d.dx, 0.25);
  EXPECT_DOUBLE_EQ(d.dy, 0.0);
  EXPECT_DOUBLE_EQ(d.dw, std::log(2.0));
  EXPECT_DOUBLE_EQ(d.dh, 0.0);
  EXPECT_THROW(encode_deltas(Box{1, 1, 1, 5}, anchor), ContractViolation);
}

TEST(Deltas, RoundTrip) {
  Rng rng(123);
  for (int trial = 0; trial < 1000; ++trial) {
    const Box anchor = Box::from_center(rng.uniform(0, 300), rng.uniform(0, 300), rng.uniform(1, 128), rng.uniform(1, 128));
    const Box gt = Box::from_center(rng.uniform(0, 300), rng.uniform(0, 300), rng.uniform(1, 128), rng.uniform(1, 128));
    const Box back = decode_deltas(anchor, encode_deltas(anchor, gt));
    EXPECT_NEAR(back.x_min, gt.x_min, 1e-5);
    EXPECT_NEAR(back.y_min, gt.y_min, 1e-5);
    EXPECT_NEAR(back.x_max, gt.x_max, 1e-5);
    EXPECT_NEAR(back.y_max, gt.y_max, 1e-5);
  }
}

TEST(Nms, Examples) {
  EXPECT_TRUE(nms({}, 0.5).empty());
  const Detection only{{0, 0, 4, 4}, 0.3, std::nullopt};
  EXPECT_EQ(nms({only}, 0.5).size(), 1u);
  const auto dup = nms({{{0, 0, 4, 4}, 0.8, {}}, {{0, 0, 4, 4}, 0.9, {}}}, 0.5);
  ASSERT_EQ(dup.size(), 1u);
  EXPECT_EQ(dup[0].objectness, 0.9);

  // A-B and B-C overlap at IoU 0.6; A-C overlap at 1/3, below the threshold.
  const Detection a{{0, 0, 10, 10}, 0.9, {}}, b{{2.5, 0, 12.5, 10}, 0.8, {}}, c{{5, 0, 15, 10}, 0.7, {}};
  ASSERT_NEAR(iou(a.box, b.box), 0.6, 1e-12);
  ASSERT_NEAR(iou(b.box, c.box), 0.6, 1e-12);
  const auto kept = nms({c, a, b}, 0.5);
  ASSERT_EQ(kept.size(), 2u);
  EXPECT_EQ(kept[0].box, a.box);
  EXPECT_EQ(kept[1].box, c.box);
}

TEST(Nms, MatchesSubsetOracleAndIsOrderInvariant) {
  Rng rng(2024);
  for (int trial = 0; trial < 200; ++trial) {
    const std::size_t n = 1 + rng.index(5);
    std::vector<Detection> dets;
    for (std::size_t i = 0; i < n; ++i) {
      Box b = random_int_box(rng, 16);
      dets.push_back(Detection{b, 0.01 + 0.98 * rng.uniform(), std::nullopt});
    }
    const double thresh = rng.uniform(0.1, 0.9);
    const auto expected = nms_subset_oracle(dets, thresh);
    const auto kept = nms(dets, thresh);
    ASSERT_EQ(kept.size(), expected.size());
    for (std::size_t i = 0; i < kept.size(); ++i) EXPECT_EQ(kept[i].box, dets[expected[i]].box);
    for (std::size_t i = 0; i < kept.size(); ++i)
      for (std::size_t j = i + 1; j < kept.size(); ++j) EXPECT_LE(iou(kept[i].box, kept[j].box), thresh);

    auto shuffled = dets;
    rng.shuffle(shuffled);
    const auto again = nms(shuffled, thresh);
    ASSERT_EQ(again.size(), kept.size());
    for (std::size_t i = 0; i < kept.size(); ++i) EXPECT_EQ(again[i].box, kept[i].box);
  }
}

TEST(ClipBox, ClampsToImage) {
  const Box b = clip_box(Box{-3, 5, 70, 80}, 64, 64);
  EXPECT_EQ(b, (Box{0, 5, 64, 64}));
}
