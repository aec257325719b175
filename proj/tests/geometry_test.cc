/* Copyright (c) 2026 The mitodet Authors. All Rights Reserved.

Licensed under the Apache License, Version 2.0 (the "License");
you may not use this file except in compliance with the License.
You may obtain a copy of the License at

    http://www.apache.org/licenses/LICENSE-2.0

Unless required by applicable law or agreed to in writing, software
distributed under the License is distributed on an "AS IS" BASIS,
WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
See the License for the specific language governing permissions and
limitations under the License. */

#include <algorithm>
#include <cmath>
#include <random>
#include <set>

#include "gtest/gtest.h"
#include "mitodet/geometry.h"
#include "test_util.h"

namespace mitodet {
namespace {

using testing::random_box;

// Independent IoU from clamped corner overlaps.
double reference_iou(const Box& a, const Box& b) {
  const double x1 = std::max(a.x1, b.x1);
  const double y1 = std::max(a.y1, b.y1);
  const double x2 = std::min(a.x2, b.x2);
  const double y2 = std::min(a.y2, b.y2);
  const double inter = std::max(0.0, x2 - x1) * std::max(0.0, y2 - y1);
  return inter / ((a.x2 - a.x1) * (a.y2 - a.y1) + (b.x2 - b.x1) * (b.y2 - b.y1) - inter);
}

TEST(IouTest, KnownValues) {
  const Box a{0, 0, 10, 10};
  EXPECT_DOUBLE_EQ(iou(a, a), 1.0);
  EXPECT_DOUBLE_EQ(iou(a, {10, 0, 20, 10}), 0.0);
  EXPECT_DOUBLE_EQ(iou(a, {20, 20, 30, 30}), 0.0);
  // Half overlap: 50 / 150.
  EXPECT_NEAR(iou(a, {5, 0, 15, 10}), 1.0 / 3.0, 1e-12);
  // Contained box.
  EXPECT_NEAR(iou(a, {0, 0, 5, 5}), 0.25, 1e-12);
}

TEST(IouTest, SymmetricBoundedAndMatchesReference) {
  std::mt19937_64 rng(11);
  for (int i = 0; i < 2000; ++i) {
    const Box a = random_box(rng);
    const Box b = random_box(rng);
    const double v = iou(a, b);
    EXPECT_EQ(v, iou(b, a));
    EXPECT_GE(v, 0.0);
    EXPECT_LE(v, 1.0);
    EXPECT_NEAR(v, reference_iou(a, b), 1e-12);
    EXPECT_NEAR(iou(a, a), 1.0, 1e-12);
  }
}

TEST(AnchorTest, DefaultConfig) {
  const AnchorConfig c = AnchorConfig::Default();
  ASSERT_EQ(c.levels.size(), 3u);
  EXPECT_EQ(c.levels[0].stride, 8);
  EXPECT_EQ(c.levels[2].base_size, 64.0);
  EXPECT_EQ(c.anchors_per_cell(), 9u);
}

TEST(AnchorTest, CountMatchesClosedForm) {
  std::mt19937_64 rng(5);
  std::uniform_int_distribution<int> size(1, 300);
  std::uniform_int_distribution<int> count(1, 4);
  std::uniform_int_distribution<int> stride_pick(0, 5);
  const int strides[] = {1, 3, 4, 8, 16, 32};
  for (int trial = 0; trial < 100; ++trial) {
    AnchorConfig c;
    const int levels = count(rng);
    const std::size_t n_scales = count(rng);
    const std::size_t n_ratios = count(rng);
    for (int l = 0; l < levels; ++l) {
      AnchorLevel level;
      level.stride = strides[stride_pick(rng)];
      level.base_size = 4.0 * level.stride;
      level.scales.assign(n_scales, 1.0);
      level.aspect_ratios.assign(n_ratios, 1.0);
      for (std::size_t k = 0; k < n_scales; ++k) level.scales[k] = 1.0 + 0.3 * k;
      for (std::size_t k = 0; k < n_ratios; ++k) level.aspect_ratios[k] = 0.5 + 0.5 * k;
      c.levels.push_back(level);
    }
    const int h = size(rng);
    const int w = size(rng);
    std::size_t expected = 0;
    for (const auto& l : c.levels) {
      const std::size_t gh = (h + l.stride - 1) / l.stride;
      const std::size_t gw = (w + l.stride - 1) / l.stride;
      expected += gh * gw * n_scales * n_ratios;
    }
    const AnchorSet set = generate_anchors(h, w, c);
    EXPECT_EQ(set.size(), expected);
    EXPECT_EQ(set.flatten().size(), expected);
  }
}

TEST(AnchorTest, ShapesAndCentres) {
  AnchorConfig c;
  c.levels = {{16, 32.0, {1.0, 2.0}, {0.5, 1.0, 2.0}}};
  const AnchorSet set = generate_anchors(32, 48, c);
  const auto& level = set.levels[0];
  EXPECT_EQ(level.grid_height, 2);
  EXPECT_EQ(level.grid_width, 3);
  ASSERT_EQ(level.anchors.size(), 2u * 3u * 6u);
  // Cell (1, 2): centre (40, 24). Ratio-major, scale-minor.
  const std::size_t base = (1 * 3 + 2) * 6;
  const double ratios[] = {0.5, 1.0, 2.0};
  const double scales[] = {1.0, 2.0};
  for (int r = 0; r < 3; ++r) {
    for (int s = 0; s < 2; ++s) {
      const Box& a = level.anchors[base + r * 2 + s];
      EXPECT_NEAR(a.center_x(), 40.0, 1e-12);
      EXPECT_NEAR(a.center_y(), 24.0, 1e-12);
      EXPECT_NEAR(a.height() / a.width(), ratios[r], 1e-12);
      EXPECT_NEAR(a.area(), std::pow(32.0 * scales[s], 2), 1e-9);
    }
  }
}

TEST(AnchorTest, RejectsBadLevels) {
  AnchorConfig c;
  c.levels = {{0, 16.0, {1.0}, {1.0}}};
  EXPECT_THROW(generate_anchors(64, 64, c), std::invalid_argument);
  c.levels = {{8, 16.0, {}, {1.0}}};
  EXPECT_THROW(generate_anchors(64, 64, c), std::invalid_argument);
  c.levels = {{8, 16.0, {1.0}, {}}};
  EXPECT_THROW(generate_anchors(64, 64, c), std::invalid_argument);
  c.levels = {{8, 16.0, {1.0}, {1.0}}, {16, 32.0, {1.0, 2.0}, {1.0}}};
  EXPECT_THROW(c.anchors_per_cell(), std::invalid_argument);
}

TEST(BoxCodingTest, IdentityEncodesToZero) {
  const Box a{10, 20, 30, 60};
  const BoxDelta d = encode(a, a);
  EXPECT_EQ(d.dx, 0.0);
  EXPECT_EQ(d.dy, 0.0);
  EXPECT_EQ(d.dw, 0.0);
  EXPECT_EQ(d.dh, 0.0);
}

TEST(BoxCodingTest, KnownDelta) {
  const Box anchor{0, 0, 10, 20};
  const Box gt{5, 0, 25, 20};
  const BoxDelta d = encode(gt, anchor);
  EXPECT_NEAR(d.dx, 1.0, 1e-12);  // centre moved 10 px on a 10 px anchor
  EXPECT_NEAR(d.dy, 0.0, 1e-12);
  EXPECT_NEAR(d.dw, std::log(2.0), 1e-12);
  EXPECT_NEAR(d.dh, 0.0, 1e-12);
}

TEST(BoxCodingTest, RoundTrip) {
  std::mt19937_64 rng(3);
  for (int i = 0; i < 2000; ++i) {
    const Box gt = random_box(rng, 200.0, 1.0, 80.0);
    const Box anchor = random_box(rng, 200.0, 4.0, 80.0);
    const Box back = decode(encode(gt, anchor), anchor);
    EXPECT_NEAR(back.x1, gt.x1, 1e-6);
    EXPECT_NEAR(back.y1, gt.y1, 1e-6);
    EXPECT_NEAR(back.x2, gt.x2, 1e-6);
    EXPECT_NEAR(back.y2, gt.y2, 1e-6);
  }
}

TEST(BoxCodingTest, ZeroAreaRejected) {
  EXPECT_THROW(encode({0, 0, 0, 10}, {0, 0, 10, 10}), std::invalid_argument);
  EXPECT_THROW(encode({0, 0, 10, 10}, {5, 5, 5, 9}), std::invalid_argument);
}

TEST(ClipTest, ClampsToImage) {
  const Box b = clip({-5, 3, 120, 140}, 100, 128);
  EXPECT_EQ(b, (Box{0, 3, 100, 128}));
}

std::vector<ScoredBox> random_scored(std::mt19937_64& rng, int n) {
  std::uniform_real_distribution<double> score(0.0, 1.0);
  std::vector<ScoredBox> out;
  for (int i = 0; i < n; ++i) out.push_back({random_box(rng, 60.0, 2.0, 30.0), score(rng)});
  return out;
}

TEST(NmsTest, SuppressesOverlap) {
  const std::vector<ScoredBox> boxes{
      {{0, 0, 10, 10}, 0.9}, {{1, 1, 11, 11}, 0.8}, {{50, 50, 60, 60}, 0.7}};
  const auto kept = nms(boxes, 0.5);
  EXPECT_EQ(kept, (std::vector<std::size_t>{0, 2}));
}

TEST(NmsTest, EqualScoresPreferLowerIndex) {
  const std::vector<ScoredBox> boxes{{{0, 0, 10, 10}, 0.5}, {{0, 0, 10, 10}, 0.5}};
  EXPECT_EQ(nms(boxes, 0.5), (std::vector<std::size_t>{0}));
}

TEST(NmsTest, IdempotentAndPairwiseSeparated) {
  std::mt19937_64 rng(17);
  std::uniform_int_distribution<int> count(0, 40);
  for (int trial = 0; trial < 1000; ++trial) {
    const auto boxes = random_scored(rng, count(rng));
    const double thr = 0.3 + 0.4 * (trial % 3) / 2.0;
    const auto kept = nms(boxes, thr);
    std::vector<ScoredBox> survivors;
    for (std::size_t k : kept) survivors.push_back(boxes[k]);
    const auto again = nms(survivors, thr);
    ASSERT_EQ(again.size(), survivors.size());
    for (std::size_t i = 0; i < again.size(); ++i) EXPECT_EQ(again[i], i);
    for (std::size_t i = 0; i < survivors.size(); ++i) {
      for (std::size_t j = i + 1; j < survivors.size(); ++j) {
        EXPECT_LE(iou(survivors[i].box, survivors[j].box), thr);
      }
    }
    // Every suppressed box overlaps some kept box with a score at least as high.
    std::set<std::size_t> kept_set(kept.begin(), kept.end());
    for (std::size_t i = 0; i < boxes.size(); ++i) {
      if (kept_set.count(i)) continue;
      bool covered = false;
      for (std::size_t k : kept) {
        covered |= boxes[k].score >= boxes[i].score && iou(boxes[k].box, boxes[i].box) > thr;
      }
      EXPECT_TRUE(covered);
    }
  }
}

TEST(MatchAnchorsTest, ThresholdBands) {
  const std::vector<Box> gts{{0, 0, 10, 10}};
  const std::vector<Box> anchors{
      {0, 0, 10, 10},   // IoU 1
      {0, 0, 10, 8.0},  // IoU 0.8
      {0, 0, 10, 4.5},  // IoU 0.45 -> ignore
      {0, 0, 10, 3.0},  // IoU 0.3 -> negative
      {40, 40, 50, 50}};
  const auto labels = match_anchors(anchors, gts, 0.5, 0.4);
  EXPECT_EQ(labels, (std::vector<int>{0, 0, kIgnore, kNegative, kNegative}));
}

TEST(MatchAnchorsTest, BestAnchorForcedPositive) {
  const std::vector<Box> gts{{0, 0, 10, 10}, {100, 100, 104, 104}};
  const std::vector<Box> anchors{{0, 0, 10, 10}, {98, 98, 110, 110}, {200, 200, 210, 210}};
  const auto labels = match_anchors(anchors, gts, 0.5, 0.4);
  // Second gt only reaches IoU 16/144 yet keeps its best anchor.
  EXPECT_EQ(labels, (std::vector<int>{0, 1, kNegative}));
}

TEST(MatchAnchorsTest, NoGroundTruthAllNegative) {
  const std::vector<Box> anchors{{0, 0, 10, 10}, {5, 5, 9, 9}};
  const auto labels = match_anchors(anchors, {}, 0.5, 0.4);
  EXPECT_EQ(labels, (std::vector<int>{kNegative, kNegative}));
}

TEST(MatchAnchorsTest, RejectsInvertedThresholds) {
  EXPECT_THROW(match_anchors({}, {}, 0.3, 0.4), std::invalid_argument);
}

}  // namespace
}  // namespace mitodet
