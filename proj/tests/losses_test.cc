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

#include <cmath>
#include <numeric>
#include <random>
#include <vector>

#include "gtest/gtest.h"
#include "mitodet/losses.h"

namespace mitodet {
namespace {

double sigmoid(double z) { return 1.0 / (1.0 + std::exp(-z)); }

TEST(FocalLossTest, KnownValue) {
  // 0.25 * 0.5^2 * ln 2
  EXPECT_NEAR(focal_loss(0.5, 0.25, 2.0), 0.0625 * std::log(2.0), 1e-12);
  EXPECT_NEAR(focal_loss(0.5, 0.25, 2.0), 0.0433217, 1e-6);
}

TEST(FocalLossTest, ReducesToCrossEntropy) {
  std::mt19937_64 rng(1);
  std::uniform_real_distribution<double> u(1e-9, 1.0);
  for (int i = 0; i < 1000; ++i) {
    const double p = u(rng);
    const std::vector<double> probs{p, 1.0 - p};
    EXPECT_NEAR(focal_loss(p, 1.0, 0.0), cross_entropy(probs, 0), 1e-9);
  }
}

TEST(FocalLossTest, ConfidentPredictionDownWeighted) {
  EXPECT_LT(focal_loss(0.9, 1.0, 2.0), focal_loss(0.9, 1.0, 0.0) * 0.011);
  EXPECT_DOUBLE_EQ(focal_loss(1.0, 0.25, 2.0), 0.0);
}

TEST(FocalLossTest, ZeroProbabilityIsFinite) {
  const double v = focal_loss(0.0, 0.25, 2.0);
  EXPECT_TRUE(std::isfinite(v));
  EXPECT_NEAR(v, -0.25 * std::log(kProbabilityEpsilon), 1e-9);
}

TEST(FocalLossTest, RejectsBadInputs) {
  EXPECT_THROW(focal_loss(1.5, 0.25, 2.0), std::invalid_argument);
  EXPECT_THROW(focal_loss(-0.1, 0.25, 2.0), std::invalid_argument);
  EXPECT_THROW(focal_loss(0.5, 0.25, -1.0), std::invalid_argument);
}

TEST(CrossEntropyTest, KnownValues) {
  const std::vector<double> probs{0.25, 0.25, 0.5};
  EXPECT_NEAR(cross_entropy(probs, 0), std::log(4.0), 1e-12);
  EXPECT_NEAR(cross_entropy(probs, 0), 1.386294, 1e-6);
  const std::vector<double> onehot{0.0, 1.0, 0.0};
  EXPECT_DOUBLE_EQ(cross_entropy(onehot, 1), 0.0);
  EXPECT_NEAR(cross_entropy(onehot, 0), -std::log(kProbabilityEpsilon), 1e-9);
}

TEST(CrossEntropyTest, Errors) {
  const std::vector<double> probs{0.5, 0.5};
  EXPECT_THROW(cross_entropy(probs, 2), std::out_of_range);
  EXPECT_THROW(cross_entropy(probs, -1), std::out_of_range);
  const std::vector<double> bad_sum{0.5, 0.6};
  EXPECT_THROW(cross_entropy(bad_sum, 0), std::invalid_argument);
}

TEST(SmoothL1Test, Piecewise) {
  EXPECT_DOUBLE_EQ(smooth_l1(0.5), 0.125);
  EXPECT_DOUBLE_EQ(smooth_l1(-2.0), 1.5);
  EXPECT_DOUBLE_EQ(smooth_l1(1.0), 0.5);
  EXPECT_DOUBLE_EQ(smooth_l1_grad(0.3), 0.3);
  EXPECT_DOUBLE_EQ(smooth_l1_grad(-4.0), -1.0);
}

TEST(SoftmaxCrossEntropyTest, MatchesExplicitSoftmax) {
  std::mt19937_64 rng(2);
  std::normal_distribution<double> n(0.0, 3.0);
  for (int trial = 0; trial < 200; ++trial) {
    std::vector<double> z(6);
    for (double& v : z) v = n(rng);
    double sum = 0.0;
    for (double v : z) sum += std::exp(v);
    std::vector<double> p(6);
    for (int i = 0; i < 6; ++i) p[i] = std::exp(z[i]) / sum;
    const int c = trial % 6;
    EXPECT_NEAR(softmax_cross_entropy(z, c), cross_entropy(p, c), 1e-9);
  }
}

TEST(SigmoidFocalLossTest, MatchesProbabilityForm) {
  std::mt19937_64 rng(3);
  std::uniform_real_distribution<double> z(-8.0, 8.0);
  for (int i = 0; i < 500; ++i) {
    const double logit = z(rng);
    const double p = sigmoid(logit);
    EXPECT_NEAR(sigmoid_focal_loss(logit, true, 0.25, 2.0), focal_loss(p, 0.25, 2.0), 1e-9);
    EXPECT_NEAR(sigmoid_focal_loss(logit, false, 0.25, 2.0),
                focal_loss(1.0 - p, 0.75, 2.0), 1e-9);
  }
}

TEST(SigmoidFocalLossTest, GradientMatchesFiniteDifference) {
  std::mt19937_64 rng(4);
  std::uniform_real_distribution<double> z(-6.0, 6.0);
  std::uniform_real_distribution<double> g(0.0, 4.0);
  const double h = 1e-5;
  for (int i = 0; i < 500; ++i) {
    const double logit = z(rng);
    const double gamma = g(rng);
    const bool pos = i % 2 == 0;
    double analytic = 0.0;
    sigmoid_focal_loss(logit, pos, 0.25, gamma, &analytic);
    const double fd = (sigmoid_focal_loss(logit + h, pos, 0.25, gamma) -
                       sigmoid_focal_loss(logit - h, pos, 0.25, gamma)) /
                      (2.0 * h);
    EXPECT_NEAR(analytic, fd, 1e-6 + 1e-5 * std::abs(fd));
  }
}

TEST(SigmoidFocalLossTest, ExtremeLogitsStayFinite) {
  double grad = 0.0;
  EXPECT_TRUE(std::isfinite(sigmoid_focal_loss(-800.0, true, 0.25, 2.0, &grad)));
  EXPECT_EQ(grad, 0.0);
  EXPECT_TRUE(std::isfinite(sigmoid_focal_loss(800.0, true, 0.25, 2.0, &grad)));
  EXPECT_NEAR(grad, 0.0, 1e-12);
}

DetectionTargets hand_targets() {
  DetectionTargets t;
  t.labels = {0, kNegative, kIgnore, 1};
  t.deltas = {{0.1, -0.2, 0.3, 0.0}, {}, {}, {-1.5, 0.5, 0.0, 2.0}};
  return t;
}

TEST(DetectionLossTest, NormalisedByPositives) {
  const DetectionTargets t = hand_targets();
  const std::vector<double> logits{0.5, -1.0, 3.0, 2.0};
  const std::vector<double> deltas(16, 0.0);
  const DetectionLoss l = detection_loss(logits, deltas, t, 0.25, 2.0);
  const double cls = sigmoid_focal_loss(0.5, true, 0.25, 2.0) +
                     sigmoid_focal_loss(-1.0, false, 0.25, 2.0) +
                     sigmoid_focal_loss(2.0, true, 0.25, 2.0);
  EXPECT_NEAR(l.cls, cls / 2.0, 1e-12);
  const double reg = smooth_l1(-0.1) + smooth_l1(0.2) + smooth_l1(-0.3) +
                     smooth_l1(1.5) + smooth_l1(-0.5) + smooth_l1(-2.0);
  EXPECT_NEAR(l.reg, reg / 2.0, 1e-12);
  EXPECT_EQ(l.grad_logits[2], 0.0);  // ignored anchor
  for (int k = 0; k < 4; ++k) EXPECT_EQ(l.grad_deltas[4 + k], 0.0);
}

TEST(DetectionLossTest, NoPositives) {
  DetectionTargets t;
  t.labels = {kNegative, kNegative};
  t.deltas.resize(2);
  const std::vector<double> logits{-2.0, 1.0};
  const std::vector<double> deltas(8, 0.3);
  const DetectionLoss l = detection_loss(logits, deltas, t, 0.25, 2.0);
  EXPECT_EQ(l.reg, 0.0);
  EXPECT_NEAR(l.cls,
              sigmoid_focal_loss(-2.0, false, 0.25, 2.0) +
                  sigmoid_focal_loss(1.0, false, 0.25, 2.0),
              1e-12);
}

TEST(DetectionLossTest, Errors) {
  DetectionTargets t;
  EXPECT_THROW(detection_loss({}, {}, t, 0.25, 2.0), std::invalid_argument);
  t = hand_targets();
  const std::vector<double> logits(4, 0.0);
  const std::vector<double> short_deltas(8, 0.0);
  EXPECT_THROW(detection_loss(logits, short_deltas, t, 0.25, 2.0), std::invalid_argument);
}

TEST(AssignTargetsTest, EncodesPositives) {
  const std::vector<Box> anchors{{0, 0, 10, 10}, {50, 50, 60, 60}};
  const std::vector<Box> gts{{1, 1, 11, 11}};
  const DetectionTargets t = assign_targets(anchors, gts, 0.5, 0.4);
  EXPECT_EQ(t.labels, (std::vector<int>{0, kNegative}));
  EXPECT_EQ(t.num_positive(), 1u);
  EXPECT_NEAR(t.deltas[0].dx, 0.1, 1e-12);
  EXPECT_NEAR(t.deltas[0].dw, 0.0, 1e-12);
}

TEST(MultitaskLossTest, WeightedSum) {
  EXPECT_DOUBLE_EQ(multitask_loss(1.0, 2.0, 3.0, 4.0, {1.0, 1.0, 1.0}), 10.0);
  EXPECT_DOUBLE_EQ(multitask_loss(1.0, 2.0, 3.0, 4.0, {1.0, 0.0, 0.0}), 3.0);
  EXPECT_DOUBLE_EQ(multitask_loss(1.0, 2.0, 3.0, 4.0, {0.5, 2.0, 0.25}), 8.5);
  EXPECT_THROW(multitask_loss(1.0, 1.0, 1.0, 1.0, {-1.0, 1.0, 1.0}), std::invalid_argument);
  EXPECT_THROW(multitask_loss(NAN, 1.0, 1.0, 1.0, {}), std::invalid_argument);
}

TEST(LossConfigTest, Validate) {
  LossConfig c;
  EXPECT_NO_THROW(c.validate());
  c.weights.tumor = -0.5;
  EXPECT_THROW(c.validate(), std::invalid_argument);
  c = LossConfig{};
  c.alpha = 0.0;
  EXPECT_THROW(c.validate(), std::invalid_argument);
  c = LossConfig{};
  c.num_tumor_classes = 1;
  EXPECT_THROW(c.validate(), std::invalid_argument);
}

struct Problem {
  std::vector<double> cls;
  std::vector<double> deltas;
  std::vector<double> tumor;
  double fg = 0.0;
  SampleTargets targets;
};

Problem random_problem(std::mt19937_64& rng) {
  std::normal_distribution<double> n(0.0, 1.5);
  Problem p;
  const int anchors = 12;
  for (int i = 0; i < anchors; ++i) p.cls.push_back(n(rng));
  for (int i = 0; i < 4 * anchors; ++i) p.deltas.push_back(n(rng));
  for (int i = 0; i < 6; ++i) p.tumor.push_back(n(rng));
  p.fg = n(rng);
  std::uniform_int_distribution<int> label(-2, 2);
  p.targets.detection.labels.resize(anchors);
  p.targets.detection.deltas.resize(anchors);
  for (int i = 0; i < anchors; ++i) {
    p.targets.detection.labels[i] = label(rng);
    p.targets.detection.deltas[i] = {n(rng), n(rng), n(rng), n(rng)};
  }
  p.targets.tumor_label = static_cast<int>(rng() % 6);
  p.targets.foreground = rng() % 2 == 0;
  return p;
}

double objective(const Problem& p, const LossConfig& c) {
  return multitask_objective({p.cls, p.deltas, p.tumor, p.fg}, p.targets, c).total;
}

TEST(MultitaskObjectiveTest, GradientMatchesFiniteDifference) {
  std::mt19937_64 rng(9);
  LossConfig c;
  c.weights = {1.0, 0.7, 1.3};
  const double h = 1e-5;
  for (int trial = 0; trial < 20; ++trial) {
    Problem p = random_problem(rng);
    LossGradients g;
    multitask_objective({p.cls, p.deltas, p.tumor, p.fg}, p.targets, c, &g);
    auto check = [&](double& x, double analytic) {
      const double saved = x;
      x = saved + h;
      const double up = objective(p, c);
      x = saved - h;
      const double down = objective(p, c);
      x = saved;
      const double fd = (up - down) / (2.0 * h);
      EXPECT_NEAR(analytic, fd, 1e-6 + 1e-4 * std::abs(fd));
    };
    for (std::size_t i = 0; i < p.cls.size(); ++i) check(p.cls[i], g.cls_logits[i]);
    for (std::size_t i = 0; i < p.deltas.size(); ++i) {
      // Smooth L1 has a kink at |x| = 1; skip points within the FD stencil.
      const std::size_t a = i / 4;
      const int label = p.targets.detection.labels[a];
      if (label >= 0) {
        const auto& t = p.targets.detection.deltas[a];
        const double target[4] = {t.dx, t.dy, t.dw, t.dh};
        if (std::abs(std::abs(p.deltas[i] - target[i % 4]) - 1.0) < 10 * h) continue;
      }
      check(p.deltas[i], g.deltas[i]);
    }
    for (std::size_t i = 0; i < p.tumor.size(); ++i) check(p.tumor[i], g.tumor_logits[i]);
    check(p.fg, g.fg_logit);
  }
}

TEST(MultitaskObjectiveTest, ZeroWeightsRecoverDetectionOnly) {
  std::mt19937_64 rng(10);
  LossConfig full;
  LossConfig det_only;
  det_only.weights = {1.0, 0.0, 0.0};
  for (int trial = 0; trial < 20; ++trial) {
    const Problem p = random_problem(rng);
    LossGradients g;
    const LossTerms t =
        multitask_objective({p.cls, p.deltas, p.tumor, p.fg}, p.targets, det_only, &g);
    const LossTerms without_heads =
        multitask_objective({p.cls, p.deltas, {}, p.fg}, p.targets, det_only);
    EXPECT_EQ(t.total, without_heads.total);
    EXPECT_EQ(t.total, t.det_cls + t.det_reg);
    EXPECT_EQ(t.tumor_ce, 0.0);
    EXPECT_EQ(t.fg_focal, 0.0);
    for (double v : g.tumor_logits) EXPECT_EQ(v, 0.0);
    EXPECT_EQ(g.fg_logit, 0.0);
    const LossTerms f = multitask_objective({p.cls, p.deltas, p.tumor, p.fg}, p.targets, full);
    EXPECT_EQ(f.det_cls, t.det_cls);
    EXPECT_GT(f.total, t.total);
  }
}

TEST(MultitaskObjectiveTest, MissingTumorHeadWithWeightThrows) {
  std::mt19937_64 rng(12);
  const Problem p = random_problem(rng);
  EXPECT_THROW(multitask_objective({p.cls, p.deltas, {}, p.fg}, p.targets, LossConfig{}),
               std::invalid_argument);
}

}  // namespace
}  // namespace mitodet
