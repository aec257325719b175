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

#pragma once

#include <span>
#include <vector>

#include "mitodet/geometry.h"

namespace mitodet {

// Floor applied to probabilities before taking logs.
inline constexpr double kProbabilityEpsilon = 1e-12;

struct TaskWeights {
  double detection = 1.0;
  double tumor = 1.0;
  double foreground = 1.0;

  friend bool operator==(const TaskWeights&, const TaskWeights&) = default;
};

struct LossConfig {
  double alpha = 0.25;
  double gamma = 2.0;
  int num_tumor_classes = 6;
  TaskWeights weights;

  // Throws std::invalid_argument when a field is out of range.
  void validate() const;

  friend bool operator==(const LossConfig&, const LossConfig&) = default;
};

// -log(p_c). `probs` must be a distribution over C >= 2 classes.
double cross_entropy(std::span<const double> probs, int true_class);

// -alpha_c * (1 - p_c)^gamma * log(p_c), p_c floored at kProbabilityEpsilon.
double focal_loss(double p_c, double alpha_c, double gamma);

double smooth_l1(double x);
double smooth_l1_grad(double x);

// Cross entropy on raw logits through a softmax. Writes dL/dlogit into
// `grad` when it is non-empty.
double softmax_cross_entropy(std::span<const double> logits, int true_class,
                             std::span<double> grad = {});

// Binary focal loss on a logit. The true-class probability is sigmoid(z) for
// a positive target and 1 - sigmoid(z) otherwise; alpha_c is alpha for a
// positive target and 1 - alpha otherwise.
double sigmoid_focal_loss(double logit, bool positive, double alpha,
                          double gamma, double* grad = nullptr);

struct DetectionTargets {
  // Per-anchor label from match_anchors.
  std::vector<int> labels;
  // Regression targets, meaningful only where labels[i] >= 0.
  std::vector<BoxDelta> deltas;
  std::size_t num_positive() const;
};

// Builds per-anchor targets for one image.
DetectionTargets assign_targets(std::span<const Box> anchors,
                                std::span<const Box> gts, double pos_threshold,
                                double neg_threshold);

struct DetectionLoss {
  double cls = 0.0;
  double reg = 0.0;
  std::vector<double> grad_logits;  // one per anchor
  std::vector<double> grad_deltas;  // four per anchor, (dx, dy, dw, dh)
};

// Focal classification summed over non-ignored anchors and divided by
// max(1, #positives); smooth-L1 regression averaged over positives.
DetectionLoss detection_loss(std::span<const double> cls_logits,
                             std::span<const double> deltas,
                             const DetectionTargets& targets, double alpha,
                             double gamma, bool with_grad = true);

// w_det * (cls + reg) + w_tumor * tumor_ce + w_fg * fg_focal.
double multitask_loss(double det_cls, double det_reg, double tumor_ce,
                      double fg_focal, const TaskWeights& weights);

// Raw head outputs for one image, as seen by the objective.
struct HeadOutputsView {
  std::span<const double> cls_logits;
  std::span<const double> deltas;
  std::span<const double> tumor_logits;  // empty when the head is absent
  double fg_logit = 0.0;
};

struct SampleTargets {
  DetectionTargets detection;
  int tumor_label = 0;
  bool foreground = false;
};

struct LossTerms {
  double det_cls = 0.0;
  double det_reg = 0.0;
  double tumor_ce = 0.0;
  double fg_focal = 0.0;
  double total = 0.0;
};

struct LossGradients {
  std::vector<double> cls_logits;
  std::vector<double> deltas;
  std::vector<double> tumor_logits;
  double fg_logit = 0.0;
};

// Full multi-task objective for one image. A term whose weight is zero is
// not evaluated and reported as 0; its gradient is exactly zero.
LossTerms multitask_objective(const HeadOutputsView& outputs,
                              const SampleTargets& targets,
                              const LossConfig& config,
                              LossGradients* grads = nullptr);

}  // namespace mitodet
