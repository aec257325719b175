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

#include "mitodet/losses.h"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <stdexcept>
#include <string>

namespace mitodet {
namespace {

bool finite_nonnegative(double v) { return std::isfinite(v) && v >= 0.0; }

// log(sigmoid(z)) without overflow.
double log_sigmoid(double z) {
  return z >= 0.0 ? -std::log1p(std::exp(-z)) : z - std::log1p(std::exp(z));
}

}  // namespace

void LossConfig::validate() const {
  if (!(alpha > 0.0 && alpha <= 1.0)) {
    throw std::invalid_argument("loss.alpha must lie in (0, 1]");
  }
  if (!finite_nonnegative(gamma)) {
    throw std::invalid_argument("loss.gamma must be finite and >= 0");
  }
  if (num_tumor_classes < 2) {
    throw std::invalid_argument("loss.num_tumor_classes must be >= 2");
  }
  if (!finite_nonnegative(weights.detection) ||
      !finite_nonnegative(weights.tumor) ||
      !finite_nonnegative(weights.foreground)) {
    throw std::invalid_argument("task weights must be finite and >= 0");
  }
}

double cross_entropy(std::span<const double> probs, int true_class) {
  if (probs.size() < 2) {
    throw std::invalid_argument("cross_entropy: need at least two classes");
  }
  if (true_class < 0 || static_cast<std::size_t>(true_class) >= probs.size()) {
    throw std::out_of_range("cross_entropy: class index " +
                            std::to_string(true_class) + " out of range");
  }
  double sum = 0.0;
  for (double p : probs) {
    if (!(p >= 0.0 && p <= 1.0)) {
      throw std::invalid_argument("cross_entropy: probability outside [0, 1]");
    }
    sum += p;
  }
  if (std::abs(sum - 1.0) > 1e-6) {
    throw std::invalid_argument("cross_entropy: probabilities do not sum to 1");
  }
  return -std::log(std::max(probs[true_class], kProbabilityEpsilon));
}

double focal_loss(double p_c, double alpha_c, double gamma) {
  if (!(p_c >= 0.0 && p_c <= 1.0)) {
    throw std::invalid_argument("focal_loss: p_c outside [0, 1]");
  }
  if (!(alpha_c > 0.0) || !finite_nonnegative(gamma)) {
    throw std::invalid_argument("focal_loss: need alpha_c > 0 and gamma >= 0");
  }
  const double p = std::max(p_c, kProbabilityEpsilon);
  return -alpha_c * std::pow(1.0 - p, gamma) * std::log(p);
}

double smooth_l1(double x) {
  const double a = std::abs(x);
  return a < 1.0 ? 0.5 * x * x : a - 0.5;
}

double smooth_l1_grad(double x) {
  if (x >= 1.0) return 1.0;
  if (x <= -1.0) return -1.0;
  return x;
}

double softmax_cross_entropy(std::span<const double> logits, int true_class,
                             std::span<double> grad) {
  if (logits.size() < 2) {
    throw std::invalid_argument("softmax_cross_entropy: need >= 2 classes");
  }
  if (true_class < 0 || static_cast<std::size_t>(true_class) >= logits.size()) {
    throw std::out_of_range("softmax_cross_entropy: class index " +
                            std::to_string(true_class) + " out of range");
  }
  const double zmax = *std::max_element(logits.begin(), logits.end());
  double sum = 0.0;
  for (double z : logits) sum += std::exp(z - zmax);
  const double lse = zmax + std::log(sum);
  const double nll = lse - logits[true_class];
  const double cap = -std::log(kProbabilityEpsilon);
  const bool clamped = nll > cap;

  if (!grad.empty()) {
    if (grad.size() != logits.size()) {
      throw std::invalid_argument("softmax_cross_entropy: gradient size");
    }
    for (std::size_t i = 0; i < logits.size(); ++i) {
      if (clamped) {
        grad[i] = 0.0;
      } else {
        grad[i] = std::exp(logits[i] - lse) -
                  (static_cast<int>(i) == true_class ? 1.0 : 0.0);
      }
    }
  }
  return clamped ? cap : nll;
}

double sigmoid_focal_loss(double logit, bool positive, double alpha,
                          double gamma, double* grad) {
  const double sign = positive ? 1.0 : -1.0;
  const double alpha_c = positive ? alpha : 1.0 - alpha;
  const double z = sign * logit;
  double log_p = log_sigmoid(z);
  const double p = std::exp(log_p);
  const double q = -std::expm1(log_p);  // 1 - p, accurate for p near 1
  const bool floored = p < kProbabilityEpsilon;
  if (floored) log_p = std::log(kProbabilityEpsilon);

  const double modulator = gamma == 0.0 ? 1.0 : std::pow(q, gamma);
  const double value = -alpha_c * modulator * log_p;
  if (grad != nullptr) {
    // d/dz of -a q^g log p with dp/dz = p q: a q^g (g p log p - q).
    *grad = floored ? 0.0 : sign * alpha_c * modulator * (gamma * p * log_p - q);
  }
  return value;
}

std::size_t DetectionTargets::num_positive() const {
  return static_cast<std::size_t>(
      std::count_if(labels.begin(), labels.end(), [](int l) { return l >= 0; }));
}

DetectionTargets assign_targets(std::span<const Box> anchors,
                                std::span<const Box> gts, double pos_threshold,
                                double neg_threshold) {
  DetectionTargets targets;
  targets.labels = match_anchors(anchors, gts, pos_threshold, neg_threshold);
  targets.deltas.assign(anchors.size(), BoxDelta{});
  for (std::size_t a = 0; a < anchors.size(); ++a) {
    const int g = targets.labels[a];
    if (g >= 0) targets.deltas[a] = encode(gts[g], anchors[a]);
  }
  return targets;
}

DetectionLoss detection_loss(std::span<const double> cls_logits,
                             std::span<const double> deltas,
                             const DetectionTargets& targets, double alpha,
                             double gamma, bool with_grad) {
  const std::size_t n = cls_logits.size();
  if (n == 0) throw std::invalid_argument("detection_loss: no anchors");
  if (deltas.size() != 4 * n || targets.labels.size() != n ||
      targets.deltas.size() != n) {
    throw std::invalid_argument("detection_loss: size mismatch");
  }

  DetectionLoss out;
  if (with_grad) {
    out.grad_logits.assign(n, 0.0);
    out.grad_deltas.assign(4 * n, 0.0);
  }
  const std::size_t npos = targets.num_positive();
  const double cls_norm = 1.0 / static_cast<double>(std::max<std::size_t>(npos, 1));

  double cls_sum = 0.0;
  double reg_sum = 0.0;
  for (std::size_t a = 0; a < n; ++a) {
    const int label = targets.labels[a];
    if (label == kIgnore) continue;
    double g = 0.0;
    cls_sum += sigmoid_focal_loss(cls_logits[a], label >= 0, alpha, gamma,
                                  with_grad ? &g : nullptr);
    if (with_grad) out.grad_logits[a] = g * cls_norm;

    if (label >= 0) {
      const BoxDelta& t = targets.deltas[a];
      const double target[4] = {t.dx, t.dy, t.dw, t.dh};
      for (int k = 0; k < 4; ++k) {
        const double diff = deltas[4 * a + k] - target[k];
        reg_sum += smooth_l1(diff);
        if (with_grad) out.grad_deltas[4 * a + k] = smooth_l1_grad(diff) * cls_norm;
      }
    }
  }
  out.cls = cls_sum * cls_norm;
  out.reg = npos > 0 ? reg_sum * cls_norm : 0.0;
  return out;
}

double multitask_loss(double det_cls, double det_reg, double tumor_ce,
                      double fg_focal, const TaskWeights& weights) {
  if (!finite_nonnegative(weights.detection) ||
      !finite_nonnegative(weights.tumor) ||
      !finite_nonnegative(weights.foreground)) {
    throw std::invalid_argument("multitask_loss: weights must be >= 0");
  }
  if (!std::isfinite(det_cls) || !std::isfinite(det_reg) ||
      !std::isfinite(tumor_ce) || !std::isfinite(fg_focal)) {
    throw std::invalid_argument("multitask_loss: non-finite component");
  }
  return weights.detection * (det_cls + det_reg) + weights.tumor * tumor_ce +
         weights.foreground * fg_focal;
}

LossTerms multitask_objective(const HeadOutputsView& outputs,
                              const SampleTargets& targets,
                              const LossConfig& config, LossGradients* grads) {
  const TaskWeights& w = config.weights;
  LossTerms terms;

  const DetectionLoss det =
      detection_loss(outputs.cls_logits, outputs.deltas, targets.detection,
                     config.alpha, config.gamma, grads != nullptr);
  terms.det_cls = det.cls;
  terms.det_reg = det.reg;

  std::vector<double> tumor_grad;
  if (w.tumor > 0.0) {
    if (outputs.tumor_logits.empty()) {
      throw std::invalid_argument(
          "tumor weight is nonzero but the tumor head is absent");
    }
    if (grads != nullptr) tumor_grad.assign(outputs.tumor_logits.size(), 0.0);
    terms.tumor_ce = softmax_cross_entropy(outputs.tumor_logits,
                                           targets.tumor_label, tumor_grad);
  }

  double fg_grad = 0.0;
  if (w.foreground > 0.0) {
    terms.fg_focal =
        sigmoid_focal_loss(outputs.fg_logit, targets.foreground, config.alpha,
                           config.gamma, grads != nullptr ? &fg_grad : nullptr);
  }

  terms.total = multitask_loss(terms.det_cls, terms.det_reg, terms.tumor_ce,
                               terms.fg_focal, w);

  if (grads != nullptr) {
    grads->cls_logits = det.grad_logits;
    grads->deltas = det.grad_deltas;
    for (double& g : grads->cls_logits) g *= w.detection;
    for (double& g : grads->deltas) g *= w.detection;
    grads->tumor_logits.assign(outputs.tumor_logits.size(), 0.0);
    for (std::size_t i = 0; i < tumor_grad.size(); ++i) {
      grads->tumor_logits[i] = w.tumor * tumor_grad[i];
    }
    grads->fg_logit = w.foreground * fg_grad;
  }
  return terms;
}

}  // namespace mitodet
