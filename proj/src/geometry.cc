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

#include "mitodet/geometry.h"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <stdexcept>
#include <string>

namespace mitodet {

bool Box::valid() const {
  return std::isfinite(x1) && std::isfinite(y1) && std::isfinite(x2) &&
         std::isfinite(y2) && x2 >= x1 && y2 >= y1;
}

AnchorConfig AnchorConfig::Default() {
  const std::vector<double> scales{1.0, std::pow(2.0, 1.0 / 3.0),
                                   std::pow(2.0, 2.0 / 3.0)};
  const std::vector<double> ratios{0.5, 1.0, 2.0};
  AnchorConfig config;
  config.levels = {{8, 16.0, scales, ratios},
                   {16, 32.0, scales, ratios},
                   {32, 64.0, scales, ratios}};
  return config;
}

std::size_t AnchorConfig::anchors_per_cell() const {
  if (levels.empty()) {
    throw std::invalid_argument("anchor config has no levels");
  }
  const std::size_t count = levels.front().anchors_per_cell();
  for (const auto& level : levels) {
    if (level.anchors_per_cell() != count) {
      throw std::invalid_argument(
          "all anchor levels must share the same anchors-per-cell count");
    }
  }
  return count;
}

std::size_t AnchorSet::size() const {
  std::size_t n = 0;
  for (const auto& level : levels) n += level.anchors.size();
  return n;
}

std::vector<Box> AnchorSet::flatten() const {
  std::vector<Box> out;
  out.reserve(size());
  for (const auto& level : levels) {
    out.insert(out.end(), level.anchors.begin(), level.anchors.end());
  }
  return out;
}

int grid_extent(int size, int stride) { return (size + stride - 1) / stride; }

double iou(const Box& a, const Box& b) {
  const double iw = std::min(a.x2, b.x2) - std::max(a.x1, b.x1);
  const double ih = std::min(a.y2, b.y2) - std::max(a.y1, b.y1);
  if (iw <= 0.0 || ih <= 0.0) return 0.0;
  const double inter = iw * ih;
  const double uni = a.area() + b.area() - inter;
  if (uni <= 0.0) return 0.0;
  return std::clamp(inter / uni, 0.0, 1.0);
}

AnchorSet generate_anchors(int image_height, int image_width,
                           const AnchorConfig& config) {
  if (image_height <= 0 || image_width <= 0) {
    throw std::invalid_argument("image size must be positive");
  }
  if (config.levels.empty()) {
    throw std::invalid_argument("anchor config has no levels");
  }
  AnchorSet set;
  for (const auto& spec : config.levels) {
    if (spec.stride <= 0) {
      throw std::invalid_argument("anchor stride must be positive, got " +
                                  std::to_string(spec.stride));
    }
    if (spec.scales.empty() || spec.aspect_ratios.empty()) {
      throw std::invalid_argument("anchor scales and ratios must be non-empty");
    }
    if (!(spec.base_size > 0.0)) {
      throw std::invalid_argument("anchor base size must be positive");
    }
    for (double s : spec.scales) {
      if (!(s > 0.0)) throw std::invalid_argument("anchor scale must be > 0");
    }
    for (double r : spec.aspect_ratios) {
      if (!(r > 0.0)) throw std::invalid_argument("aspect ratio must be > 0");
    }

    // Cell-relative half extents, computed once per level.
    std::vector<std::pair<double, double>> shapes;
    for (double ratio : spec.aspect_ratios) {
      for (double scale : spec.scales) {
        const double size = spec.base_size * scale;
        const double w = size / std::sqrt(ratio);
        const double h = size * std::sqrt(ratio);
        shapes.emplace_back(0.5 * w, 0.5 * h);
      }
    }

    AnchorSet::Level level;
    level.spec = spec;
    level.grid_height = grid_extent(image_height, spec.stride);
    level.grid_width = grid_extent(image_width, spec.stride);
    level.anchors.reserve(static_cast<std::size_t>(level.grid_height) *
                          level.grid_width * shapes.size());
    const double half_stride = 0.5 * spec.stride;
    for (int gy = 0; gy < level.grid_height; ++gy) {
      const double cy = gy * spec.stride + half_stride;
      for (int gx = 0; gx < level.grid_width; ++gx) {
        const double cx = gx * spec.stride + half_stride;
        for (const auto& [hw, hh] : shapes) {
          level.anchors.push_back({cx - hw, cy - hh, cx + hw, cy + hh});
        }
      }
    }
    set.levels.push_back(std::move(level));
  }
  return set;
}

BoxDelta encode(const Box& gt, const Box& anchor) {
  if (!(anchor.width() > 0.0) || !(anchor.height() > 0.0)) {
    throw std::invalid_argument("encode: anchor must have positive area");
  }
  if (!(gt.width() > 0.0) || !(gt.height() > 0.0)) {
    throw std::invalid_argument("encode: target box must have positive area");
  }
  const double aw = anchor.width();
  const double ah = anchor.height();
  return {(gt.center_x() - anchor.center_x()) / aw,
          (gt.center_y() - anchor.center_y()) / ah, std::log(gt.width() / aw),
          std::log(gt.height() / ah)};
}

Box decode(const BoxDelta& delta, const Box& anchor) {
  const double aw = anchor.width();
  const double ah = anchor.height();
  const double cx = anchor.center_x() + delta.dx * aw;
  const double cy = anchor.center_y() + delta.dy * ah;
  const double w = aw * std::exp(delta.dw);
  const double h = ah * std::exp(delta.dh);
  return {cx - 0.5 * w, cy - 0.5 * h, cx + 0.5 * w, cy + 0.5 * h};
}

Box clip(const Box& box, double width, double height) {
  return {std::clamp(box.x1, 0.0, width), std::clamp(box.y1, 0.0, height),
          std::clamp(box.x2, 0.0, width), std::clamp(box.y2, 0.0, height)};
}

std::vector<std::size_t> nms(std::span<const ScoredBox> boxes,
                             double iou_threshold) {
  std::vector<std::size_t> order(boxes.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::stable_sort(order.begin(), order.end(),
                   [&](std::size_t a, std::size_t b) {
                     return boxes[a].score > boxes[b].score;
                   });

  std::vector<std::size_t> kept;
  for (std::size_t idx : order) {
    bool keep = true;
    for (std::size_t k : kept) {
      if (iou(boxes[idx].box, boxes[k].box) > iou_threshold) {
        keep = false;
        break;
      }
    }
    if (keep) kept.push_back(idx);
  }
  return kept;
}

std::vector<int> match_anchors(std::span<const Box> anchors,
                               std::span<const Box> gts, double pos_threshold,
                               double neg_threshold) {
  if (pos_threshold < neg_threshold) {
    throw std::invalid_argument(
        "match_anchors: positive threshold below negative threshold");
  }
  std::vector<int> labels(anchors.size(), kNegative);
  if (gts.empty()) return labels;

  std::vector<double> gt_best_iou(gts.size(), 0.0);
  std::vector<std::size_t> gt_best_anchor(gts.size(), anchors.size());

  for (std::size_t a = 0; a < anchors.size(); ++a) {
    double best = -1.0;
    int best_gt = -1;
    for (std::size_t g = 0; g < gts.size(); ++g) {
      const double v = iou(anchors[a], gts[g]);
      if (v > best) {
        best = v;
        best_gt = static_cast<int>(g);
      }
      if (v > gt_best_iou[g]) {
        gt_best_iou[g] = v;
        gt_best_anchor[g] = a;
      }
    }
    if (best >= pos_threshold) {
      labels[a] = best_gt;
    } else if (best < neg_threshold) {
      labels[a] = kNegative;
    } else {
      labels[a] = kIgnore;
    }
  }

  // Every gt keeps at least its best-overlapping anchor.
  for (std::size_t g = 0; g < gts.size(); ++g) {
    if (gt_best_anchor[g] < anchors.size()) {
      labels[gt_best_anchor[g]] = static_cast<int>(g);
    }
  }
  return labels;
}

}  // namespace mitodet
