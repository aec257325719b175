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

#include <cstddef>
#include <span>
#include <vector>

namespace mitodet {

// Axis-aligned box, corner convention, continuous pixel coordinates.
struct Box {
  double x1 = 0.0;
  double y1 = 0.0;
  double x2 = 0.0;
  double y2 = 0.0;

  double width() const { return x2 - x1; }
  double height() const { return y2 - y1; }
  double area() const { return width() * height(); }
  double center_x() const { return 0.5 * (x1 + x2); }
  double center_y() const { return 0.5 * (y1 + y2); }
  bool valid() const;

  friend bool operator==(const Box&, const Box&) = default;
};

struct BoxDelta {
  double dx = 0.0;
  double dy = 0.0;
  double dw = 0.0;
  double dh = 0.0;
};

struct ScoredBox {
  Box box;
  double score = 0.0;
};

// One pyramid level of the anchor grid.
struct AnchorLevel {
  int stride = 8;
  double base_size = 16.0;
  std::vector<double> scales{1.0};
  std::vector<double> aspect_ratios{1.0};  // height / width

  std::size_t anchors_per_cell() const {
    return scales.size() * aspect_ratios.size();
  }

  friend bool operator==(const AnchorLevel&, const AnchorLevel&) = default;
};

struct AnchorConfig {
  std::vector<AnchorLevel> levels;

  // Strides 8/16/32, base sizes 16/32/64, three octave scales, three ratios.
  static AnchorConfig Default();
  std::size_t anchors_per_cell() const;

  friend bool operator==(const AnchorConfig&, const AnchorConfig&) = default;
};

struct AnchorSet {
  struct Level {
    AnchorLevel spec;
    int grid_height = 0;
    int grid_width = 0;
    // Row-major over cells, then ratio-major, scale-minor within a cell.
    std::vector<Box> anchors;
  };
  std::vector<Level> levels;

  std::size_t size() const;
  // All levels concatenated in level order.
  std::vector<Box> flatten() const;
};

// Feature-map extent at a given stride: ceil(size / stride).
int grid_extent(int size, int stride);

double iou(const Box& a, const Box& b);

// Throws std::invalid_argument on a bad level spec.
AnchorSet generate_anchors(int image_height, int image_width,
                           const AnchorConfig& config);

// Throws std::invalid_argument when the anchor or the target has no area.
BoxDelta encode(const Box& gt, const Box& anchor);
Box decode(const BoxDelta& delta, const Box& anchor);

Box clip(const Box& box, double width, double height);

// Greedy suppression. Returns kept indices in descending score order,
// ties resolved toward the lower input index.
std::vector<std::size_t> nms(std::span<const ScoredBox> boxes,
                             double iou_threshold);

// Per-anchor assignment labels: values >= 0 are gt indices.
inline constexpr int kNegative = -1;
inline constexpr int kIgnore = -2;

std::vector<int> match_anchors(std::span<const Box> anchors,
                               std::span<const Box> gts, double pos_threshold,
                               double neg_threshold);

}  // namespace mitodet
