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
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include "mitodet/geometry.h"
#include "mitodet/model.h"

namespace mitodet {

enum class MatchMode { kIoU, kCenterDistance };
MatchMode parse_match_mode(const std::string& s);
std::string to_string(MatchMode mode);

struct MatchResult {
  // Per detection, in descending-score order.
  std::vector<bool> true_positive;
  std::vector<double> scores;
  std::vector<bool> gt_matched;
  std::size_t tp = 0;
  std::size_t fp = 0;
  std::size_t fn = 0;
};

// Greedy matching in score order: each detection takes the unmatched gt with
// the highest IoU >= iou_threshold (lowest index on ties).
MatchResult match_detections(std::span<const Detection> dets,
                             std::span<const Box> gts,
                             double iou_threshold = 0.5);

// Same greedy scheme, matching the nearest unmatched gt whose centre lies
// within `max_distance` pixels of the detection centre.
MatchResult match_detections_by_center(std::span<const Detection> dets,
                                       std::span<const Box> gts,
                                       double max_distance);

// All-points interpolated AP over a ranked TP/FP list. With n_gt == 0 the
// result is 1 for an empty list and 0 otherwise.
double average_precision(const std::vector<bool>& true_positive, std::size_t n_gt);

struct PrCurve {
  std::vector<double> scores;
  std::vector<double> precision;
  std::vector<double> recall;
};

struct DetectionScore {
  double ap = 0.0;
  std::size_t n_gt = 0;
  std::size_t n_det = 0;
  PrCurve curve;
};

struct MatchOptions {
  MatchMode mode = MatchMode::kIoU;
  double iou_threshold = 0.5;
  double center_distance = 7.5;

  friend bool operator==(const MatchOptions&, const MatchOptions&) = default;
};

// Matches per image, pools the ranked lists and integrates one AP.
DetectionScore evaluate_detections(
    const std::vector<std::vector<Detection>>& dets,
    const std::vector<std::vector<Box>>& gts, const MatchOptions& options = {});

struct PrfResult {
  double precision = 0.0;
  double recall = 0.0;
  double f1 = 0.0;
  std::size_t tp = 0;
  std::size_t fp = 0;
  std::size_t fn = 0;
  // Set when precision + recall = 0 and F1 falls back to 0.
  bool degenerate = false;
};

double f1_score(double precision, double recall);

// Pools TP/FP/FN over all images after keeping detections with
// score >= score_threshold.
PrfResult f1_at_threshold(const std::vector<std::vector<Detection>>& dets,
                          const std::vector<std::vector<Box>>& gts,
                          double score_threshold,
                          const MatchOptions& options = {});

// Sweeps every distinct detection score and returns the threshold with the
// highest pooled F1 (the higher threshold wins ties).
double select_f1_threshold(const std::vector<std::vector<Detection>>& dets,
                           const std::vector<std::vector<Box>>& gts,
                           const MatchOptions& options = {});

// One row of the component ablation.
struct EvalReport {
  std::string name;
  bool foreground_head = false;
  bool tumor_head = false;
  bool augmentation = false;
  double ap = 0.0;
  double map = 0.0;
  double precision = 0.0;
  double recall = 0.0;
  double f1 = 0.0;
  double score_threshold = 0.5;
  std::size_t n_images = 0;
  std::size_t n_gt = 0;
  // Seed statistics when a row aggregates several runs.
  std::vector<double> map_per_seed;
  double map_mean = 0.0;
  double map_sd = 0.0;
  bool failed = false;
  std::string failure;
  PrCurve curve;
};

void write_report_json(const std::filesystem::path& path,
                       std::span<const EvalReport> reports);
void write_report_csv(const std::filesystem::path& path,
                      std::span<const EvalReport> reports);
// Header: foreground classification, tumor classification, data
// augmentation, mAP(iou=0.5); checkmark cells; "failed" for failed rows.
void write_ablation_csv(const std::filesystem::path& path,
                        std::span<const EvalReport> reports);

// Raster plots (PNG). Axes span [0, 1].
void plot_pr_curve(const std::filesystem::path& path, const PrCurve& curve);
void plot_ablation(const std::filesystem::path& path,
                   std::span<const EvalReport> reports);

}  // namespace mitodet
