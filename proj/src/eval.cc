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

#include "mitodet/eval.h"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <functional>
#include <fstream>
#include <numeric>
#include <stdexcept>

#include "json.hpp"
#include "mitodet/image.h"

namespace mitodet {

using nlohmann::json;

MatchMode parse_match_mode(const std::string& s) {
  if (s == "iou") return MatchMode::kIoU;
  if (s == "center") return MatchMode::kCenterDistance;
  throw std::invalid_argument("unknown match mode '" + s + "'");
}

std::string to_string(MatchMode mode) {
  return mode == MatchMode::kIoU ? "iou" : "center";
}

namespace {

std::vector<std::size_t> score_order(std::span<const Detection> dets) {
  std::vector<std::size_t> order(dets.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
    return dets[a].score > dets[b].score;
  });
  return order;
}

// `affinity(det, gt)` returns a value where larger is better, or a negative
// number when the pair cannot match.
template <typename Affinity>
MatchResult greedy_match(std::span<const Detection> dets,
                         std::span<const Box> gts, Affinity affinity) {
  MatchResult r;
  r.gt_matched.assign(gts.size(), false);
  for (std::size_t d : score_order(dets)) {
    double best = -1.0;
    std::size_t best_gt = gts.size();
    for (std::size_t g = 0; g < gts.size(); ++g) {
      if (r.gt_matched[g]) continue;
      const double a = affinity(dets[d].box, gts[g]);
      if (a >= 0.0 && a > best) {
        best = a;
        best_gt = g;
      }
    }
    const bool tp = best_gt < gts.size();
    if (tp) r.gt_matched[best_gt] = true;
    r.true_positive.push_back(tp);
    r.scores.push_back(dets[d].score);
    (tp ? r.tp : r.fp) += 1;
  }
  r.fn = gts.size() - r.tp;
  return r;
}

}  // namespace

MatchResult match_detections(std::span<const Detection> dets,
                             std::span<const Box> gts, double iou_threshold) {
  return greedy_match(dets, gts, [&](const Box& d, const Box& g) {
    const double v = iou(d, g);
    return v >= iou_threshold ? v : -1.0;
  });
}

MatchResult match_detections_by_center(std::span<const Detection> dets,
                                       std::span<const Box> gts,
                                       double max_distance) {
  return greedy_match(dets, gts, [&](const Box& d, const Box& g) {
    const double dist = std::hypot(d.center_x() - g.center_x(),
                                   d.center_y() - g.center_y());
    // Closer is better; map onto a non-negative affinity.
    return dist <= max_distance ? max_distance - dist : -1.0;
  });
}

double average_precision(const std::vector<bool>& true_positive, std::size_t n_gt) {
  if (n_gt == 0) return true_positive.empty() ? 1.0 : 0.0;
  const std::size_t n = true_positive.size();
  std::vector<double> precision(n);
  std::vector<double> recall(n);
  std::size_t tp = 0;
  for (std::size_t i = 0; i < n; ++i) {
    tp += true_positive[i] ? 1 : 0;
    precision[i] = static_cast<double>(tp) / static_cast<double>(i + 1);
    recall[i] = static_cast<double>(tp) / static_cast<double>(n_gt);
  }
  // Precision envelope: running maximum from the tail.
  for (std::size_t i = n; i-- > 1;) {
    precision[i - 1] = std::max(precision[i - 1], precision[i]);
  }
  double ap = 0.0;
  double prev_recall = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    if (recall[i] > prev_recall) {
      ap += (recall[i] - prev_recall) * precision[i];
      prev_recall = recall[i];
    }
  }
  return ap;
}

namespace {

MatchResult match_with(std::span<const Detection> dets, std::span<const Box> gts,
                       const MatchOptions& options) {
  return options.mode == MatchMode::kIoU
             ? match_detections(dets, gts, options.iou_threshold)
             : match_detections_by_center(dets, gts, options.center_distance);
}

void check_sizes(const std::vector<std::vector<Detection>>& dets,
                 const std::vector<std::vector<Box>>& gts) {
  if (dets.size() != gts.size()) {
    throw std::invalid_argument("detections and ground truth cover " +
                                std::to_string(dets.size()) + " vs " +
                                std::to_string(gts.size()) + " images");
  }
}

}  // namespace

DetectionScore evaluate_detections(
    const std::vector<std::vector<Detection>>& dets,
    const std::vector<std::vector<Box>>& gts, const MatchOptions& options) {
  check_sizes(dets, gts);
  struct Ranked {
    double score;
    std::size_t image;
    std::size_t rank;
    bool tp;
  };
  std::vector<Ranked> pooled;
  DetectionScore out;
  for (std::size_t i = 0; i < dets.size(); ++i) {
    const MatchResult m = match_with(dets[i], gts[i], options);
    for (std::size_t k = 0; k < m.scores.size(); ++k) {
      pooled.push_back({m.scores[k], i, k, m.true_positive[k]});
    }
    out.n_gt += gts[i].size();
  }
  std::stable_sort(pooled.begin(), pooled.end(), [](const Ranked& a, const Ranked& b) {
    return a.score > b.score;
  });
  std::vector<bool> flags;
  flags.reserve(pooled.size());
  std::size_t tp = 0;
  for (std::size_t k = 0; k < pooled.size(); ++k) {
    flags.push_back(pooled[k].tp);
    tp += pooled[k].tp ? 1 : 0;
    out.curve.scores.push_back(pooled[k].score);
    out.curve.precision.push_back(static_cast<double>(tp) / static_cast<double>(k + 1));
    out.curve.recall.push_back(out.n_gt > 0 ? static_cast<double>(tp) /
                                                  static_cast<double>(out.n_gt)
                                            : 0.0);
  }
  out.n_det = pooled.size();
  out.ap = average_precision(flags, out.n_gt);
  return out;
}

double f1_score(double precision, double recall) {
  const double s = precision + recall;
  return s > 0.0 ? 2.0 * precision * recall / s : 0.0;
}

PrfResult f1_at_threshold(const std::vector<std::vector<Detection>>& dets,
                          const std::vector<std::vector<Box>>& gts,
                          double score_threshold, const MatchOptions& options) {
  check_sizes(dets, gts);
  PrfResult r;
  for (std::size_t i = 0; i < dets.size(); ++i) {
    std::vector<Detection> kept;
    for (const auto& d : dets[i]) {
      if (d.score >= score_threshold) kept.push_back(d);
    }
    const MatchResult m = match_with(kept, gts[i], options);
    r.tp += m.tp;
    r.fp += m.fp;
    r.fn += m.fn;
  }
  r.precision = r.tp + r.fp > 0
                    ? static_cast<double>(r.tp) / static_cast<double>(r.tp + r.fp)
                    : 0.0;
  r.recall = r.tp + r.fn > 0
                 ? static_cast<double>(r.tp) / static_cast<double>(r.tp + r.fn)
                 : 0.0;
  r.degenerate = r.precision + r.recall == 0.0;
  r.f1 = f1_score(r.precision, r.recall);
  return r;
}

double select_f1_threshold(const std::vector<std::vector<Detection>>& dets,
                           const std::vector<std::vector<Box>>& gts,
                           const MatchOptions& options) {
  std::vector<double> candidates;
  for (const auto& image : dets) {
    for (const auto& d : image) candidates.push_back(d.score);
  }
  std::sort(candidates.begin(), candidates.end(), std::greater<>());
  candidates.erase(std::unique(candidates.begin(), candidates.end()),
                   candidates.end());
  double best_thr = 0.5;
  double best_f1 = -1.0;
  for (double thr : candidates) {
    const double f1 = f1_at_threshold(dets, gts, thr, options).f1;
    if (f1 > best_f1) {
      best_f1 = f1;
      best_thr = thr;
    }
  }
  return best_thr;
}

namespace {

json report_to_json(const EvalReport& r) {
  json j{{"name", r.name},
         {"foreground_head", r.foreground_head},
         {"tumor_head", r.tumor_head},
         {"augmentation", r.augmentation},
         {"failed", r.failed}};
  if (r.failed) {
    j["failure"] = r.failure;
    return j;
  }
  j.update({{"ap", r.ap},
            {"map", r.map},
            {"precision", r.precision},
            {"recall", r.recall},
            {"f1", r.f1},
            {"score_threshold", r.score_threshold},
            {"n_images", r.n_images},
            {"n_gt", r.n_gt},
            {"map_per_seed", r.map_per_seed},
            {"map_mean", r.map_mean},
            {"map_sd", r.map_sd}});
  return j;
}

std::ofstream open_for_write(const std::filesystem::path& path) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  return out;
}

}  // namespace

void write_report_json(const std::filesystem::path& path,
                       std::span<const EvalReport> reports) {
  json arr = json::array();
  for (const auto& r : reports) arr.push_back(report_to_json(r));
  open_for_write(path) << json{{"reports", arr}}.dump(2) << "\n";
}

void write_report_csv(const std::filesystem::path& path,
                      std::span<const EvalReport> reports) {
  auto out = open_for_write(path);
  out << "name,foreground_head,tumor_head,augmentation,ap,map,precision,recall,"
         "f1,score_threshold,n_images,n_gt,failed\n";
  for (const auto& r : reports) {
    out << r.name << ',' << r.foreground_head << ',' << r.tumor_head << ','
        << r.augmentation << ',' << r.ap << ',' << r.map << ',' << r.precision
        << ',' << r.recall << ',' << r.f1 << ',' << r.score_threshold << ','
        << r.n_images << ',' << r.n_gt << ',' << r.failed << '\n';
  }
}

void write_ablation_csv(const std::filesystem::path& path,
                        std::span<const EvalReport> reports) {
  auto out = open_for_write(path);
  out << "foreground classification,tumor classification,data augmentation,"
         "mAP(iou=0.5)\n";
  const char* check = "\xE2\x9C\x93";  // U+2713
  for (const auto& r : reports) {
    out << (r.foreground_head ? check : "") << ','
        << (r.tumor_head ? check : "") << ',' << (r.augmentation ? check : "")
        << ',';
    if (r.failed) {
      out << "failed";
    } else {
      char buf[32];
      std::snprintf(buf, sizeof(buf), "%.3f", r.map);
      out << buf;
    }
    out << '\n';
  }
}

namespace {

// Minimal RGB canvas for line and bar plots.
class Canvas {
 public:
  Canvas(int height, int width)
      : height_(height), width_(width),
        rgb_(static_cast<std::size_t>(height) * width * 3, 255) {}

  void set(int y, int x, const std::uint8_t c[3]) {
    if (x < 0 || y < 0 || x >= width_ || y >= height_) return;
    std::copy_n(c, 3, &rgb_[(static_cast<std::size_t>(y) * width_ + x) * 3]);
  }
  void line(double y0, double x0, double y1, double x1, const std::uint8_t c[3]) {
    const int steps = static_cast<int>(std::max(std::abs(y1 - y0), std::abs(x1 - x0))) + 1;
    for (int i = 0; i <= steps; ++i) {
      const double t = static_cast<double>(i) / steps;
      set(static_cast<int>(std::lround(y0 + t * (y1 - y0))),
          static_cast<int>(std::lround(x0 + t * (x1 - x0))), c);
    }
  }
  void fill(int y0, int x0, int y1, int x1, const std::uint8_t c[3]) {
    for (int y = y0; y < y1; ++y) {
      for (int x = x0; x < x1; ++x) set(y, x, c);
    }
  }
  void save(const std::filesystem::path& path) const {
    write_png_rgb8(path, height_, width_, rgb_);
  }

 private:
  int height_;
  int width_;
  std::vector<std::uint8_t> rgb_;
};

constexpr int kPlotSize = 320;
constexpr int kMargin = 30;
constexpr std::uint8_t kAxis[3] = {0, 0, 0};
constexpr std::uint8_t kGrid[3] = {220, 220, 220};
constexpr std::uint8_t kSeries[3] = {200, 40, 40};
constexpr std::uint8_t kBar[3] = {60, 90, 180};
constexpr std::uint8_t kFailed[3] = {180, 180, 180};

void draw_axes(Canvas& canvas) {
  const int lo = kMargin;
  const int hi = kPlotSize - kMargin;
  for (int k = 1; k <= 4; ++k) {
    const double v = lo + (hi - lo) * k / 5.0;
    canvas.line(v, lo, v, hi, kGrid);
    canvas.line(lo, v, hi, v, kGrid);
  }
  canvas.line(hi, lo, hi, hi, kAxis);
  canvas.line(lo, lo, hi, lo, kAxis);
}

}  // namespace

void plot_pr_curve(const std::filesystem::path& path, const PrCurve& curve) {
  Canvas canvas(kPlotSize, kPlotSize);
  draw_axes(canvas);
  const double span = kPlotSize - 2 * kMargin;
  auto px = [&](double r) { return kMargin + r * span; };
  auto py = [&](double p) { return kPlotSize - kMargin - p * span; };
  for (std::size_t i = 1; i < curve.recall.size(); ++i) {
    canvas.line(py(curve.precision[i - 1]), px(curve.recall[i - 1]),
                py(curve.precision[i]), px(curve.recall[i]), kSeries);
  }
  canvas.save(path);
}

void plot_ablation(const std::filesystem::path& path,
                   std::span<const EvalReport> reports) {
  Canvas canvas(kPlotSize, kPlotSize);
  draw_axes(canvas);
  if (!reports.empty()) {
    const double span = kPlotSize - 2 * kMargin;
    const double slot = span / static_cast<double>(reports.size());
    for (std::size_t i = 0; i < reports.size(); ++i) {
      const double v = reports[i].failed ? 1.0 : std::clamp(reports[i].map, 0.0, 1.0);
      const int x0 = static_cast<int>(kMargin + i * slot + 0.15 * slot);
      const int x1 = static_cast<int>(kMargin + (i + 1) * slot - 0.15 * slot);
      const int y0 = static_cast<int>(kPlotSize - kMargin - v * span);
      canvas.fill(y0, x0, kPlotSize - kMargin, x1,
                  reports[i].failed ? kFailed : kBar);
    }
  }
  canvas.save(path);
}

}  // namespace mitodet
