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

#include "mitodet/train.h"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <map>
#include <numeric>

#include "mitodet/augment.h"
#include "mitodet/checkpoint.h"
#include "mitodet/layers.h"

namespace mitodet {
namespace {

// Stream tags for derive_rng.
constexpr std::uint64_t kValSplitStream = 0x76616c;
constexpr std::uint64_t kPatchStream = 1;
constexpr std::uint64_t kOrderStream = 2;
constexpr std::uint64_t kAugmentStream = 3;

struct Sample {
  Image image;
  std::vector<Annotation> annotations;
  int tumor_label = 0;
  bool foreground = false;
};

Image centre_crop(const Image& image, int size) {
  if (size >= image.height && size >= image.width) return image;
  const Window w{(image.height - size) / 2, (image.width - size) / 2, size, size};
  return crop_image(image, w);
}

Sample make_sample(PatchSample patch, const AugmentConfig& augment,
                   std::uint64_t seed) {
  Sample s;
  s.tumor_label = patch.tumor_label;
  if (augment.enabled) {
    AugmentedSample a = compose(patch.image, patch.annotations, augment, seed);
    s.image = std::move(a.image);
    s.annotations = std::move(a.annotations);
    s.foreground = a.foreground;
  } else {
    const int size = augment.crop_size;
    const Window w{(patch.image.height - size) / 2, (patch.image.width - size) / 2,
                   size, size};
    s.image = centre_crop(patch.image, size);
    s.annotations = size < patch.image.height || size < patch.image.width
                        ? remap_annotations(patch.annotations, w)
                        : std::move(patch.annotations);
    s.foreground = label_foreground(s.annotations);
  }
  return s;
}

class AnchorCache {
 public:
  explicit AnchorCache(AnchorConfig config) : config_(std::move(config)) {}
  const std::vector<Box>& get(int height, int width) {
    auto key = std::make_pair(height, width);
    auto it = cache_.find(key);
    if (it == cache_.end()) {
      it = cache_.emplace(key, generate_anchors(height, width, config_).flatten()).first;
    }
    return it->second;
  }

 private:
  AnchorConfig config_;
  std::map<std::pair<int, int>, std::vector<Box>> cache_;
};

// Forward, objective and backward for one sample. Gradients are scaled by
// `grad_scale` before they reach the parameters.
LossTerms train_step(Model& model, const Sample& sample, AnchorCache& anchors,
                     const RunConfig& config, const LossConfig& loss,
                     double grad_scale) {
  ForwardTrace trace;
  const ModelOutput out = model.forward(sample.image, &trace);

  std::vector<double> cls;
  std::vector<double> deltas;
  cls.reserve(out.num_anchors());
  deltas.reserve(4 * out.num_anchors());
  for (const auto& level : out.levels) {
    cls.insert(cls.end(), level.cls_logits.begin(), level.cls_logits.end());
    deltas.insert(deltas.end(), level.deltas.begin(), level.deltas.end());
  }
  std::vector<double> tumor(out.tumor_logits.begin(), out.tumor_logits.end());
  auto finite = [](double v) { return std::isfinite(v); };
  if (!std::all_of(cls.begin(), cls.end(), finite) ||
      !std::all_of(deltas.begin(), deltas.end(), finite) ||
      !std::all_of(tumor.begin(), tumor.end(), finite) || !finite(out.fg_logit)) {
    LossTerms bad;
    bad.total = std::nan("");
    return bad;
  }

  const auto& anchor_boxes = anchors.get(sample.image.height, sample.image.width);
  const auto gts = detection_boxes(sample.annotations);
  SampleTargets targets;
  targets.detection = assign_targets(anchor_boxes, gts, config.pos_iou, config.neg_iou);
  targets.tumor_label = sample.tumor_label;
  targets.foreground = sample.foreground;

  HeadOutputsView view{cls, deltas, tumor, out.fg_logit};
  LossGradients g;
  const LossTerms terms = multitask_objective(view, targets, loss, &g);
  if (!std::isfinite(terms.total)) return terms;

  OutputGradients og;
  std::size_t offset = 0;
  for (const auto& level : out.levels) {
    const std::size_t n = level.cls_logits.size();
    std::vector<float> gc(n);
    std::vector<float> gd(4 * n);
    for (std::size_t i = 0; i < n; ++i) {
      gc[i] = static_cast<float>(g.cls_logits[offset + i] * grad_scale);
    }
    for (std::size_t i = 0; i < 4 * n; ++i) {
      gd[i] = static_cast<float>(g.deltas[4 * offset + i] * grad_scale);
    }
    og.cls_logits.push_back(std::move(gc));
    og.deltas.push_back(std::move(gd));
    offset += n;
  }
  for (double v : g.tumor_logits) {
    og.tumor_logits.push_back(static_cast<float>(v * grad_scale));
  }
  og.fg_logit = static_cast<float>(g.fg_logit * grad_scale);
  model.backward(trace, og);
  return terms;
}

void accumulate(LossTerms& acc, const LossTerms& t) {
  acc.det_cls += t.det_cls;
  acc.det_reg += t.det_reg;
  acc.tumor_ce += t.tumor_ce;
  acc.fg_focal += t.fg_focal;
  acc.total += t.total;
}

LossTerms scaled(LossTerms t, double k) {
  t.det_cls *= k;
  t.det_reg *= k;
  t.tumor_ce *= k;
  t.fg_focal *= k;
  t.total *= k;
  return t;
}

}  // namespace

std::pair<Dataset, Dataset> split_train_val(const Dataset& dataset,
                                            double val_fraction,
                                            std::uint64_t seed) {
  const std::size_t n = dataset.records.size();
  std::size_t n_val = static_cast<std::size_t>(std::lround(val_fraction * n));
  if (val_fraction > 0.0 && n_val == 0 && n >= 2) n_val = 1;
  n_val = std::min(n_val, n > 0 ? n - 1 : 0);
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), std::size_t{0});
  auto rng = derive_rng(seed, {kValSplitStream});
  std::shuffle(order.begin(), order.end(), rng);
  std::vector<bool> is_val(n, false);
  for (std::size_t i = 0; i < n_val; ++i) is_val[order[i]] = true;
  Dataset train_set;
  Dataset val_set;
  for (std::size_t i = 0; i < n; ++i) {
    Dataset& dst = is_val[i] ? val_set : train_set;
    dst.records.push_back(dataset.records[i]);
    dst.images.push_back(dataset.images[i]);
  }
  return {std::move(train_set), std::move(val_set)};
}

std::vector<std::vector<Detection>> predict_all(const Model& model,
                                                const Dataset& dataset,
                                                const PredictOptions& options) {
  std::vector<std::vector<Detection>> out;
  out.reserve(dataset.images.size());
  for (const auto& image : dataset.images) out.push_back(model.predict(image, options));
  return out;
}

std::vector<std::vector<Box>> ground_truth(const Dataset& dataset) {
  std::vector<std::vector<Box>> out;
  out.reserve(dataset.records.size());
  for (const auto& r : dataset.records) out.push_back(detection_boxes(r.annotations));
  return out;
}

TrainResult train(const RunConfig& config, const Dataset& train_set,
                  const Dataset& val_set, const TrainOptions& options) {
  config.validate();
  if (train_set.records.empty()) throw DatasetError("training split is empty");

  const LossConfig loss = loss_config(config);
  TrainResult result{Model(model_config(config), config.seed), {}, 0, 0.0, 0.5,
                     false, ""};
  Model& model = result.model;
  Adam adam(model.parameters(), {.learning_rate = config.learning_rate});
  AnchorCache anchors(model.config().anchors);

  const bool save = !options.checkpoint_dir.empty();
  CheckpointInfo info{config, 0, 0.0, 0.5};
  auto best = snapshot_parameters(model);
  const auto gts_val = ground_truth(val_set);
  auto validate = [&]() {
    return val_set.records.empty()
               ? 0.0
               : evaluate_detections(predict_all(model, val_set, config.predict),
                                     gts_val, config.match)
                     .ap;
  };

  if (save) save_checkpoint(options.checkpoint_dir / "last", model, info);
  if (config.epochs == 0) {
    result.best_val_ap = validate();
    if (save) save_checkpoint(options.checkpoint_dir / "best", model, info);
  }

  for (int epoch = 1; epoch <= config.epochs; ++epoch) {
    const auto t0 = std::chrono::steady_clock::now();
    const auto last_good = snapshot_parameters(model);

    std::vector<PatchSample> patches;
    for (std::size_t c = 0; c < train_set.records.size(); ++c) {
      auto rng = derive_rng(config.seed, {kPatchStream, static_cast<std::uint64_t>(epoch), c});
      auto p = sample_patches(train_set.records[c], train_set.images[c],
                              config.patch_size, config.patches_per_case,
                              config.sampling, config.classes, rng);
      std::move(p.begin(), p.end(), std::back_inserter(patches));
    }
    auto order_rng = derive_rng(config.seed, {kOrderStream, static_cast<std::uint64_t>(epoch)});
    std::shuffle(patches.begin(), patches.end(), order_rng);

    EpochLog log;
    log.epoch = epoch;
    LossTerms sum;
    std::size_t seen = 0;
    bool finite = true;
    for (std::size_t start = 0; start < patches.size() && finite;
         start += static_cast<std::size_t>(config.batch_size)) {
      const std::size_t end =
          std::min(patches.size(), start + static_cast<std::size_t>(config.batch_size));
      const double scale = 1.0 / static_cast<double>(end - start);
      adam.zero_grad();
      LossTerms step_sum;
      for (std::size_t k = start; k < end; ++k) {
        const std::uint64_t aug_seed =
            derive_rng(config.seed, {kAugmentStream, static_cast<std::uint64_t>(epoch), k})();
        const Sample sample = make_sample(std::move(patches[k]), config.augment, aug_seed);
        const LossTerms t = train_step(model, sample, anchors, config, loss, scale);
        if (!std::isfinite(t.total)) {
          finite = false;
          break;
        }
        accumulate(sum, t);
        accumulate(step_sum, t);
        ++seen;
      }
      if (!finite) break;
      if (options.on_step) options.on_step(scaled(step_sum, scale), model);
      adam.step();
      ++log.steps;
      for (const Parameter* p : model.parameters()) {
        if (!std::all_of(p->value.begin(), p->value.end(),
                         [](float v) { return std::isfinite(v); })) {
          finite = false;
          break;
        }
      }
    }
    log.loss = scaled(sum, seen > 0 ? 1.0 / static_cast<double>(seen) : 0.0);

    if (!finite) {
      restore_parameters(model, last_good);
      result.diverged = true;
      result.divergence = "non-finite loss in epoch " + std::to_string(epoch);
      log.loss.total = std::nan("");
      log.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
      result.history.push_back(log);
      if (options.on_epoch) options.on_epoch(log);
      break;
    }

    log.val_ap = validate();
    log.improved = epoch == 1 || log.val_ap > result.best_val_ap;
    info.epoch = epoch;
    info.val_ap = log.val_ap;
    if (log.improved) {
      result.best_val_ap = log.val_ap;
      result.best_epoch = epoch;
      best = snapshot_parameters(model);
      if (save) save_checkpoint(options.checkpoint_dir / "best", model, info);
    }
    if (save) save_checkpoint(options.checkpoint_dir / "last", model, info);
    log.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    result.history.push_back(log);
    if (options.on_epoch) options.on_epoch(log);
  }

  restore_parameters(model, best);
  if (!val_set.records.empty()) {
    result.score_threshold =
        select_f1_threshold(predict_all(model, val_set, config.predict), gts_val,
                            config.match);
  }
  if (save && result.best_epoch > 0) {
    CheckpointInfo best_info{config, result.best_epoch, result.best_val_ap,
                             result.score_threshold};
    save_checkpoint(options.checkpoint_dir / "best", model, best_info);
  }
  return result;
}

EvalReport evaluate_model(const Model& model, const Dataset& dataset,
                          const RunConfig& config, double score_threshold,
                          const std::string& name) {
  if (dataset.records.empty()) throw DatasetError("evaluation split is empty");
  const auto dets = predict_all(model, dataset, config.predict);
  const auto gts = ground_truth(dataset);
  const DetectionScore score = evaluate_detections(dets, gts, config.match);
  const PrfResult prf = f1_at_threshold(dets, gts, score_threshold, config.match);
  EvalReport r;
  r.name = name;
  r.foreground_head = config.foreground_head;
  r.tumor_head = config.tumor_head;
  r.augmentation = config.augment.enabled;
  r.ap = score.ap;
  r.map = score.ap;
  r.precision = prf.precision;
  r.recall = prf.recall;
  r.f1 = prf.f1;
  r.score_threshold = score_threshold;
  r.n_images = dataset.records.size();
  r.n_gt = score.n_gt;
  r.map_per_seed = {score.ap};
  r.map_mean = score.ap;
  r.curve = score.curve;
  return r;
}

ExperimentResult run_experiment(const RunConfig& config, const Dataset& dataset,
                                const TrainOptions& options) {
  config.validate();
  split_leave_one_tumor_out(dataset.records, config.held_out);
  Dataset train_pool = filter_dataset(
      dataset, [&](const CaseRecord& r) { return r.tumor_type != config.held_out; });
  Dataset test_set = filter_dataset(
      dataset, [&](const CaseRecord& r) { return r.tumor_type == config.held_out; });
  auto [train_set, val_set] = split_train_val(train_pool, config.val_fraction, config.seed);
  TrainResult training = train(config, train_set, val_set, options);
  EvalReport report =
      evaluate_model(training.model, test_set, config, training.score_threshold);
  return {std::move(training), std::move(report)};
}

const std::vector<AblationRow>& ablation_rows() {
  static const std::vector<AblationRow> rows{
      {"none", false, false, false},     {"aug", false, false, true},
      {"tumor", false, true, false},     {"fg", true, false, false},
      {"tumor+aug", false, true, true},  {"fg+aug", true, false, true},
      {"fg+tumor", true, true, false},   {"all", true, true, true}};
  return rows;
}

std::vector<EvalReport> run_ablation(const Dataset& dataset, const RunConfig& config,
                                     const AblationOptions& options) {
  config.validate();
  std::vector<EvalReport> reports;
  const auto& rows = ablation_rows();
  for (std::size_t i = 0; i < rows.size(); ++i) {
    const AblationRow& row = rows[i];
    RunConfig cfg = config;
    cfg.foreground_head = row.foreground_head;
    cfg.tumor_head = row.tumor_head;
    cfg.augment.enabled = row.augmentation;
    if (options.configure_row) options.configure_row(i, cfg);

    EvalReport agg;
    agg.name = row.name;
    agg.foreground_head = row.foreground_head;
    agg.tumor_head = row.tumor_head;
    agg.augmentation = row.augmentation;
    std::vector<EvalReport> runs;
    try {
      for (std::uint64_t seed : config.ablation_seeds) {
        cfg.seed = seed;
        TrainOptions topts;
        if (options.on_epoch) {
          topts.on_epoch = [&, seed](const EpochLog& log) { options.on_epoch(row, seed, log); };
        }
        ExperimentResult res = run_experiment(cfg, dataset, topts);
        if (res.training.diverged) {
          throw std::runtime_error("seed " + std::to_string(seed) + ": " +
                                   res.training.divergence);
        }
        runs.push_back(std::move(res.report));
      }
    } catch (const std::exception& e) {
      agg.failed = true;
      agg.failure = e.what();
    }
    if (!agg.failed) {
      const double n = static_cast<double>(runs.size());
      for (const auto& r : runs) {
        agg.ap += r.ap / n;
        agg.precision += r.precision / n;
        agg.recall += r.recall / n;
        agg.f1 += r.f1 / n;
        agg.score_threshold = r.score_threshold;
        agg.map_per_seed.push_back(r.map);
      }
      agg.map = agg.ap;
      agg.map_mean = agg.ap;
      double ss = 0.0;
      for (double m : agg.map_per_seed) ss += (m - agg.map_mean) * (m - agg.map_mean);
      agg.map_sd = runs.size() > 1 ? std::sqrt(ss / (n - 1.0)) : 0.0;
      agg.n_images = runs.front().n_images;
      agg.n_gt = runs.front().n_gt;
      agg.curve = runs.front().curve;
    }
    if (options.on_row) options.on_row(agg);
    reports.push_back(std::move(agg));
  }
  return reports;
}

}  // namespace mitodet
