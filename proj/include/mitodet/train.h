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

#include <filesystem>
#include <functional>
#include <string>
#include <utility>
#include <vector>

#include "mitodet/config.h"
#include "mitodet/data.h"
#include "mitodet/eval.h"
#include "mitodet/losses.h"
#include "mitodet/model.h"

namespace mitodet {

struct EpochLog {
  int epoch = 0;
  LossTerms loss;  // means over the epoch's samples
  int steps = 0;
  double val_ap = 0.0;
  bool improved = false;
  double seconds = 0.0;
};

struct TrainOptions {
  // Receives one row per finished epoch.
  std::function<void(const EpochLog&)> on_epoch;
  // Called after each batch's backward pass, before the optimizer update.
  // The loss terms are batch means.
  std::function<void(const LossTerms&, Model&)> on_step;
  // When set, `last` and `best` checkpoints are written here.
  std::filesystem::path checkpoint_dir;
};

struct TrainResult {
  Model model;
  std::vector<EpochLog> history;
  int best_epoch = 0;
  double best_val_ap = 0.0;
  // F1-optimal score threshold on the validation cases.
  double score_threshold = 0.5;
  bool diverged = false;
  std::string divergence;
};

// Validation cases are drawn by case, never by patch.
std::pair<Dataset, Dataset> split_train_val(const Dataset& dataset,
                                            double val_fraction,
                                            std::uint64_t seed);

// Adam on the multitask objective. The returned model carries the
// parameters of the best validation epoch. A non-finite loss restores the
// last good parameters and stops.
TrainResult train(const RunConfig& config, const Dataset& train_set,
                  const Dataset& val_set, const TrainOptions& options = {});

std::vector<std::vector<Detection>> predict_all(const Model& model,
                                                const Dataset& dataset,
                                                const PredictOptions& options);

std::vector<std::vector<Box>> ground_truth(const Dataset& dataset);

// AP at the configured IoU plus precision, recall and F1 at
// `score_threshold`. Flags are taken from `config`.
EvalReport evaluate_model(const Model& model, const Dataset& dataset,
                          const RunConfig& config, double score_threshold,
                          const std::string& name = "");

struct ExperimentResult {
  TrainResult training;
  EvalReport report;
};

// Leave-one-tumor-out split, validation split, training, then evaluation on
// the held-out tumor type.
ExperimentResult run_experiment(const RunConfig& config, const Dataset& dataset,
                                const TrainOptions& options = {});

struct AblationRow {
  const char* name;
  bool foreground_head;
  bool tumor_head;
  bool augmentation;
};

// none, aug, tumor, fg, tumor+aug, fg+aug, fg+tumor, all.
const std::vector<AblationRow>& ablation_rows();

struct AblationOptions {
  std::function<void(const AblationRow&, std::uint64_t seed, const EpochLog&)> on_epoch;
  std::function<void(const EvalReport&)> on_row;
  // Adjusts a row's config before training.
  std::function<void(std::size_t row, RunConfig&)> configure_row;
};

// Trains every row for each seed in config.ablation_seeds. A row whose
// training diverges or throws is reported as failed; later rows still run.
std::vector<EvalReport> run_ablation(const Dataset& dataset, const RunConfig& config,
                                     const AblationOptions& options = {});

}  // namespace mitodet
