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
#include <stdexcept>
#include <string>
#include <vector>

#include "mitodet/config.h"
#include "mitodet/model.h"

namespace mitodet {

class CheckpointError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Raised when a checkpoint's recorded configuration disagrees with the
// requested one; `diff` holds one "key: checkpoint != requested" per field.
class ConfigMismatch : public CheckpointError {
 public:
  explicit ConfigMismatch(std::vector<std::string> diff);
  const std::vector<std::string>& diff() const { return diff_; }

 private:
  std::vector<std::string> diff_;
};

struct CheckpointInfo {
  RunConfig config;
  int epoch = 0;
  double val_ap = 0.0;
  double score_threshold = 0.5;
};

// Writes `<stem>.bin` (named float tensors) and `<stem>.json` (model, loss,
// anchor, class and ablation metadata).
void save_checkpoint(const std::filesystem::path& stem, const Model& model,
                     const CheckpointInfo& info);

// Reads only the JSON sidecar.
CheckpointInfo read_checkpoint_info(const std::filesystem::path& stem);

// Rebuilds the model from the sidecar and loads its parameters.
Model load_checkpoint(const std::filesystem::path& stem, CheckpointInfo* info = nullptr);

// Throws ConfigMismatch unless class list, model and anchor settings agree.
void verify_compatible(const RunConfig& checkpoint, const RunConfig& requested);

// Parameter values copied in and out of a model, used for last-good restore.
std::vector<std::vector<float>> snapshot_parameters(const Model& model);
void restore_parameters(Model& model, const std::vector<std::vector<float>>& values);

}  // namespace mitodet
