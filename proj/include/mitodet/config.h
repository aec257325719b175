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

#include <cstdint>
#include <filesystem>
#include <map>
#include <stdexcept>
#include <string>
#include <vector>

#include "mitodet/augment.h"
#include "mitodet/data.h"
#include "mitodet/eval.h"
#include "mitodet/losses.h"
#include "mitodet/model.h"

namespace mitodet {

class ConfigError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct RunConfig {
  // data.*
  std::filesystem::path manifest;
  std::vector<std::string> classes = default_tumor_classes();
  std::string held_out = kDefaultHeldOut;
  int patch_size = 256;
  int patches_per_case = 4;
  SamplingStrategy sampling = SamplingStrategy::kBalanced;
  double val_fraction = 0.1;

  AugmentConfig augment;

  // loss.*; num_tumor_classes follows the class list.
  double alpha = 0.25;
  double gamma = 2.0;
  TaskWeights weights;

  // model.* and anchors.*
  BackboneConfig backbone;
  // One base size per pyramid stride; scales and ratios are shared.
  std::vector<double> anchor_base_sizes{16.0, 32.0, 64.0};
  std::vector<double> anchor_scales = AnchorConfig::Default().levels[0].scales;
  std::vector<double> anchor_ratios{0.5, 1.0, 2.0};
  int aux_hidden = 256;
  int head_convs = 1;

  // match.*
  double pos_iou = 0.5;
  double neg_iou = 0.4;

  // heads.*: ablation switches for the auxiliary tasks.
  bool foreground_head = true;
  bool tumor_head = true;

  // train.*
  std::string optimizer = "adam";
  double learning_rate = 1e-5;
  int batch_size = 16;
  int epochs = 20;
  std::uint64_t seed = 0;

  // eval.*
  PredictOptions predict;
  MatchOptions match;
  bool plots = true;

  // ablation.*
  std::vector<std::uint64_t> ablation_seeds{0};

  // synth.*
  int synth_cases = 200;
  int synth_image_size = 128;
  std::uint64_t synth_seed = 0;

  std::filesystem::path output_dir = "runs";

  // Throws ConfigError describing the first invalid field.
  void validate() const;

  friend bool operator==(const RunConfig&, const RunConfig&) = default;
};

AnchorConfig anchor_config(const RunConfig& config);
// Model built for this run: auxiliary heads exist when either is enabled.
ModelConfig model_config(const RunConfig& config);
// Loss with disabled heads carrying zero weight.
LossConfig loss_config(const RunConfig& config);

// Flat `section.key = value` view of every field, sorted by key.
std::map<std::string, std::string> to_key_values(const RunConfig& config);
// Applies one override. Throws ConfigError for unknown keys or bad values.
void set_config_value(RunConfig& config, const std::string& key,
                      const std::string& value);

// One `key = value` pair per line; blank lines and lines starting with '#'
// are ignored. Keys not present keep their defaults.
RunConfig parse_config(const std::string& text);
std::string serialize_config(const RunConfig& config);
RunConfig load_config(const std::filesystem::path& path);
void save_config(const std::filesystem::path& path, const RunConfig& config);

// Lines "key: ours != theirs" for every differing key in `keys_prefixes`
// (all keys when empty).
std::vector<std::string> diff_configs(
    const std::map<std::string, std::string>& a,
    const std::map<std::string, std::string>& b,
    const std::vector<std::string>& key_prefixes = {});

}  // namespace mitodet
