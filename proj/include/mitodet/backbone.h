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

#include <memory>
#include <random>
#include <string>
#include <vector>

#include "mitodet/layers.h"

namespace mitodet {

enum class BackboneVariant { kTiny, kResNet50 };

std::string to_string(BackboneVariant variant);
// Accepts "tiny" and "resnet50". Throws std::invalid_argument otherwise.
BackboneVariant parse_backbone_variant(const std::string& name);

struct BackboneConfig {
  BackboneVariant variant = BackboneVariant::kTiny;
  // Ascending, consecutive powers of two drawn from {4, 8, 16, 32}.
  std::vector<int> pyramid_strides{8, 16, 32};
  int channels = 64;  // pyramid feature width
  bool pretrained = false;

  void validate() const;
  friend bool operator==(const BackboneConfig&, const BackboneConfig&) = default;
};

struct BackboneTrace {
  virtual ~BackboneTrace() = default;
};

// Feature extractor producing one map per requested pyramid stride.
class Backbone {
 public:
  virtual ~Backbone() = default;

  // Outputs are ordered shallow to deep, matching pyramid_strides.
  virtual std::vector<Tensor> forward(
      const Tensor& x, std::unique_ptr<BackboneTrace>* trace) const = 0;
  // `grads` holds dL/d(output) per pyramid level; consumed in place.
  virtual void backward(const BackboneTrace& trace,
                        std::vector<Tensor>& grads) = 0;
  virtual std::vector<int> output_channels() const = 0;
  virtual void collect(std::vector<Parameter*>& out) = 0;
};

std::unique_ptr<Backbone> make_backbone(const BackboneConfig& config,
                                        std::mt19937_64& rng);

}  // namespace mitodet
