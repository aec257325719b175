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
#include <memory>
#include <span>
#include <vector>

#include "mitodet/backbone.h"
#include "mitodet/geometry.h"
#include "mitodet/image.h"
#include "mitodet/layers.h"

namespace mitodet {

struct ModelConfig {
  BackboneConfig backbone;
  AnchorConfig anchors = AnchorConfig::Default();
  int num_tumor_classes = 6;
  int aux_hidden = 256;  // width of the hidden layer in each auxiliary head
  int head_convs = 1;    // hidden 3x3 convs in each dense subnet
  // When false the auxiliary heads are not built at all.
  bool aux_heads = true;

  void validate() const;
  friend bool operator==(const ModelConfig&, const ModelConfig&) = default;
};

struct Detection {
  Box box;
  double score = 0.0;
};

struct ModelOutput {
  struct Level {
    int grid_height = 0;
    int grid_width = 0;
    // Anchor-major layout matching AnchorSet: (y, x, anchor).
    std::vector<float> cls_logits;
    // Four values (dx, dy, dw, dh) per anchor.
    std::vector<float> deltas;
  };
  std::vector<Level> levels;
  std::vector<float> tumor_logits;  // empty without auxiliary heads
  float fg_logit = 0.0f;

  std::size_t num_anchors() const;
};

// dL/d(output), laid out like ModelOutput.
struct OutputGradients {
  std::vector<std::vector<float>> cls_logits;
  std::vector<std::vector<float>> deltas;
  std::vector<float> tumor_logits;
  float fg_logit = 0.0f;
};

struct PredictOptions {
  double score_threshold = 0.05;
  double nms_threshold = 0.5;
  int max_detections = 100;
  int pre_nms_top_k = 1000;

  friend bool operator==(const PredictOptions&, const PredictOptions&) = default;
};

// Activations recorded by a training-mode forward pass.
class ForwardTrace {
 public:
  ForwardTrace();
  ~ForwardTrace();
  ForwardTrace(ForwardTrace&&) noexcept;
  ForwardTrace& operator=(ForwardTrace&&) noexcept;

  struct Impl;
  Impl& impl() { return *impl_; }
  const Impl& impl() const { return *impl_; }

 private:
  std::unique_ptr<Impl> impl_;
};

// Backbone -> feature pyramid -> shared dense heads, with tumor-type and
// patch-foreground classifiers on the pooled deepest pyramid level.
class Model {
 public:
  Model(const ModelConfig& config, std::uint64_t seed);
  ~Model();
  Model(Model&&) noexcept;
  Model& operator=(Model&&) noexcept;

  const ModelConfig& config() const { return config_; }

  // Throws std::invalid_argument when the image is smaller than the deepest
  // pyramid stride.
  ModelOutput forward(const Image& image, ForwardTrace* trace = nullptr) const;
  // Accumulates parameter gradients for the pass recorded in `trace`.
  void backward(const ForwardTrace& trace, const OutputGradients& grads);

  std::vector<Detection> predict(const Image& image,
                                 const PredictOptions& options = {}) const;

  std::vector<Parameter*> parameters();
  std::vector<const Parameter*> parameters() const;
  // Parameters owned exclusively by one auxiliary head (empty when absent).
  std::vector<Parameter*> tumor_head_parameters();
  std::vector<Parameter*> foreground_head_parameters();
  std::vector<Parameter*> backbone_parameters();
  void zero_grad();
  std::size_t num_parameters() const;

 private:
  struct Impl;
  ModelConfig config_;
  std::unique_ptr<Impl> impl_;
};

// Parameter count of a freshly built model with this configuration.
std::size_t num_parameters(const ModelConfig& config);

// (pixel - 0.5) / 0.25, HWC -> CHW.
Tensor image_to_tensor(const Image& image);

// Decodes, thresholds, suppresses and clips raw outputs for one image.
std::vector<Detection> postprocess(const ModelOutput& output,
                                   const AnchorSet& anchors, int image_height,
                                   int image_width,
                                   const PredictOptions& options);

}  // namespace mitodet
