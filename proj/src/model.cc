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

#include "mitodet/model.h"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <optional>
#include <stdexcept>
#include <string>

namespace mitodet {
namespace {

// log(1000 / 16): caps decoded box growth at inference.
constexpr double kMaxLogScale = 4.135166556742356;
constexpr float kPriorProbability = 0.01f;

std::mt19937_64 stream(std::uint64_t seed, std::uint64_t index) {
  std::seed_seq seq{static_cast<std::uint32_t>(seed),
                    static_cast<std::uint32_t>(seed >> 32),
                    static_cast<std::uint32_t>(index)};
  return std::mt19937_64(seq);
}

// (A, H, W) conv output -> (H, W, A) anchor order. `per_anchor` values are
// kept contiguous, so deltas go from (A*4, H, W) to (H, W, A, 4).
std::vector<float> to_anchor_major(const Tensor& t, int per_anchor) {
  const int a_count = t.channels / per_anchor;
  std::vector<float> out(t.size());
  std::size_t o = 0;
  for (int y = 0; y < t.height; ++y) {
    for (int x = 0; x < t.width; ++x) {
      for (int a = 0; a < a_count; ++a) {
        for (int k = 0; k < per_anchor; ++k) {
          out[o++] = t.at(a * per_anchor + k, y, x);
        }
      }
    }
  }
  return out;
}

Tensor from_anchor_major(const std::vector<float>& v, int channels, int height,
                         int width, int per_anchor) {
  Tensor t(channels, height, width);
  if (v.size() != t.size()) {
    throw std::invalid_argument("output gradient has the wrong size");
  }
  const int a_count = channels / per_anchor;
  std::size_t o = 0;
  for (int y = 0; y < height; ++y) {
    for (int x = 0; x < width; ++x) {
      for (int a = 0; a < a_count; ++a) {
        for (int k = 0; k < per_anchor; ++k) {
          t.at(a * per_anchor + k, y, x) = v[o++];
        }
      }
    }
  }
  return t;
}

}  // namespace

void ModelConfig::validate() const {
  backbone.validate();
  if (anchors.levels.size() != backbone.pyramid_strides.size()) {
    throw std::invalid_argument(
        "anchor levels must match the number of pyramid levels");
  }
  for (std::size_t i = 0; i < anchors.levels.size(); ++i) {
    if (anchors.levels[i].stride != backbone.pyramid_strides[i]) {
      throw std::invalid_argument("anchor level " + std::to_string(i) +
                                  " stride does not match the pyramid stride");
    }
  }
  anchors.anchors_per_cell();
  if (num_tumor_classes < 2) {
    throw std::invalid_argument("num_tumor_classes must be >= 2");
  }
  if (aux_hidden <= 0 || head_convs < 0) {
    throw std::invalid_argument("head sizes must be positive");
  }
}

std::size_t ModelOutput::num_anchors() const {
  std::size_t n = 0;
  for (const auto& level : levels) n += level.cls_logits.size();
  return n;
}

struct ForwardTrace::Impl {
  std::unique_ptr<BackboneTrace> backbone;
  std::vector<ConvCache> lateral;
  std::vector<ConvCache> output;
  std::vector<std::vector<ConvCache>> cls_hidden;
  std::vector<std::vector<ConvCache>> reg_hidden;
  std::vector<ConvCache> cls_out;
  std::vector<ConvCache> reg_out;
  LinearCache tumor_hidden, tumor_out, fg_hidden, fg_out;
};

ForwardTrace::ForwardTrace() : impl_(std::make_unique<Impl>()) {}
ForwardTrace::~ForwardTrace() = default;
ForwardTrace::ForwardTrace(ForwardTrace&&) noexcept = default;
ForwardTrace& ForwardTrace::operator=(ForwardTrace&&) noexcept = default;

struct Model::Impl {
  std::unique_ptr<Backbone> backbone;
  std::vector<Conv2d> lateral;
  std::vector<Conv2d> output;
  std::vector<Conv2d> cls_hidden;
  std::vector<Conv2d> reg_hidden;
  Conv2d cls_out;
  Conv2d reg_out;
  std::optional<Linear> tumor_hidden, tumor_out, fg_hidden, fg_out;
  int anchors_per_cell = 0;
};

Model::Model(const ModelConfig& config, std::uint64_t seed)
    : config_(config), impl_(std::make_unique<Impl>()) {
  config_.validate();
  Impl& m = *impl_;
  const int width = config_.backbone.channels;
  const std::size_t levels = config_.backbone.pyramid_strides.size();
  m.anchors_per_cell = static_cast<int>(config_.anchors.anchors_per_cell());

  auto backbone_rng = stream(seed, 0);
  m.backbone = make_backbone(config_.backbone, backbone_rng);

  auto head_rng = stream(seed, 1);
  const auto in_channels = m.backbone->output_channels();
  for (std::size_t l = 0; l < levels; ++l) {
    const std::string p = "fpn.p" + std::to_string(config_.backbone.pyramid_strides[l]);
    m.lateral.emplace_back(p + ".lateral", in_channels[l], width, 1, 1, 0, false);
    m.output.emplace_back(p + ".output", width, width, 3, 1, 1, false);
    m.lateral.back().init(head_rng, 0.0f, std::sqrt(0.5f));
    m.output.back().init(head_rng, 0.0f, std::sqrt(0.5f));
  }
  for (int k = 0; k < config_.head_convs; ++k) {
    m.cls_hidden.emplace_back("head.cls.conv" + std::to_string(k), width, width,
                              3, 1, 1, true);
    m.cls_hidden.back().init(head_rng);
  }
  for (int k = 0; k < config_.head_convs; ++k) {
    m.reg_hidden.emplace_back("head.reg.conv" + std::to_string(k), width, width,
                              3, 1, 1, true);
    m.reg_hidden.back().init(head_rng);
  }
  m.cls_out = Conv2d("head.cls.out", width, m.anchors_per_cell, 3, 1, 1, false);
  m.cls_out.init_normal(
      head_rng, 0.01f,
      -std::log((1.0f - kPriorProbability) / kPriorProbability));
  m.reg_out = Conv2d("head.reg.out", width, 4 * m.anchors_per_cell, 3, 1, 1, false);
  m.reg_out.init_normal(head_rng, 0.01f, 0.0f);

  if (config_.aux_heads) {
    auto tumor_rng = stream(seed, 2);
    m.tumor_hidden.emplace("aux.tumor.hidden", width, config_.aux_hidden, true);
    m.tumor_out.emplace("aux.tumor.out", config_.aux_hidden,
                        config_.num_tumor_classes, false);
    m.tumor_hidden->init(tumor_rng);
    m.tumor_out->init(tumor_rng);

    auto fg_rng = stream(seed, 3);
    m.fg_hidden.emplace("aux.fg.hidden", width, config_.aux_hidden, true);
    m.fg_out.emplace("aux.fg.out", config_.aux_hidden, 1, false);
    m.fg_hidden->init(fg_rng);
    m.fg_out->init(fg_rng);
  }
}

Model::~Model() = default;
Model::Model(Model&&) noexcept = default;
Model& Model::operator=(Model&&) noexcept = default;

Tensor image_to_tensor(const Image& image) {
  Tensor t(3, image.height, image.width);
  for (int y = 0; y < image.height; ++y) {
    for (int x = 0; x < image.width; ++x) {
      for (int c = 0; c < 3; ++c) {
        t.at(c, y, x) = (image.at(y, x, c) - 0.5f) * 4.0f;
      }
    }
  }
  return t;
}

ModelOutput Model::forward(const Image& image, ForwardTrace* trace) const {
  const int deepest = config_.backbone.pyramid_strides.back();
  if (image.height < deepest || image.width < deepest) {
    throw std::invalid_argument(
        "image " + std::to_string(image.height) + "x" +
        std::to_string(image.width) + " is smaller than the deepest stride " +
        std::to_string(deepest));
  }
  const Impl& m = *impl_;
  ForwardTrace::Impl* t = trace != nullptr ? &trace->impl() : nullptr;
  const std::size_t levels = m.lateral.size();
  if (t != nullptr) {
    t->lateral.assign(levels, {});
    t->output.assign(levels, {});
    t->cls_hidden.assign(levels, std::vector<ConvCache>(m.cls_hidden.size()));
    t->reg_hidden.assign(levels, std::vector<ConvCache>(m.reg_hidden.size()));
    t->cls_out.assign(levels, {});
    t->reg_out.assign(levels, {});
  }

  const std::vector<Tensor> features = m.backbone->forward(
      image_to_tensor(image), t != nullptr ? &t->backbone : nullptr);

  std::vector<Tensor> merged(levels);
  for (std::size_t l = 0; l < levels; ++l) {
    merged[l] = m.lateral[l].forward(features[l],
                                     t != nullptr ? &t->lateral[l] : nullptr);
  }
  for (std::size_t l = levels - 1; l-- > 0;) {
    add_inplace(merged[l], upsample2x(merged[l + 1], merged[l].height,
                                      merged[l].width));
  }

  ModelOutput out;
  Tensor deepest_feature;
  for (std::size_t l = 0; l < levels; ++l) {
    Tensor p = m.output[l].forward(merged[l], t != nullptr ? &t->output[l] : nullptr);

    Tensor h = p;
    for (std::size_t k = 0; k < m.cls_hidden.size(); ++k) {
      h = m.cls_hidden[k].forward(h, t != nullptr ? &t->cls_hidden[l][k] : nullptr);
    }
    const Tensor logits = m.cls_out.forward(h, t != nullptr ? &t->cls_out[l] : nullptr);

    h = p;
    for (std::size_t k = 0; k < m.reg_hidden.size(); ++k) {
      h = m.reg_hidden[k].forward(h, t != nullptr ? &t->reg_hidden[l][k] : nullptr);
    }
    const Tensor deltas = m.reg_out.forward(h, t != nullptr ? &t->reg_out[l] : nullptr);

    ModelOutput::Level level;
    level.grid_height = p.height;
    level.grid_width = p.width;
    level.cls_logits = to_anchor_major(logits, 1);
    level.deltas = to_anchor_major(deltas, 4);
    out.levels.push_back(std::move(level));
    if (l + 1 == levels) deepest_feature = std::move(p);
  }

  if (config_.aux_heads) {
    const std::vector<float> pooled = global_average_pool(deepest_feature);
    out.tumor_logits = m.tumor_out->forward(
        m.tumor_hidden->forward(pooled, t != nullptr ? &t->tumor_hidden : nullptr),
        t != nullptr ? &t->tumor_out : nullptr);
    out.fg_logit = m.fg_out->forward(
        m.fg_hidden->forward(pooled, t != nullptr ? &t->fg_hidden : nullptr),
        t != nullptr ? &t->fg_out : nullptr)[0];
  }
  return out;
}

void Model::backward(const ForwardTrace& trace, const OutputGradients& grads) {
  Impl& m = *impl_;
  const ForwardTrace::Impl& t = trace.impl();
  const std::size_t levels = m.lateral.size();
  if (t.output.size() != levels || grads.cls_logits.size() != levels ||
      grads.deltas.size() != levels) {
    throw std::invalid_argument("backward: trace or gradients do not match");
  }
  const int a = m.anchors_per_cell;

  std::vector<Tensor> grad_p(levels);
  for (std::size_t l = 0; l < levels; ++l) {
    const Tensor& p = t.output[l].output;
    Tensor g = from_anchor_major(grads.cls_logits[l], a, p.height, p.width, 1);
    g = m.cls_out.backward(g, t.cls_out[l]);
    for (std::size_t k = m.cls_hidden.size(); k-- > 0;) {
      g = m.cls_hidden[k].backward(g, t.cls_hidden[l][k]);
    }
    grad_p[l] = std::move(g);

    g = from_anchor_major(grads.deltas[l], 4 * a, p.height, p.width, 4);
    g = m.reg_out.backward(g, t.reg_out[l]);
    for (std::size_t k = m.reg_hidden.size(); k-- > 0;) {
      g = m.reg_hidden[k].backward(g, t.reg_hidden[l][k]);
    }
    add_inplace(grad_p[l], g);
  }

  if (config_.aux_heads) {
    std::vector<float> tumor_grad = grads.tumor_logits;
    tumor_grad.resize(static_cast<std::size_t>(config_.num_tumor_classes), 0.0f);
    std::vector<float> pooled_grad = m.tumor_hidden->backward(
        m.tumor_out->backward(tumor_grad, t.tumor_out), t.tumor_hidden);
    const std::vector<float> fg_grad = m.fg_hidden->backward(
        m.fg_out->backward({grads.fg_logit}, t.fg_out), t.fg_hidden);
    for (std::size_t i = 0; i < pooled_grad.size(); ++i) {
      pooled_grad[i] += fg_grad[i];
    }
    const Tensor& deepest = t.output[levels - 1].output;
    add_inplace(grad_p[levels - 1],
                global_average_pool_backward(pooled_grad, deepest.height,
                                             deepest.width));
  }

  std::vector<Tensor> grad_merged(levels);
  for (std::size_t l = 0; l < levels; ++l) {
    grad_merged[l] = m.output[l].backward(grad_p[l], t.output[l]);
  }
  std::vector<Tensor> grad_features(levels);
  for (std::size_t l = 0; l < levels; ++l) {
    if (l + 1 < levels) upsample2x_backward(grad_merged[l], grad_merged[l + 1]);
    grad_features[l] = m.lateral[l].backward(grad_merged[l], t.lateral[l]);
  }
  m.backbone->backward(*t.backbone, grad_features);
}

std::vector<Parameter*> Model::backbone_parameters() {
  std::vector<Parameter*> out;
  impl_->backbone->collect(out);
  return out;
}

std::vector<Parameter*> Model::tumor_head_parameters() {
  std::vector<Parameter*> out;
  if (impl_->tumor_hidden) {
    impl_->tumor_hidden->collect(out);
    impl_->tumor_out->collect(out);
  }
  return out;
}

std::vector<Parameter*> Model::foreground_head_parameters() {
  std::vector<Parameter*> out;
  if (impl_->fg_hidden) {
    impl_->fg_hidden->collect(out);
    impl_->fg_out->collect(out);
  }
  return out;
}

std::vector<Parameter*> Model::parameters() {
  Impl& m = *impl_;
  std::vector<Parameter*> out = backbone_parameters();
  for (std::size_t l = 0; l < m.lateral.size(); ++l) {
    m.lateral[l].collect(out);
    m.output[l].collect(out);
  }
  for (auto& c : m.cls_hidden) c.collect(out);
  m.cls_out.collect(out);
  for (auto& c : m.reg_hidden) c.collect(out);
  m.reg_out.collect(out);
  for (Parameter* p : tumor_head_parameters()) out.push_back(p);
  for (Parameter* p : foreground_head_parameters()) out.push_back(p);
  return out;
}

std::vector<const Parameter*> Model::parameters() const {
  auto mutable_params = const_cast<Model*>(this)->parameters();
  return {mutable_params.begin(), mutable_params.end()};
}

void Model::zero_grad() {
  for (Parameter* p : parameters()) std::fill(p->grad.begin(), p->grad.end(), 0.0f);
}

std::size_t Model::num_parameters() const {
  std::size_t n = 0;
  for (const Parameter* p : parameters()) n += p->size();
  return n;
}

std::size_t num_parameters(const ModelConfig& config) {
  return Model(config, 0).num_parameters();
}

std::vector<Detection> postprocess(const ModelOutput& output,
                                   const AnchorSet& anchors, int image_height,
                                   int image_width,
                                   const PredictOptions& options) {
  if (anchors.levels.size() != output.levels.size()) {
    throw std::invalid_argument("postprocess: anchor levels do not match");
  }
  std::vector<ScoredBox> candidates;
  for (std::size_t l = 0; l < output.levels.size(); ++l) {
    const auto& level = output.levels[l];
    const auto& level_anchors = anchors.levels[l].anchors;
    if (level_anchors.size() != level.cls_logits.size()) {
      throw std::invalid_argument("postprocess: anchor count mismatch");
    }
    std::vector<std::pair<double, std::size_t>> scored;
    for (std::size_t i = 0; i < level.cls_logits.size(); ++i) {
      const double score = 1.0 / (1.0 + std::exp(-static_cast<double>(level.cls_logits[i])));
      if (score > options.score_threshold) scored.emplace_back(score, i);
    }
    std::stable_sort(scored.begin(), scored.end(),
                     [](const auto& x, const auto& y) { return x.first > y.first; });
    if (static_cast<int>(scored.size()) > options.pre_nms_top_k) {
      scored.resize(static_cast<std::size_t>(options.pre_nms_top_k));
    }
    for (const auto& [score, i] : scored) {
      BoxDelta d{level.deltas[4 * i], level.deltas[4 * i + 1],
                 std::min<double>(level.deltas[4 * i + 2], kMaxLogScale),
                 std::min<double>(level.deltas[4 * i + 3], kMaxLogScale)};
      const Box box = clip(decode(d, level_anchors[i]), image_width, image_height);
      if (box.width() > 0.0 && box.height() > 0.0) candidates.push_back({box, score});
    }
  }

  const auto kept = nms(candidates, options.nms_threshold);
  std::vector<Detection> dets;
  for (std::size_t idx : kept) {
    if (static_cast<int>(dets.size()) >= options.max_detections) break;
    dets.push_back({candidates[idx].box, candidates[idx].score});
  }
  return dets;
}

std::vector<Detection> Model::predict(const Image& image,
                                      const PredictOptions& options) const {
  const ModelOutput out = forward(image);
  const AnchorSet anchors =
      generate_anchors(image.height, image.width, config_.anchors);
  return postprocess(out, anchors, image.height, image.width, options);
}

}  // namespace mitodet
