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

#include "mitodet/backbone.h"

#include <algorithm>
#include <map>
#include <optional>
#include <stdexcept>

namespace mitodet {

std::string to_string(BackboneVariant variant) {
  switch (variant) {
    case BackboneVariant::kTiny:
      return "tiny";
    case BackboneVariant::kResNet50:
      return "resnet50";
  }
  return "unknown";
}

BackboneVariant parse_backbone_variant(const std::string& name) {
  if (name == "tiny") return BackboneVariant::kTiny;
  if (name == "resnet50" || name == "standard-residual-50") {
    return BackboneVariant::kResNet50;
  }
  throw std::invalid_argument("unknown backbone variant '" + name + "'");
}

void BackboneConfig::validate() const {
  if (pyramid_strides.empty()) {
    throw std::invalid_argument("backbone needs at least one pyramid level");
  }
  for (std::size_t i = 0; i < pyramid_strides.size(); ++i) {
    const int s = pyramid_strides[i];
    if (s != 4 && s != 8 && s != 16 && s != 32) {
      throw std::invalid_argument("pyramid stride " + std::to_string(s) +
                                  " not in {4, 8, 16, 32}");
    }
    if (i > 0 && s != 2 * pyramid_strides[i - 1]) {
      throw std::invalid_argument(
          "pyramid strides must be consecutive powers of two");
    }
  }
  if (channels <= 0) {
    throw std::invalid_argument("backbone channels must be positive");
  }
}

namespace {

// Four plain conv stages behind a strided stem.
class TinyBackbone final : public Backbone {
 public:
  TinyBackbone(const BackboneConfig& config, std::mt19937_64& rng)
      : strides_(config.pyramid_strides) {
    struct StageSpec {
      int stride;
      int channels;
    };
    const StageSpec stages[] = {{4, 32}, {8, 64}, {16, 96}, {32, 128}};
    convs_.emplace_back("backbone.stem", 3, 16, 3, 2, 1, true);
    int in = 16;
    for (const auto& stage : stages) {
      const std::string prefix = "backbone.s" + std::to_string(stage.stride);
      convs_.emplace_back(prefix + ".conv1", in, stage.channels, 3, 2, 1, true);
      convs_.emplace_back(prefix + ".conv2", stage.channels, stage.channels, 3,
                          1, 1, true);
      in = stage.channels;
      stage_end_[stage.stride] = convs_.size() - 1;
      stage_channels_[stage.stride] = stage.channels;
    }
    for (auto& conv : convs_) conv.init(rng);
    last_conv_ = stage_end_.at(strides_.back());
  }

  std::vector<Tensor> forward(
      const Tensor& x, std::unique_ptr<BackboneTrace>* trace) const override {
    auto* t = new_trace(trace);
    std::vector<Tensor> outputs;
    Tensor h = x;
    for (std::size_t i = 0; i <= last_conv_; ++i) {
      h = convs_[i].forward(h, t != nullptr ? &t->caches[i] : nullptr);
      for (int s : strides_) {
        if (stage_end_.at(s) == i) outputs.push_back(h);
      }
    }
    return outputs;
  }

  void backward(const BackboneTrace& trace,
                std::vector<Tensor>& grads) override {
    const auto& t = dynamic_cast<const Trace&>(trace);
    Tensor g;
    for (std::size_t i = last_conv_ + 1; i-- > 0;) {
      for (std::size_t l = 0; l < strides_.size(); ++l) {
        if (stage_end_.at(strides_[l]) != i) continue;
        if (g.data.empty()) {
          g = std::move(grads[l]);
        } else {
          add_inplace(g, grads[l]);
        }
      }
      g = convs_[i].backward(g, t.caches[i], i > 0);
    }
  }

  std::vector<int> output_channels() const override {
    std::vector<int> out;
    for (int s : strides_) out.push_back(stage_channels_.at(s));
    return out;
  }

  void collect(std::vector<Parameter*>& out) override {
    for (auto& conv : convs_) conv.collect(out);
  }

 private:
  struct Trace final : BackboneTrace {
    std::vector<ConvCache> caches;
  };

  Trace* new_trace(std::unique_ptr<BackboneTrace>* trace) const {
    if (trace == nullptr) return nullptr;
    auto t = std::make_unique<Trace>();
    t->caches.resize(convs_.size());
    Trace* raw = t.get();
    *trace = std::move(t);
    return raw;
  }

  std::vector<int> strides_;
  std::vector<Conv2d> convs_;
  std::map<int, std::size_t> stage_end_;
  std::map<int, int> stage_channels_;
  std::size_t last_conv_ = 0;
};

// Bottleneck residual network with [3, 4, 6, 3] blocks. There is no
// normalisation layer; the last conv of each block starts at zero so the
// untrained network is a chain of projections.
class ResNet50Backbone final : public Backbone {
 public:
  ResNet50Backbone(const BackboneConfig& config, std::mt19937_64& rng)
      : strides_(config.pyramid_strides),
        stem_("backbone.stem", 3, 64, 7, 2, 3, true) {
    stem_.init(rng);
    struct StageSpec {
      int stride;
      int mid;
      int out;
      int blocks;
    };
    const StageSpec stages[] = {
        {4, 64, 256, 3}, {8, 128, 512, 4}, {16, 256, 1024, 6}, {32, 512, 2048, 3}};
    int in = 64;
    for (const auto& stage : stages) {
      for (int b = 0; b < stage.blocks; ++b) {
        const int stride = (b == 0 && stage.stride > 4) ? 2 : 1;
        const std::string prefix = "backbone.s" + std::to_string(stage.stride) +
                                   ".b" + std::to_string(b);
        Block block;
        block.c1 = Conv2d(prefix + ".conv1", in, stage.mid, 1, 1, 0, true);
        block.c2 = Conv2d(prefix + ".conv2", stage.mid, stage.mid, 3, stride, 1, true);
        block.c3 = Conv2d(prefix + ".conv3", stage.mid, stage.out, 1, 1, 0, false);
        block.c1.init(rng);
        block.c2.init(rng);
        block.c3.init(rng, 0.0f, 0.0f);
        if (b == 0) {
          block.proj = Conv2d(prefix + ".proj", in, stage.out, 1, stride, 0, false);
          block.proj->init(rng, 0.0f, 0.5f);
        }
        blocks_.push_back(std::move(block));
        in = stage.out;
      }
      stage_end_[stage.stride] = blocks_.size() - 1;
      stage_channels_[stage.stride] = stage.out;
    }
    last_block_ = stage_end_.at(strides_.back());
  }

  std::vector<Tensor> forward(
      const Tensor& x, std::unique_ptr<BackboneTrace>* trace) const override {
    Trace* t = nullptr;
    if (trace != nullptr) {
      auto owned = std::make_unique<Trace>();
      owned->blocks.resize(blocks_.size());
      t = owned.get();
      *trace = std::move(owned);
    }
    std::vector<Tensor> outputs;
    Tensor h = stem_.forward(x, t != nullptr ? &t->stem : nullptr);
    h = max_pool_3x3s2(h, t != nullptr ? &t->pool : nullptr);
    for (std::size_t i = 0; i <= last_block_; ++i) {
      h = forward_block(blocks_[i], h, t != nullptr ? &t->blocks[i] : nullptr);
      for (int s : strides_) {
        if (stage_end_.at(s) == i) outputs.push_back(h);
      }
    }
    return outputs;
  }

  void backward(const BackboneTrace& trace,
                std::vector<Tensor>& grads) override {
    const auto& t = dynamic_cast<const Trace&>(trace);
    Tensor g;
    for (std::size_t i = last_block_ + 1; i-- > 0;) {
      for (std::size_t l = 0; l < strides_.size(); ++l) {
        if (stage_end_.at(strides_[l]) != i) continue;
        if (g.data.empty()) {
          g = std::move(grads[l]);
        } else {
          add_inplace(g, grads[l]);
        }
      }
      if (g.data.empty()) continue;
      g = backward_block(blocks_[i], g, t.blocks[i]);
    }
    g = max_pool_3x3s2_backward(g, t.pool);
    stem_.backward(g, t.stem, false);
  }

  std::vector<int> output_channels() const override {
    std::vector<int> out;
    for (int s : strides_) out.push_back(stage_channels_.at(s));
    return out;
  }

  void collect(std::vector<Parameter*>& out) override {
    stem_.collect(out);
    for (auto& block : blocks_) {
      block.c1.collect(out);
      block.c2.collect(out);
      block.c3.collect(out);
      if (block.proj) block.proj->collect(out);
    }
  }

 private:
  struct Block {
    Conv2d c1, c2, c3;
    std::optional<Conv2d> proj;
  };
  struct BlockCache {
    ConvCache c1, c2, c3, proj;
    Tensor output;
  };
  struct Trace final : BackboneTrace {
    ConvCache stem;
    MaxPoolCache pool;
    std::vector<BlockCache> blocks;
  };

  static Tensor forward_block(const Block& block, const Tensor& x,
                              BlockCache* cache) {
    Tensor a = block.c1.forward(x, cache != nullptr ? &cache->c1 : nullptr);
    Tensor b = block.c2.forward(a, cache != nullptr ? &cache->c2 : nullptr);
    Tensor out = block.c3.forward(b, cache != nullptr ? &cache->c3 : nullptr);
    if (block.proj) {
      add_inplace(out, block.proj->forward(
                           x, cache != nullptr ? &cache->proj : nullptr));
    } else {
      add_inplace(out, x);
    }
    relu_inplace(out);
    if (cache != nullptr) cache->output = out;
    return out;
  }

  static Tensor backward_block(Block& block, const Tensor& grad_out,
                               const BlockCache& cache) {
    Tensor g = grad_out;
    relu_backward_inplace(g, cache.output);
    Tensor gx = block.c1.backward(
        block.c2.backward(block.c3.backward(g, cache.c3), cache.c2), cache.c1);
    if (block.proj) {
      add_inplace(gx, block.proj->backward(g, cache.proj));
    } else {
      add_inplace(gx, g);
    }
    return gx;
  }

  std::vector<int> strides_;
  Conv2d stem_;
  std::vector<Block> blocks_;
  std::map<int, std::size_t> stage_end_;
  std::map<int, int> stage_channels_;
  std::size_t last_block_ = 0;
};

}  // namespace

std::unique_ptr<Backbone> make_backbone(const BackboneConfig& config,
                                        std::mt19937_64& rng) {
  config.validate();
  if (config.pretrained) {
    throw std::invalid_argument(
        "pretrained backbone weights are not bundled; set "
        "backbone.pretrained = false");
  }
  switch (config.variant) {
    case BackboneVariant::kTiny:
      return std::make_unique<TinyBackbone>(config, rng);
    case BackboneVariant::kResNet50:
      return std::make_unique<ResNet50Backbone>(config, rng);
  }
  throw std::invalid_argument("unknown backbone variant");
}

}  // namespace mitodet
