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

#include "mitodet/checkpoint.h"

#include <cstdint>
#include <cstring>
#include <fstream>

#include "json.hpp"

namespace mitodet {

using nlohmann::json;

namespace {

constexpr char kMagic[8] = {'M', 'T', 'D', 'C', 'K', 'P', 'T', '1'};

std::filesystem::path with_ext(const std::filesystem::path& stem, const char* ext) {
  return std::filesystem::path(stem.string() + ext);
}

template <typename T>
void put(std::ofstream& out, T v) {
  out.write(reinterpret_cast<const char*>(&v), sizeof(T));
}

template <typename T>
T get(std::ifstream& in, const std::string& what) {
  T v{};
  in.read(reinterpret_cast<char*>(&v), sizeof(T));
  if (!in) throw CheckpointError("truncated parameter archive (" + what + ")");
  return v;
}

std::string join_lines(const std::vector<std::string>& lines) {
  std::string out = "checkpoint configuration mismatch";
  for (const auto& l : lines) out += "; " + l;
  return out;
}

}  // namespace

ConfigMismatch::ConfigMismatch(std::vector<std::string> diff)
    : CheckpointError(join_lines(diff)), diff_(std::move(diff)) {}

void save_checkpoint(const std::filesystem::path& stem, const Model& model,
                     const CheckpointInfo& info) {
  if (stem.has_parent_path()) std::filesystem::create_directories(stem.parent_path());
  const auto bin = with_ext(stem, ".bin");
  {
    std::ofstream out(bin, std::ios::binary);
    if (!out) throw CheckpointError("cannot write " + bin.string());
    out.write(kMagic, sizeof(kMagic));
    const auto params = model.parameters();
    put<std::uint32_t>(out, static_cast<std::uint32_t>(params.size()));
    for (const Parameter* p : params) {
      put<std::uint32_t>(out, static_cast<std::uint32_t>(p->name.size()));
      out.write(p->name.data(), static_cast<std::streamsize>(p->name.size()));
      put<std::uint64_t>(out, p->value.size());
      out.write(reinterpret_cast<const char*>(p->value.data()),
                static_cast<std::streamsize>(p->value.size() * sizeof(float)));
    }
    if (!out) throw CheckpointError("failed writing " + bin.string());
  }

  const RunConfig& c = info.config;
  const ModelConfig mc = model_config(c);
  const LossConfig lc = loss_config(c);
  json anchors = json::array();
  for (const auto& level : mc.anchors.levels) {
    anchors.push_back({{"stride", level.stride},
                       {"base_size", level.base_size},
                       {"scales", level.scales},
                       {"aspect_ratios", level.aspect_ratios}});
  }
  json sidecar{
      {"format", "mitodet-checkpoint"},
      {"version", 1},
      {"epoch", info.epoch},
      {"val_ap", info.val_ap},
      {"score_threshold", info.score_threshold},
      {"num_parameters", model.num_parameters()},
      {"backbone",
       {{"variant", to_string(mc.backbone.variant)},
        {"pyramid_strides", mc.backbone.pyramid_strides},
        {"channels", mc.backbone.channels},
        {"pretrained", mc.backbone.pretrained}}},
      {"loss",
       {{"alpha", lc.alpha},
        {"gamma", lc.gamma},
        {"num_tumor_classes", lc.num_tumor_classes},
        {"weights",
         {{"detection", lc.weights.detection},
          {"tumor", lc.weights.tumor},
          {"foreground", lc.weights.foreground}}}}},
      {"anchors", anchors},
      {"classes", c.classes},
      {"ablation",
       {{"foreground_head", c.foreground_head},
        {"tumor_head", c.tumor_head},
        {"augmentation", c.augment.enabled}}},
      {"config", to_key_values(c)}};
  const auto side = with_ext(stem, ".json");
  std::ofstream out(side);
  if (!out) throw CheckpointError("cannot write " + side.string());
  out << sidecar.dump(2) << "\n";
}

CheckpointInfo read_checkpoint_info(const std::filesystem::path& stem) {
  const auto side = with_ext(stem, ".json");
  std::ifstream in(side);
  if (!in) throw CheckpointError("cannot read " + side.string());
  json j;
  try {
    in >> j;
  } catch (const json::exception& e) {
    throw CheckpointError(side.string() + ": " + e.what());
  }
  if (j.value("format", "") != "mitodet-checkpoint") {
    throw CheckpointError(side.string() + " is not a checkpoint sidecar");
  }
  CheckpointInfo info;
  try {
    for (const auto& [key, value] : j.at("config").items()) {
      set_config_value(info.config, key, value.get<std::string>());
    }
    info.epoch = j.at("epoch").get<int>();
    info.val_ap = j.at("val_ap").get<double>();
    info.score_threshold = j.at("score_threshold").get<double>();
  } catch (const json::exception& e) {
    throw CheckpointError(side.string() + ": " + e.what());
  }
  return info;
}

Model load_checkpoint(const std::filesystem::path& stem, CheckpointInfo* info) {
  CheckpointInfo meta = read_checkpoint_info(stem);
  Model model(model_config(meta.config), meta.config.seed);
  const auto bin = with_ext(stem, ".bin");
  std::ifstream in(bin, std::ios::binary);
  if (!in) throw CheckpointError("cannot read " + bin.string());
  char magic[sizeof(kMagic)];
  in.read(magic, sizeof(magic));
  if (!in || std::memcmp(magic, kMagic, sizeof(kMagic)) != 0) {
    throw CheckpointError(bin.string() + " is not a parameter archive");
  }
  auto params = model.parameters();
  const auto count = get<std::uint32_t>(in, "count");
  if (count != params.size()) {
    throw CheckpointError("archive holds " + std::to_string(count) +
                          " tensors, model expects " + std::to_string(params.size()));
  }
  for (Parameter* p : params) {
    const auto len = get<std::uint32_t>(in, "name length");
    std::string name(len, '\0');
    in.read(name.data(), len);
    const auto size = get<std::uint64_t>(in, "size");
    if (!in || name != p->name || size != p->value.size()) {
      throw CheckpointError("archive tensor '" + name + "' does not match parameter '" +
                            p->name + "'");
    }
    in.read(reinterpret_cast<char*>(p->value.data()),
            static_cast<std::streamsize>(size * sizeof(float)));
    if (!in) throw CheckpointError("truncated parameter archive at '" + name + "'");
  }
  if (info) *info = std::move(meta);
  return model;
}

void verify_compatible(const RunConfig& checkpoint, const RunConfig& requested) {
  auto diff = diff_configs(to_key_values(checkpoint), to_key_values(requested),
                           {"data.classes", "model.", "anchors."});
  if (!diff.empty()) throw ConfigMismatch(std::move(diff));
}

std::vector<std::vector<float>> snapshot_parameters(const Model& model) {
  std::vector<std::vector<float>> out;
  for (const Parameter* p : model.parameters()) out.push_back(p->value);
  return out;
}

void restore_parameters(Model& model, const std::vector<std::vector<float>>& values) {
  auto params = model.parameters();
  if (params.size() != values.size()) {
    throw std::invalid_argument("snapshot does not match the model");
  }
  for (std::size_t i = 0; i < params.size(); ++i) params[i]->value = values[i];
}

}  // namespace mitodet
