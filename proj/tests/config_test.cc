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

#include <fstream>
#include <random>
#include <string>

#include "gtest/gtest.h"
#include "json.hpp"
#include "mitodet/checkpoint.h"
#include "mitodet/config.h"
#include "test_util.h"

namespace mitodet {
namespace {

TEST(ConfigTest, DefaultsAreValid) {
  const RunConfig c;
  EXPECT_NO_THROW(c.validate());
  EXPECT_EQ(c.learning_rate, 1e-5);
  EXPECT_EQ(c.batch_size, 16);
  EXPECT_EQ(c.alpha, 0.25);
  EXPECT_EQ(c.gamma, 2.0);
  EXPECT_EQ(c.classes.size(), 6u);
  const ModelConfig m = model_config(c);
  EXPECT_EQ(m.num_tumor_classes, 6);
  EXPECT_TRUE(m.aux_heads);
  EXPECT_EQ(m.anchors, AnchorConfig::Default());
}

TEST(ConfigTest, SerializeParseIsAFixedPoint) {
  RunConfig c;
  c.learning_rate = 0.1 + 0.2;  // not exactly representable as a short decimal
  c.held_out = "canine lymphoma";
  c.augment.hue = 0.05;
  c.ablation_seeds = {3, 1, 4};
  c.tumor_head = false;
  c.match.mode = MatchMode::kCenterDistance;
  c.backbone.variant = BackboneVariant::kResNet50;
  c.manifest = "/data/with space/manifest.json";
  const std::string text = serialize_config(c);
  const RunConfig back = parse_config(text);
  EXPECT_EQ(back, c);
  EXPECT_EQ(serialize_config(back), text);
  EXPECT_EQ(to_key_values(back), to_key_values(c));
}

TEST(ConfigTest, RandomOverridesRoundTrip) {
  std::mt19937_64 rng(5);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  for (int i = 0; i < 200; ++i) {
    RunConfig c;
    c.learning_rate = std::exp(-12.0 * u(rng));
    c.alpha = u(rng);
    c.weights.foreground = 3.0 * u(rng);
    c.pos_iou = 0.5 + 0.5 * u(rng);
    c.neg_iou = c.pos_iou * u(rng);
    c.seed = rng();
    EXPECT_EQ(parse_config(serialize_config(c)), c);
  }
}

TEST(ConfigTest, CommentsAndOverrides) {
  const RunConfig c = parse_config(
      "# comment\n\n  train.epochs = 3  \nheads.foreground = false\n"
      "anchors.aspect_ratios = 0.5, 1, 2\n");
  EXPECT_EQ(c.epochs, 3);
  EXPECT_FALSE(c.foreground_head);
  EXPECT_EQ(loss_config(c).weights.foreground, 0.0);
  EXPECT_TRUE(model_config(c).aux_heads);
  RunConfig d;
  set_config_value(d, "heads.tumor", "false");
  set_config_value(d, "heads.foreground", "false");
  EXPECT_FALSE(model_config(d).aux_heads);
}

std::string config_error(const std::string& text) {
  try {
    parse_config(text).validate();
  } catch (const ConfigError& e) {
    return e.what();
  }
  return "";
}

TEST(ConfigTest, RejectsBadInput) {
  EXPECT_NE(config_error("train.epoch = 3").find("train.epoch"), std::string::npos);
  EXPECT_NE(config_error("train.epochs = three").find("train.epochs"), std::string::npos);
  EXPECT_FALSE(config_error("train.epochs").empty());
  EXPECT_FALSE(config_error("heads.tumor = maybe").empty());
  EXPECT_FALSE(config_error("train.learning_rate = 0").empty());
  EXPECT_FALSE(config_error("train.learning_rate = 1e-3x").empty());
  EXPECT_FALSE(config_error("match.pos_iou = 0.3").empty());
  EXPECT_FALSE(config_error("data.held_out = feline glioma").empty());
  EXPECT_FALSE(config_error("augment.crop_size = 512").empty());
  EXPECT_FALSE(config_error("model.backbone = vgg").empty());
  EXPECT_FALSE(config_error("model.pretrained = true").empty());
  EXPECT_FALSE(config_error("anchors.base_sizes = 16, 32").empty());
  EXPECT_FALSE(config_error("train.optimizer = sgd").empty());
  EXPECT_TRUE(config_error("train.epochs = 0").empty());
}

TEST(ConfigTest, DiffListsChangedKeys) {
  RunConfig a;
  RunConfig b;
  b.epochs = 7;
  b.backbone.channels = 32;
  const auto all = diff_configs(to_key_values(a), to_key_values(b), {});
  ASSERT_EQ(all.size(), 2u);
  const auto model_only = diff_configs(to_key_values(a), to_key_values(b), {"model."});
  ASSERT_EQ(model_only.size(), 1u);
  EXPECT_EQ(model_only[0], "model.channels: 64 != 32");
}

TEST(ConfigTest, SaveLoad) {
  testing::TempDir dir;
  RunConfig c;
  c.epochs = 2;
  save_config(dir.path() / "c.txt", c);
  EXPECT_EQ(load_config(dir.path() / "c.txt"), c);
  EXPECT_THROW(load_config(dir.path() / "missing.txt"), ConfigError);
}

RunConfig small_run() {
  RunConfig c;
  c.backbone.channels = 8;
  c.aux_hidden = 8;
  return c;
}

TEST(CheckpointTest, RoundTripRestoresEveryWeight) {
  testing::TempDir dir;
  const RunConfig c = small_run();
  const Model model(model_config(c), 17);
  save_checkpoint(dir.path() / "ck", model, {c, 3, 0.25, 0.4});
  EXPECT_TRUE(std::filesystem::exists(dir.path() / "ck.bin"));
  EXPECT_TRUE(std::filesystem::exists(dir.path() / "ck.json"));

  CheckpointInfo info;
  const Model back = load_checkpoint(dir.path() / "ck", &info);
  EXPECT_EQ(info.config, c);
  EXPECT_EQ(info.epoch, 3);
  EXPECT_EQ(info.val_ap, 0.25);
  EXPECT_EQ(info.score_threshold, 0.4);
  EXPECT_EQ(snapshot_parameters(back), snapshot_parameters(model));

  std::ifstream in(dir.path() / "ck.json");
  const auto j = nlohmann::json::parse(in);
  EXPECT_EQ(j["num_parameters"], model.num_parameters());
  EXPECT_EQ(j["backbone"]["variant"], "tiny");
  EXPECT_EQ(j["classes"].size(), 6u);
}

TEST(CheckpointTest, DetectsCorruption) {
  testing::TempDir dir;
  const RunConfig c = small_run();
  save_checkpoint(dir.path() / "ck", Model(model_config(c), 1), {c, 0, 0.0, 0.5});
  EXPECT_THROW(load_checkpoint(dir.path() / "nothing"), CheckpointError);
  const auto size = std::filesystem::file_size(dir.path() / "ck.bin");
  std::filesystem::resize_file(dir.path() / "ck.bin", size - 16);
  EXPECT_THROW(load_checkpoint(dir.path() / "ck"), CheckpointError);
  std::ofstream(dir.path() / "ck.bin", std::ios::binary) << "NOTACKPT";
  EXPECT_THROW(load_checkpoint(dir.path() / "ck"), CheckpointError);
}

TEST(CheckpointTest, CompatibilityCheck) {
  const RunConfig c = small_run();
  RunConfig other = c;
  other.epochs = 99;
  other.learning_rate = 1.0;
  EXPECT_NO_THROW(verify_compatible(c, other));
  other.backbone.channels = 16;
  other.classes.pop_back();
  other.held_out = other.classes.front();
  try {
    verify_compatible(c, other);
    FAIL() << "expected ConfigMismatch";
  } catch (const ConfigMismatch& e) {
    ASSERT_EQ(e.diff().size(), 2u);
    EXPECT_NE(std::string(e.what()).find("model.channels"), std::string::npos);
  }
}

TEST(CheckpointTest, SnapshotRestore) {
  Model model(model_config(small_run()), 2);
  const auto snap = snapshot_parameters(model);
  for (Parameter* p : model.parameters()) std::fill(p->value.begin(), p->value.end(), 0.0f);
  restore_parameters(model, snap);
  EXPECT_EQ(snapshot_parameters(model), snap);
  EXPECT_THROW(restore_parameters(model, {}), std::invalid_argument);
}

}  // namespace
}  // namespace mitodet
