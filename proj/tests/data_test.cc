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
#include <map>
#include <random>
#include <string>

#include "gtest/gtest.h"
#include "mitodet/data.h"
#include "json.hpp"
#include "test_util.h"

namespace mitodet {
namespace {

using nlohmann::json;

const Dataset& small_dataset() {
  static const Dataset ds =
      generate_synthetic_dataset(12, 64, default_palettes(), 5);
  return ds;
}

TEST(SyntheticTest, RoundRobinOverTumorTypes) {
  const Dataset& ds = small_dataset();
  ASSERT_EQ(ds.records.size(), 12u);
  ASSERT_EQ(ds.images.size(), 12u);
  std::map<std::string, int> counts;
  for (const auto& r : ds.records) ++counts[r.tumor_type];
  ASSERT_EQ(counts.size(), 6u);
  for (const auto& [type, n] : counts) EXPECT_EQ(n, 2) << type;
  for (const auto& name : default_tumor_classes()) EXPECT_EQ(counts.count(name), 1u);
}

TEST(SyntheticTest, RecordsAreValid) {
  const Dataset& ds = small_dataset();
  for (std::size_t i = 0; i < ds.records.size(); ++i) {
    const CaseRecord& r = ds.records[i];
    EXPECT_NO_THROW(validate_record(r, default_tumor_classes()));
    EXPECT_EQ(ds.images[i].height, r.image_height);
    for (float v : ds.images[i].pixels) {
      ASSERT_GE(v, 0.0f);
      ASSERT_LE(v, 1.0f);
    }
    if (r.tumor_type == "human melanoma") {
      for (const auto& a : r.annotations) EXPECT_EQ(a.kind, AnnotationKind::kHardNegative);
    }
  }
  int mitoses = 0;
  for (const auto& r : ds.records) {
    for (const auto& a : r.annotations) mitoses += a.kind == AnnotationKind::kMitoticFigure;
  }
  EXPECT_GT(mitoses, 0);
}

TEST(SyntheticTest, DeterministicAndSeedSensitive) {
  const Dataset a = generate_synthetic_dataset(6, 48, default_palettes(), 9);
  const Dataset b = generate_synthetic_dataset(6, 48, default_palettes(), 9);
  const Dataset c = generate_synthetic_dataset(6, 48, default_palettes(), 10);
  EXPECT_EQ(a.records, b.records);
  EXPECT_EQ(a.images, b.images);
  EXPECT_EQ(dataset_hash(a.records, a.images), dataset_hash(b.records, b.images));
  EXPECT_NE(dataset_hash(a.records, a.images), dataset_hash(c.records, c.images));
  EXPECT_EQ(dataset_hash(a.records, a.images).size(), 64u);
  EXPECT_THROW(generate_synthetic_dataset(0, 48, default_palettes(), 0), std::invalid_argument);
}

TEST(ManifestTest, WriteLoadRoundTrip) {
  testing::TempDir dir;
  const Dataset& ds = small_dataset();
  const auto manifest = write_dataset(ds, dir.path());
  EXPECT_TRUE(std::filesystem::exists(manifest));
  const Dataset back = load_dataset_with_images(manifest);
  EXPECT_EQ(back.records, ds.records);
  // PNG stores 8 bits, so pixels come back quantised.
  ASSERT_EQ(back.images.size(), ds.images.size());
  for (std::size_t i = 0; i < ds.images.size(); ++i) {
    EXPECT_EQ(to_bytes(back.images[i]), to_bytes(ds.images[i]));
  }
  EXPECT_EQ(dataset_hash(back.records, back.images), dataset_hash(ds.records, ds.images));
}

json read_json(const std::filesystem::path& p) {
  std::ifstream in(p);
  return json::parse(in);
}

void write_json(const std::filesystem::path& p, const json& j) {
  std::ofstream(p) << j.dump(1);
}

std::string load_error(const std::filesystem::path& manifest) {
  try {
    load_dataset(manifest);
  } catch (const DatasetError& e) {
    return e.what();
  }
  return "";
}

TEST(ManifestTest, ErrorsNameTheCase) {
  testing::TempDir dir;
  const auto manifest = write_dataset(small_dataset(), dir.path());
  const json good = read_json(manifest);

  json j = good;
  j["cases"][3]["tumor_type"] = "feline glioma";
  write_json(manifest, j);
  std::string msg = load_error(manifest);
  EXPECT_NE(msg.find(good["cases"][3]["case_id"].get<std::string>()), std::string::npos) << msg;
  EXPECT_NE(msg.find("feline glioma"), std::string::npos) << msg;

  j = good;
  j["cases"][1]["annotations"] = json::array({{{"box", {5, 5, 2, 9}}, {"kind", "mitotic-figure"}}});
  write_json(manifest, j);
  msg = load_error(manifest);
  EXPECT_NE(msg.find(good["cases"][1]["case_id"].get<std::string>()), std::string::npos) << msg;

  j = good;
  j["cases"][2].erase("height");
  write_json(manifest, j);
  EXPECT_NE(load_error(manifest).find("height"), std::string::npos);

  j = good;
  j["cases"][0]["image"] = "images/nowhere.png";
  write_json(manifest, j);
  EXPECT_NE(load_error(manifest).find("missing image"), std::string::npos);

  std::ofstream(manifest) << "{ not json";
  EXPECT_NE(load_error(manifest).find("not valid JSON"), std::string::npos);
  EXPECT_FALSE(load_error(dir.path() / "absent.json").empty());
}

TEST(ManifestTest, CorruptImageNamesTheCase) {
  testing::TempDir dir;
  const auto manifest = write_dataset(small_dataset(), dir.path());
  const auto& rec = small_dataset().records[4];
  std::ofstream(dir.path() / rec.image_path) << "garbage";
  try {
    load_dataset_with_images(manifest);
    FAIL() << "expected DatasetError";
  } catch (const DatasetError& e) {
    EXPECT_NE(std::string(e.what()).find(rec.case_id), std::string::npos);
  }
}

TEST(RemapTest, ClipsAndFilters) {
  std::mt19937_64 rng(3);
  for (int i = 0; i < 1000; ++i) {
    const Box b = testing::random_box(rng, 60.0, 2.0, 20.0);
    const Window w{10, 15, 30, 25};
    const auto out = remap_annotations(std::vector<Annotation>{{b, AnnotationKind::kMitoticFigure}}, w);
    const Box moved{b.x1 - 15, b.y1 - 10, b.x2 - 15, b.y2 - 10};
    const Box clipped = clip(moved, 25, 30);
    const double kept = clipped.valid() ? clipped.area() / b.area() : 0.0;
    if (kept >= kMinVisibleFraction) {
      ASSERT_EQ(out.size(), 1u);
      EXPECT_NEAR(out[0].box.x1, clipped.x1, 1e-12);
      EXPECT_NEAR(out[0].box.y2, clipped.y2, 1e-12);
    } else {
      EXPECT_TRUE(out.empty());
    }
  }
}

TEST(SamplingTest, PatchesCarryLabelsAndFitTheImage) {
  const Dataset& ds = small_dataset();
  std::mt19937_64 rng(4);
  for (std::size_t i = 0; i < ds.records.size(); ++i) {
    const auto patches = sample_patches(ds.records[i], ds.images[i], 32, 6,
                                        SamplingStrategy::kBalanced,
                                        default_tumor_classes(), rng);
    ASSERT_EQ(patches.size(), 6u);
    for (const auto& p : patches) {
      EXPECT_EQ(p.image.height, 32);
      EXPECT_EQ(p.tumor_label, tumor_index(ds.records[i].tumor_type, default_tumor_classes()));
      EXPECT_EQ(p.foreground, !p.annotations.empty());
      EXPECT_EQ(p.case_id, ds.records[i].case_id);
      for (const auto& a : p.annotations) {
        EXPECT_GE(a.box.x1, 0.0);
        EXPECT_LE(a.box.x2, 32.0);
      }
    }
  }
  EXPECT_THROW(sample_patches(ds.records[0], ds.images[0], 65, 1, SamplingStrategy::kUniform,
                              default_tumor_classes(), rng),
               std::invalid_argument);
}

TEST(SamplingTest, BalancedFindsMoreForeground) {
  const Dataset ds = generate_synthetic_dataset(24, 128, default_palettes(), 6);
  int balanced = 0;
  int uniform = 0;
  std::mt19937_64 ra(7);
  std::mt19937_64 rb(7);
  for (std::size_t i = 0; i < ds.records.size(); ++i) {
    for (const auto& p : sample_patches(ds.records[i], ds.images[i], 32, 8,
                                        SamplingStrategy::kBalanced, default_tumor_classes(), ra)) {
      balanced += p.foreground;
    }
    for (const auto& p : sample_patches(ds.records[i], ds.images[i], 32, 8,
                                        SamplingStrategy::kUniform, default_tumor_classes(), rb)) {
      uniform += p.foreground;
    }
  }
  EXPECT_GT(balanced, uniform);
}

TEST(SplitTest, LeaveOneTumorOut) {
  const Dataset& ds = small_dataset();
  const auto [train, test] = split_leave_one_tumor_out(ds.records, kDefaultHeldOut);
  EXPECT_EQ(train.size(), 10u);
  EXPECT_EQ(test.size(), 2u);
  for (const auto& r : test) EXPECT_EQ(r.tumor_type, kDefaultHeldOut);
  for (const auto& r : train) EXPECT_NE(r.tumor_type, kDefaultHeldOut);
  EXPECT_THROW(split_leave_one_tumor_out(ds.records, "feline glioma"), DatasetError);
  const Dataset only = filter_dataset(ds, [](const CaseRecord& r) {
    return r.tumor_type == "canine lymphoma";
  });
  EXPECT_THROW(split_leave_one_tumor_out(only.records, "canine lymphoma"), DatasetError);
}

TEST(ParseTest, EnumsRoundTrip) {
  for (auto k : {AnnotationKind::kMitoticFigure, AnnotationKind::kHardNegative}) {
    EXPECT_EQ(parse_annotation_kind(to_string(k)), k);
  }
  for (auto s : {Species::kHuman, Species::kCanine, Species::kUnknown}) {
    EXPECT_EQ(parse_species(to_string(s)), s);
  }
  EXPECT_EQ(parse_sampling_strategy("balanced"), SamplingStrategy::kBalanced);
  EXPECT_THROW(parse_annotation_kind("mitosis?"), DatasetError);
  EXPECT_THROW(tumor_index("feline glioma", default_tumor_classes()), DatasetError);
}

TEST(RngTest, StreamsAreIndependent) {
  auto a = derive_rng(1, {2, 3});
  auto b = derive_rng(1, {2, 3});
  auto c = derive_rng(1, {3, 2});
  auto d = derive_rng(2, {2, 3});
  const auto va = a();
  EXPECT_EQ(va, b());
  EXPECT_NE(va, c());
  EXPECT_NE(va, d());
}

}  // namespace
}  // namespace mitodet
