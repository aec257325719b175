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
#include <random>
#include <initializer_list>
#include <span>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include "mitodet/geometry.h"
#include "mitodet/image.h"

namespace mitodet {

enum class AnnotationKind { kMitoticFigure, kHardNegative };
enum class Species { kHuman, kCanine, kUnknown };

std::string to_string(AnnotationKind kind);
std::string to_string(Species species);
AnnotationKind parse_annotation_kind(const std::string& s);
Species parse_species(const std::string& s);

struct Annotation {
  Box box;
  AnnotationKind kind = AnnotationKind::kMitoticFigure;

  friend bool operator==(const Annotation&, const Annotation&) = default;
};

struct CaseRecord {
  std::string case_id;
  std::string image_path;  // relative paths resolve against the manifest
  int image_height = 0;
  int image_width = 0;
  std::string tumor_type;
  Species species = Species::kUnknown;
  std::string scanner = "unknown";
  std::vector<Annotation> annotations;

  friend bool operator==(const CaseRecord&, const CaseRecord&) = default;
};

// The six tumor types of the multi-domain mitosis training corpus.
const std::vector<std::string>& default_tumor_classes();
inline constexpr const char* kDefaultHeldOut = "human neuroendocrine tumor";

// Raised for manifest and record validation failures.
class DatasetError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Manifest JSON: {"version": 1, "cases": [{"case_id", "image", "height",
// "width", "tumor_type", "species", "scanner", "annotations": [{"box":
// [x1, y1, x2, y2], "kind": "mitotic-figure" | "hard-negative"}]}]}.
// Throws DatasetError naming the offending case.
std::vector<CaseRecord> load_dataset(const std::filesystem::path& manifest,
                                     const std::vector<std::string>& classes =
                                         default_tumor_classes());
void save_manifest(const std::filesystem::path& manifest,
                   std::span<const CaseRecord> records);
void validate_record(const CaseRecord& record,
                     const std::vector<std::string>& classes);

// Reads the pixel data behind a record, relative to `base_dir`.
Image load_case_image(const CaseRecord& record,
                      const std::filesystem::path& base_dir);

int tumor_index(const std::string& tumor_type,
                const std::vector<std::string>& classes);

// A patch is foreground iff it holds any annotation, mitotic or imposter.
bool label_foreground(std::span<const Annotation> annotations);

std::vector<Box> detection_boxes(std::span<const Annotation> annotations);

struct Window {
  int y = 0;
  int x = 0;
  int height = 0;
  int width = 0;
};

// Minimum fraction of a box's area that must survive a crop.
inline constexpr double kMinVisibleFraction = 0.3;

// Moves annotations into window coordinates, clips them to the window and
// drops those keeping less than kMinVisibleFraction of their area.
std::vector<Annotation> remap_annotations(std::span<const Annotation> annotations,
                                          const Window& window);
Image crop_image(const Image& image, const Window& window);

struct PatchSample {
  Image image;
  std::vector<Annotation> annotations;  // tile coordinates
  int tumor_label = 0;
  bool foreground = false;
  std::string case_id;
};

enum class SamplingStrategy { kBalanced, kUniform };
SamplingStrategy parse_sampling_strategy(const std::string& s);
std::string to_string(SamplingStrategy strategy);

// Balanced sampling alternates annotation-centred windows (centre jitter up
// to patch_size / 4) with uniformly placed ones.
std::vector<PatchSample> sample_patches(const CaseRecord& record,
                                        const Image& image, int patch_size,
                                        int count, SamplingStrategy strategy,
                                        const std::vector<std::string>& classes,
                                        std::mt19937_64& rng);

// Holds out every case of one tumor type. Throws DatasetError when the type
// is absent or nothing would be left to train on.
std::pair<std::vector<CaseRecord>, std::vector<CaseRecord>>
split_leave_one_tumor_out(std::span<const CaseRecord> records,
                          const std::string& held_out);

struct TumorPalette {
  std::string tumor_type;
  Species species = Species::kUnknown;
  std::string scanner;
  float background[3];
  float nucleus[3];
  float mitosis[3];
  float imposter[3];
};

const std::vector<TumorPalette>& default_palettes();

struct Dataset {
  std::vector<CaseRecord> records;
  std::vector<Image> images;  // parallel to records
};

// Loads the manifest and every referenced image.
Dataset load_dataset_with_images(const std::filesystem::path& manifest,
                                 const std::vector<std::string>& classes =
                                     default_tumor_classes());

// Subset of `dataset` whose records satisfy `keep`, order preserved.
template <typename Pred>
Dataset filter_dataset(const Dataset& dataset, Pred keep) {
  Dataset out;
  for (std::size_t i = 0; i < dataset.records.size(); ++i) {
    if (keep(dataset.records[i])) {
      out.records.push_back(dataset.records[i]);
      out.images.push_back(dataset.images[i]);
    }
  }
  return out;
}

// Round-robin over the palettes; per-type colours stand in for stain and
// scanner shift. Throws std::invalid_argument when n_cases < 1.
Dataset generate_synthetic_dataset(
    int n_cases, int image_size, std::span<const TumorPalette> palettes,
    std::uint64_t seed);

// Writes images/<case_id>.png and manifest.json under `out_dir`.
std::filesystem::path write_dataset(const Dataset& dataset,
                                    const std::filesystem::path& out_dir);

// Hex SHA-256 over the canonical manifest serialisation followed by each
// image's dimensions and 8-bit pixel bytes.
std::string dataset_hash(std::span<const CaseRecord> records,
                         std::span<const Image> images);

std::mt19937_64 derive_rng(std::uint64_t seed,
                           std::initializer_list<std::uint64_t> stream);

}  // namespace mitodet
