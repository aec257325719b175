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

#include "mitodet/data.h"

#include <openssl/evp.h>

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <memory>
#include <numeric>
#include <sstream>

#include "json.hpp"

namespace mitodet {

using nlohmann::json;

std::string to_string(AnnotationKind kind) {
  return kind == AnnotationKind::kMitoticFigure ? "mitotic-figure"
                                                : "hard-negative";
}

std::string to_string(Species species) {
  switch (species) {
    case Species::kHuman:
      return "human";
    case Species::kCanine:
      return "canine";
    case Species::kUnknown:
      break;
  }
  return "unknown";
}

AnnotationKind parse_annotation_kind(const std::string& s) {
  if (s == "mitotic-figure") return AnnotationKind::kMitoticFigure;
  if (s == "hard-negative") return AnnotationKind::kHardNegative;
  throw DatasetError("unknown annotation kind '" + s + "'");
}

Species parse_species(const std::string& s) {
  if (s == "human") return Species::kHuman;
  if (s == "canine") return Species::kCanine;
  if (s == "unknown") return Species::kUnknown;
  throw DatasetError("unknown species '" + s + "'");
}

const std::vector<std::string>& default_tumor_classes() {
  static const std::vector<std::string> classes{
      "canine lung cancer",          "human breast cancer",
      "canine lymphoma",             "human neuroendocrine tumor",
      "canine cutaneous mast cell tumor", "human melanoma"};
  return classes;
}

int tumor_index(const std::string& tumor_type,
                const std::vector<std::string>& classes) {
  const auto it = std::find(classes.begin(), classes.end(), tumor_type);
  if (it == classes.end()) {
    throw DatasetError("unknown tumor type '" + tumor_type + "'");
  }
  return static_cast<int>(it - classes.begin());
}

std::mt19937_64 derive_rng(std::uint64_t seed,
                           std::initializer_list<std::uint64_t> stream) {
  std::vector<std::uint32_t> words{static_cast<std::uint32_t>(seed),
                                   static_cast<std::uint32_t>(seed >> 32)};
  for (std::uint64_t s : stream) {
    words.push_back(static_cast<std::uint32_t>(s));
    words.push_back(static_cast<std::uint32_t>(s >> 32));
  }
  std::seed_seq seq(words.begin(), words.end());
  return std::mt19937_64(seq);
}

namespace {

json record_to_json(const CaseRecord& r) {
  json anns = json::array();
  for (const auto& a : r.annotations) {
    anns.push_back({{"box", {a.box.x1, a.box.y1, a.box.x2, a.box.y2}},
                    {"kind", to_string(a.kind)}});
  }
  return {{"case_id", r.case_id},
          {"image", r.image_path},
          {"height", r.image_height},
          {"width", r.image_width},
          {"tumor_type", r.tumor_type},
          {"species", to_string(r.species)},
          {"scanner", r.scanner},
          {"annotations", anns}};
}

template <typename T>
T required(const json& j, const char* key) {
  if (!j.contains(key)) {
    throw DatasetError(std::string("missing field '") + key + "'");
  }
  try {
    return j.at(key).get<T>();
  } catch (const json::exception&) {
    throw DatasetError(std::string("field '") + key + "' has the wrong type");
  }
}

CaseRecord record_from_json(const json& j) {
  CaseRecord r;
  r.case_id = required<std::string>(j, "case_id");
  r.image_path = required<std::string>(j, "image");
  r.image_height = required<int>(j, "height");
  r.image_width = required<int>(j, "width");
  r.tumor_type = required<std::string>(j, "tumor_type");
  r.species = parse_species(j.value("species", std::string("unknown")));
  r.scanner = j.value("scanner", std::string("unknown"));
  if (j.contains("annotations")) {
    if (!j.at("annotations").is_array()) {
      throw DatasetError("'annotations' must be an array");
    }
    for (const auto& a : j.at("annotations")) {
      const auto box = required<std::vector<double>>(a, "box");
      if (box.size() != 4) throw DatasetError("box must have four numbers");
      r.annotations.push_back({{box[0], box[1], box[2], box[3]},
                               parse_annotation_kind(required<std::string>(a, "kind"))});
    }
  }
  return r;
}

}  // namespace

void validate_record(const CaseRecord& record,
                     const std::vector<std::string>& classes) {
  const std::string where = "case '" + record.case_id + "': ";
  if (record.case_id.empty()) throw DatasetError("record with empty case_id");
  if (std::find(classes.begin(), classes.end(), record.tumor_type) ==
      classes.end()) {
    throw DatasetError(where + "unknown tumor type '" + record.tumor_type + "'");
  }
  if (record.image_height <= 0 || record.image_width <= 0) {
    throw DatasetError(where + "image size must be positive");
  }
  for (std::size_t i = 0; i < record.annotations.size(); ++i) {
    const Box& b = record.annotations[i].box;
    const std::string ann = where + "annotation " + std::to_string(i) + " ";
    if (!std::isfinite(b.x1) || !std::isfinite(b.y1) || !std::isfinite(b.x2) ||
        !std::isfinite(b.y2)) {
      throw DatasetError(ann + "has non-finite coordinates");
    }
    if (b.x2 < b.x1) throw DatasetError(ann + "has x2 < x1");
    if (b.y2 < b.y1) throw DatasetError(ann + "has y2 < y1");
    if (b.x1 < 0 || b.y1 < 0 || b.x2 > record.image_width ||
        b.y2 > record.image_height) {
      throw DatasetError(ann + "lies outside the image");
    }
  }
}

std::vector<CaseRecord> load_dataset(const std::filesystem::path& manifest,
                                     const std::vector<std::string>& classes) {
  std::ifstream in(manifest);
  if (!in) throw DatasetError("cannot open manifest " + manifest.string());
  json doc;
  try {
    in >> doc;
  } catch (const json::exception& e) {
    throw DatasetError("manifest " + manifest.string() + " is not valid JSON: " +
                       e.what());
  }
  if (!doc.is_object() || !doc.contains("cases") || !doc["cases"].is_array()) {
    throw DatasetError("manifest needs a top-level 'cases' array");
  }

  const auto base = manifest.parent_path();
  std::vector<CaseRecord> records;
  std::vector<std::string> errors;
  std::size_t index = 0;
  for (const auto& entry : doc["cases"]) {
    const std::string label =
        entry.is_object() && entry.contains("case_id") && entry["case_id"].is_string()
            ? entry["case_id"].get<std::string>()
            : "#" + std::to_string(index);
    ++index;
    try {
      CaseRecord r = record_from_json(entry);
      validate_record(r, classes);
      if (!std::filesystem::exists(base / r.image_path)) {
        throw DatasetError("case '" + r.case_id + "': missing image file " +
                           (base / r.image_path).string());
      }
      records.push_back(std::move(r));
    } catch (const DatasetError& e) {
      const std::string msg = e.what();
      errors.push_back(msg.rfind("case '", 0) == 0 ? msg
                                                   : "case '" + label + "': " + msg);
    }
  }
  if (!errors.empty()) {
    std::string msg = std::to_string(errors.size()) + " invalid record(s): ";
    for (std::size_t i = 0; i < errors.size(); ++i) {
      msg += (i ? "; " : "") + errors[i];
    }
    throw DatasetError(msg);
  }
  return records;
}

void save_manifest(const std::filesystem::path& manifest,
                   std::span<const CaseRecord> records) {
  json cases = json::array();
  for (const auto& r : records) cases.push_back(record_to_json(r));
  std::ofstream out(manifest);
  if (!out) throw std::runtime_error("cannot write " + manifest.string());
  out << json{{"version", 1}, {"cases", cases}}.dump(2) << "\n";
}

Image load_case_image(const CaseRecord& record,
                      const std::filesystem::path& base_dir) {
  Image image;
  try {
    image = read_png(base_dir / record.image_path);
  } catch (const std::runtime_error& e) {
    throw DatasetError("case '" + record.case_id + "': " + e.what());
  }
  if (image.height != record.image_height || image.width != record.image_width) {
    throw DatasetError("case '" + record.case_id +
                       "': image size differs from the manifest");
  }
  return image;
}

Dataset load_dataset_with_images(const std::filesystem::path& manifest,
                                 const std::vector<std::string>& classes) {
  Dataset ds;
  ds.records = load_dataset(manifest, classes);
  const auto base = manifest.parent_path();
  for (const auto& r : ds.records) ds.images.push_back(load_case_image(r, base));
  return ds;
}

bool label_foreground(std::span<const Annotation> annotations) {
  return !annotations.empty();
}

std::vector<Box> detection_boxes(std::span<const Annotation> annotations) {
  std::vector<Box> out;
  for (const auto& a : annotations) {
    if (a.kind == AnnotationKind::kMitoticFigure) out.push_back(a.box);
  }
  return out;
}

std::vector<Annotation> remap_annotations(std::span<const Annotation> annotations,
                                          const Window& window) {
  std::vector<Annotation> out;
  for (const auto& a : annotations) {
    const Box moved{a.box.x1 - window.x, a.box.y1 - window.y,
                    a.box.x2 - window.x, a.box.y2 - window.y};
    const Box clipped = clip(moved, window.width, window.height);
    const double area = moved.area();
    if (area > 0.0) {
      if (clipped.area() < kMinVisibleFraction * area) continue;
    } else if (!(clipped == moved)) {
      continue;
    }
    out.push_back({clipped, a.kind});
  }
  return out;
}

Image crop_image(const Image& image, const Window& window) {
  if (window.y < 0 || window.x < 0 || window.height <= 0 || window.width <= 0 ||
      window.y + window.height > image.height ||
      window.x + window.width > image.width) {
    throw std::invalid_argument("crop window outside the image");
  }
  Image out(window.height, window.width);
  for (int y = 0; y < window.height; ++y) {
    const auto src = image.pixels.begin() +
                     (static_cast<std::ptrdiff_t>(window.y + y) * image.width + window.x) * 3;
    std::copy(src, src + static_cast<std::ptrdiff_t>(window.width) * 3,
              out.pixels.begin() + static_cast<std::ptrdiff_t>(y) * window.width * 3);
  }
  return out;
}

SamplingStrategy parse_sampling_strategy(const std::string& s) {
  if (s == "balanced") return SamplingStrategy::kBalanced;
  if (s == "uniform") return SamplingStrategy::kUniform;
  throw std::invalid_argument("unknown sampling strategy '" + s + "'");
}

std::string to_string(SamplingStrategy strategy) {
  return strategy == SamplingStrategy::kBalanced ? "balanced" : "uniform";
}

std::vector<PatchSample> sample_patches(const CaseRecord& record,
                                        const Image& image, int patch_size,
                                        int count, SamplingStrategy strategy,
                                        const std::vector<std::string>& classes,
                                        std::mt19937_64& rng) {
  if (patch_size <= 0 || patch_size > image.height || patch_size > image.width) {
    throw std::invalid_argument("patch size " + std::to_string(patch_size) +
                                " does not fit case '" + record.case_id + "'");
  }
  const int label = tumor_index(record.tumor_type, classes);
  const int max_y = image.height - patch_size;
  const int max_x = image.width - patch_size;
  const double jitter = patch_size / 4.0;

  std::vector<PatchSample> patches;
  for (int i = 0; i < count; ++i) {
    Window w{0, 0, patch_size, patch_size};
    const bool centred = strategy == SamplingStrategy::kBalanced && i % 2 == 0 &&
                         !record.annotations.empty();
    if (centred) {
      std::uniform_int_distribution<std::size_t> pick(0, record.annotations.size() - 1);
      std::uniform_real_distribution<double> offset(-jitter, jitter);
      const Box& target = record.annotations[pick(rng)].box;
      const double cy = target.center_y() + offset(rng);
      const double cx = target.center_x() + offset(rng);
      w.y = std::clamp(static_cast<int>(std::lround(cy - patch_size / 2.0)), 0, max_y);
      w.x = std::clamp(static_cast<int>(std::lround(cx - patch_size / 2.0)), 0, max_x);
    } else {
      w.y = std::uniform_int_distribution<int>(0, max_y)(rng);
      w.x = std::uniform_int_distribution<int>(0, max_x)(rng);
    }
    PatchSample patch;
    patch.image = crop_image(image, w);
    patch.annotations = remap_annotations(record.annotations, w);
    patch.tumor_label = label;
    patch.foreground = label_foreground(patch.annotations);
    patch.case_id = record.case_id;
    patches.push_back(std::move(patch));
  }
  return patches;
}

std::pair<std::vector<CaseRecord>, std::vector<CaseRecord>>
split_leave_one_tumor_out(std::span<const CaseRecord> records,
                          const std::string& held_out) {
  std::vector<CaseRecord> train;
  std::vector<CaseRecord> test;
  for (const auto& r : records) {
    (r.tumor_type == held_out ? test : train).push_back(r);
  }
  if (test.empty()) {
    throw DatasetError("held-out tumor type '" + held_out +
                       "' does not occur in the dataset");
  }
  if (train.empty()) {
    throw DatasetError("holding out '" + held_out +
                       "' leaves no training cases");
  }
  return {std::move(train), std::move(test)};
}

const std::vector<TumorPalette>& default_palettes() {
  // Background, nucleus, mitosis and imposter colours per tumor type.
  static const std::vector<TumorPalette> palettes{
      {"canine lung cancer", Species::kCanine, "synthetic-scanner-1",
       {0.93f, 0.78f, 0.85f}, {0.58f, 0.42f, 0.66f}, {0.24f, 0.10f, 0.32f},
       {0.42f, 0.27f, 0.50f}},
      {"human breast cancer", Species::kHuman, "unknown",
       {0.90f, 0.72f, 0.80f}, {0.55f, 0.38f, 0.62f}, {0.22f, 0.08f, 0.28f},
       {0.39f, 0.24f, 0.46f}},
      {"canine lymphoma", Species::kCanine, "synthetic-scanner-2",
       {0.86f, 0.74f, 0.90f}, {0.50f, 0.40f, 0.72f}, {0.18f, 0.12f, 0.36f},
       {0.35f, 0.27f, 0.55f}},
      {"human neuroendocrine tumor", Species::kHuman, "synthetic-scanner-3",
       {0.94f, 0.88f, 0.96f}, {0.70f, 0.62f, 0.80f}, {0.42f, 0.34f, 0.56f},
       {0.56f, 0.48f, 0.68f}},
      {"canine cutaneous mast cell tumor", Species::kCanine,
       "synthetic-scanner-4", {0.95f, 0.83f, 0.80f}, {0.60f, 0.44f, 0.60f},
       {0.26f, 0.12f, 0.28f}, {0.44f, 0.29f, 0.44f}},
      {"human melanoma", Species::kHuman, "synthetic-scanner-5",
       {0.88f, 0.77f, 0.70f}, {0.52f, 0.40f, 0.50f}, {0.22f, 0.13f, 0.20f},
       {0.38f, 0.27f, 0.36f}},
  };
  return palettes;
}

namespace {

void blend_ellipse(Image& image, double cx, double cy, double ax, double ay,
                   const float color[3], float opacity) {
  const int y0 = std::max(0, static_cast<int>(std::floor(cy - ay - 1)));
  const int y1 = std::min(image.height - 1, static_cast<int>(std::ceil(cy + ay + 1)));
  const int x0 = std::max(0, static_cast<int>(std::floor(cx - ax - 1)));
  const int x1 = std::min(image.width - 1, static_cast<int>(std::ceil(cx + ax + 1)));
  const double soft = std::min(ax, ay);
  for (int y = y0; y <= y1; ++y) {
    for (int x = x0; x <= x1; ++x) {
      const double dx = (x + 0.5 - cx) / ax;
      const double dy = (y + 0.5 - cy) / ay;
      const double r = std::sqrt(dx * dx + dy * dy);
      const double cover = std::clamp((1.0 - r) * soft + 0.5, 0.0, 1.0);
      if (cover <= 0.0) continue;
      const float a = static_cast<float>(cover) * opacity;
      for (int c = 0; c < 3; ++c) {
        float& v = image.at(y, x, c);
        v = (1.0f - a) * v + a * color[c];
      }
    }
  }
}

bool overlaps_any(const Box& b, const std::vector<Box>& placed) {
  for (const auto& p : placed) {
    if (b.x1 < p.x2 + 2 && p.x1 < b.x2 + 2 && b.y1 < p.y2 + 2 && p.y1 < b.y2 + 2) {
      return true;
    }
  }
  return false;
}

}  // namespace

Dataset generate_synthetic_dataset(
    int n_cases, int image_size, std::span<const TumorPalette> palettes,
    std::uint64_t seed) {
  if (n_cases < 1) throw std::invalid_argument("n_cases must be >= 1");
  if (image_size < 32) throw std::invalid_argument("image_size must be >= 32");
  if (palettes.empty()) throw std::invalid_argument("no tumor palettes");

  const double area_scale =
      static_cast<double>(image_size) * image_size / (128.0 * 128.0);
  Dataset ds;
  for (int i = 0; i < n_cases; ++i) {
    const TumorPalette& pal = palettes[static_cast<std::size_t>(i) % palettes.size()];
    auto rng = derive_rng(seed, {static_cast<std::uint64_t>(i)});
    std::uniform_real_distribution<double> unit(0.0, 1.0);
    std::normal_distribution<float> noise(0.0f, 0.015f);

    char id[32];
    std::snprintf(id, sizeof(id), "case_%04d", i);
    CaseRecord rec;
    rec.case_id = id;
    rec.image_path = std::string("images/") + id + ".png";
    rec.image_height = image_size;
    rec.image_width = image_size;
    rec.tumor_type = pal.tumor_type;
    rec.species = pal.species;
    rec.scanner = pal.scanner;

    // Per-case, per-channel stain drift.
    float drift[3];
    for (float& d : drift) d = static_cast<float>(0.9 + 0.2 * unit(rng));
    auto shade = [&](const float c[3], float out[3]) {
      for (int k = 0; k < 3; ++k) out[k] = std::clamp(c[k] * drift[k], 0.0f, 1.0f);
    };
    float bg[3], nucleus[3], mitosis[3], imposter[3];
    shade(pal.background, bg);
    shade(pal.nucleus, nucleus);
    shade(pal.mitosis, mitosis);
    shade(pal.imposter, imposter);

    Image img(image_size, image_size);
    const double fx = 2.0 * M_PI * (1.0 + 2.0 * unit(rng)) / image_size;
    const double fy = 2.0 * M_PI * (1.0 + 2.0 * unit(rng)) / image_size;
    const double phase = 2.0 * M_PI * unit(rng);
    for (int y = 0; y < image_size; ++y) {
      for (int x = 0; x < image_size; ++x) {
        const float wave = static_cast<float>(0.03 * std::sin(fx * x + fy * y + phase));
        for (int c = 0; c < 3; ++c) img.at(y, x, c) = bg[c] + wave;
      }
    }

    // Interphase nuclei: small, unannotated clutter.
    const int n_nuclei =
        std::poisson_distribution<int>(22.0 * area_scale)(rng);
    for (int k = 0; k < n_nuclei; ++k) {
      const double r = 2.5 + 2.0 * unit(rng);
      blend_ellipse(img, unit(rng) * image_size, unit(rng) * image_size,
                    r * (0.8 + 0.4 * unit(rng)), r, nucleus, 0.85f);
    }

    std::vector<Box> placed;
    auto place = [&](double min_axis, double max_axis, Box* out_box,
                     double* cx, double* cy, double* ax, double* ay) {
      for (int attempt = 0; attempt < 50; ++attempt) {
        *ax = min_axis + (max_axis - min_axis) * unit(rng);
        *ay = min_axis + (max_axis - min_axis) * unit(rng);
        *cx = *ax + 1.0 + unit(rng) * (image_size - 2.0 * *ax - 2.0);
        *cy = *ay + 1.0 + unit(rng) * (image_size - 2.0 * *ay - 2.0);
        const Box b{*cx - *ax, *cy - *ay, *cx + *ax, *cy + *ay};
        if (!overlaps_any(b, placed)) {
          *out_box = b;
          placed.push_back(b);
          return true;
        }
      }
      return false;
    };

    const bool has_mitoses = pal.tumor_type != "human melanoma";
    const int n_imposters = std::poisson_distribution<int>(1.5 * area_scale)(rng);
    const int n_mitoses =
        has_mitoses ? std::poisson_distribution<int>(2.5 * area_scale)(rng) : 0;

    for (int k = 0; k < n_imposters; ++k) {
      Box b;
      double cx, cy, ax, ay;
      if (!place(6.0, 10.0, &b, &cx, &cy, &ax, &ay)) continue;
      blend_ellipse(img, cx, cy, ax, ay, imposter, 0.9f);
      rec.annotations.push_back({b, AnnotationKind::kHardNegative});
    }
    for (int k = 0; k < n_mitoses; ++k) {
      Box b;
      double cx, cy, ax, ay;
      if (!place(6.0, 11.0, &b, &cx, &cy, &ax, &ay)) continue;
      blend_ellipse(img, cx, cy, ax, ay, mitosis, 0.95f);
      // Condensed chromatin: a darker core.
      blend_ellipse(img, cx, cy, 0.55 * ax, 0.55 * ay, mitosis, 0.6f);
      rec.annotations.push_back({b, AnnotationKind::kMitoticFigure});
    }

    for (float& v : img.pixels) v = std::clamp(v + noise(rng), 0.0f, 1.0f);
    // Quantise so in-memory pixels equal the PNG round trip.
    img = from_bytes(to_bytes(img), image_size, image_size);

    ds.records.push_back(std::move(rec));
    ds.images.push_back(std::move(img));
  }
  return ds;
}

std::filesystem::path write_dataset(const Dataset& dataset,
                                    const std::filesystem::path& out_dir) {
  std::filesystem::create_directories(out_dir / "images");
  for (std::size_t i = 0; i < dataset.records.size(); ++i) {
    write_png(out_dir / dataset.records[i].image_path, dataset.images[i]);
  }
  const auto manifest = out_dir / "manifest.json";
  save_manifest(manifest, dataset.records);
  return manifest;
}

std::string dataset_hash(std::span<const CaseRecord> records,
                         std::span<const Image> images) {
  json cases = json::array();
  for (const auto& r : records) cases.push_back(record_to_json(r));
  const std::string canonical = cases.dump();

  std::unique_ptr<EVP_MD_CTX, decltype(&EVP_MD_CTX_free)> ctx(EVP_MD_CTX_new(),
                                                              &EVP_MD_CTX_free);
  if (!ctx || EVP_DigestInit_ex(ctx.get(), EVP_sha256(), nullptr) != 1) {
    throw std::runtime_error("SHA-256 initialisation failed");
  }
  EVP_DigestUpdate(ctx.get(), canonical.data(), canonical.size());
  for (const auto& image : images) {
    const std::string dims =
        std::to_string(image.height) + "x" + std::to_string(image.width);
    EVP_DigestUpdate(ctx.get(), dims.data(), dims.size());
    const auto bytes = to_bytes(image);
    EVP_DigestUpdate(ctx.get(), bytes.data(), bytes.size());
  }
  unsigned char digest[EVP_MAX_MD_SIZE];
  unsigned int len = 0;
  EVP_DigestFinal_ex(ctx.get(), digest, &len);
  std::string hex;
  char buf[3];
  for (unsigned int i = 0; i < len; ++i) {
    std::snprintf(buf, sizeof(buf), "%02x", digest[i]);
    hex += buf;
  }
  return hex;
}

}  // namespace mitodet
