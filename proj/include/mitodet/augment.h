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
#include <random>
#include <span>
#include <vector>

#include "mitodet/data.h"
#include "mitodet/image.h"

namespace mitodet {

struct AugmentConfig {
  double brightness = 0.35;
  double contrast = 0.2;
  double saturation = 0.1;
  double hue = 0.1;
  int crop_size = 224;
  double flip_h_prob = 0.5;
  double flip_v_prob = 0.5;
  bool enabled = true;

  void validate() const;
  friend bool operator==(const AugmentConfig&, const AugmentConfig&) = default;
};

// Factors drawn for one jitter application.
struct JitterFactors {
  double brightness = 1.0;
  double contrast = 1.0;
  double saturation = 1.0;
  double hue = 0.0;
};

// Always consumes four uniform draws so the stream does not depend on which
// magnitudes are zero.
JitterFactors sample_jitter(const AugmentConfig& config, std::mt19937_64& rng);

// Each adjustment clamps its output to [0, 1].
void adjust_brightness(Image& image, double factor);
void adjust_contrast(Image& image, double factor);
void adjust_saturation(Image& image, double factor);
// Shift on the unit hue circle, in [-0.5, 0.5].
void adjust_hue(Image& image, double shift);

// Brightness, contrast, saturation, then hue. Adjustments whose magnitude is
// zero in `config` are skipped, so a zero config is an exact no-op. Throws
// std::invalid_argument for pixel values outside [0, 1].
Image color_jitter(const Image& image, const AugmentConfig& config,
                   std::mt19937_64& rng);

struct AugmentedSample {
  Image image;
  std::vector<Annotation> annotations;
  bool foreground = false;
};

// Mirrors x -> width - x.
Box flip_horizontal(const Box& box, double width);
Box flip_vertical(const Box& box, double height);
Image flip_image_horizontal(const Image& image);
Image flip_image_vertical(const Image& image);

// Square random crop of config.crop_size (uniform offset), then horizontal
// and vertical flips. Boxes follow the pixels; crops drop boxes keeping less
// than 30% of their area.
AugmentedSample random_crop_flip(const Image& image,
                                 std::span<const Annotation> annotations,
                                 const AugmentConfig& config,
                                 std::mt19937_64& rng);

// Crop and flips, then colour jitter, all driven by `seed`. The foreground
// flag is recomputed from the surviving annotations.
AugmentedSample compose(const Image& image,
                        std::span<const Annotation> annotations,
                        const AugmentConfig& config, std::uint64_t seed);

}  // namespace mitodet
