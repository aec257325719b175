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

#include "mitodet/augment.h"

#include <algorithm>
#include <cmath>
#include <stdexcept>
#include <string>

namespace mitodet {
namespace {

float luminance(float r, float g, float b) {
  return 0.299f * r + 0.587f * g + 0.114f * b;
}

float clamp01(float v) { return std::clamp(v, 0.0f, 1.0f); }

void rgb_to_hsv(float r, float g, float b, float& h, float& s, float& v) {
  const float mx = std::max({r, g, b});
  const float mn = std::min({r, g, b});
  const float d = mx - mn;
  v = mx;
  s = mx > 0.0f ? d / mx : 0.0f;
  if (d <= 0.0f) {
    h = 0.0f;
    return;
  }
  if (mx == r) {
    h = (g - b) / d;
  } else if (mx == g) {
    h = 2.0f + (b - r) / d;
  } else {
    h = 4.0f + (r - g) / d;
  }
  h /= 6.0f;
  if (h < 0.0f) h += 1.0f;
}

void hsv_to_rgb(float h, float s, float v, float& r, float& g, float& b) {
  const float h6 = h * 6.0f;
  const int sector = static_cast<int>(std::floor(h6)) % 6;
  const float f = h6 - std::floor(h6);
  const float p = v * (1.0f - s);
  const float q = v * (1.0f - s * f);
  const float t = v * (1.0f - s * (1.0f - f));
  switch (sector) {
    case 0: r = v; g = t; b = p; break;
    case 1: r = q; g = v; b = p; break;
    case 2: r = p; g = v; b = t; break;
    case 3: r = p; g = q; b = v; break;
    case 4: r = t; g = p; b = v; break;
    default: r = v; g = p; b = q; break;
  }
}

}  // namespace

void AugmentConfig::validate() const {
  if (!(brightness >= 0.0) || !(contrast >= 0.0) || !(saturation >= 0.0) ||
      !(hue >= 0.0)) {
    throw std::invalid_argument("jitter magnitudes must be >= 0");
  }
  if (hue > 0.5) throw std::invalid_argument("augment.hue must be <= 0.5");
  if (crop_size <= 0) throw std::invalid_argument("augment.crop_size must be > 0");
  if (!(flip_h_prob >= 0.0 && flip_h_prob <= 1.0) ||
      !(flip_v_prob >= 0.0 && flip_v_prob <= 1.0)) {
    throw std::invalid_argument("flip probabilities must lie in [0, 1]");
  }
}

JitterFactors sample_jitter(const AugmentConfig& config, std::mt19937_64& rng) {
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  auto factor = [&](double magnitude) {
    const double lo = std::max(0.0, 1.0 - magnitude);
    const double hi = 1.0 + magnitude;
    return lo + (hi - lo) * unit(rng);
  };
  JitterFactors f;
  f.brightness = factor(config.brightness);
  f.contrast = factor(config.contrast);
  f.saturation = factor(config.saturation);
  f.hue = -config.hue + 2.0 * config.hue * unit(rng);
  return f;
}

void adjust_brightness(Image& image, double factor) {
  const float k = static_cast<float>(factor);
  for (float& v : image.pixels) v = clamp01(v * k);
}

void adjust_contrast(Image& image, double factor) {
  double acc = 0.0;
  const std::size_t n = image.pixels.size() / 3;
  for (std::size_t i = 0; i < n; ++i) {
    acc += luminance(image.pixels[3 * i], image.pixels[3 * i + 1],
                     image.pixels[3 * i + 2]);
  }
  const float mean = n > 0 ? static_cast<float>(acc / static_cast<double>(n)) : 0.0f;
  const float k = static_cast<float>(factor);
  for (float& v : image.pixels) v = clamp01(mean + k * (v - mean));
}

void adjust_saturation(Image& image, double factor) {
  const float k = static_cast<float>(factor);
  const std::size_t n = image.pixels.size() / 3;
  for (std::size_t i = 0; i < n; ++i) {
    float* px = &image.pixels[3 * i];
    const float gray = luminance(px[0], px[1], px[2]);
    for (int c = 0; c < 3; ++c) px[c] = clamp01(gray + k * (px[c] - gray));
  }
}

void adjust_hue(Image& image, double shift) {
  if (shift < -0.5 || shift > 0.5) {
    throw std::invalid_argument("hue shift must lie in [-0.5, 0.5]");
  }
  const float s = static_cast<float>(shift);
  const std::size_t n = image.pixels.size() / 3;
  for (std::size_t i = 0; i < n; ++i) {
    float* px = &image.pixels[3 * i];
    float h, sat, val;
    rgb_to_hsv(px[0], px[1], px[2], h, sat, val);
    h += s;
    h -= std::floor(h);
    hsv_to_rgb(h, sat, val, px[0], px[1], px[2]);
    for (int c = 0; c < 3; ++c) px[c] = clamp01(px[c]);
  }
}

Image color_jitter(const Image& image, const AugmentConfig& config,
                   std::mt19937_64& rng) {
  for (float v : image.pixels) {
    if (!(v >= 0.0f && v <= 1.0f)) {
      throw std::invalid_argument("color_jitter: pixel value outside [0, 1]");
    }
  }
  const JitterFactors f = sample_jitter(config, rng);
  Image out = image;
  if (config.brightness > 0.0) adjust_brightness(out, f.brightness);
  if (config.contrast > 0.0) adjust_contrast(out, f.contrast);
  if (config.saturation > 0.0) adjust_saturation(out, f.saturation);
  if (config.hue > 0.0) adjust_hue(out, f.hue);
  return out;
}

Box flip_horizontal(const Box& box, double width) {
  return {width - box.x2, box.y1, width - box.x1, box.y2};
}

Box flip_vertical(const Box& box, double height) {
  return {box.x1, height - box.y2, box.x2, height - box.y1};
}

Image flip_image_horizontal(const Image& image) {
  Image out(image.height, image.width);
  for (int y = 0; y < image.height; ++y) {
    for (int x = 0; x < image.width; ++x) {
      for (int c = 0; c < 3; ++c) {
        out.at(y, image.width - 1 - x, c) = image.at(y, x, c);
      }
    }
  }
  return out;
}

Image flip_image_vertical(const Image& image) {
  Image out(image.height, image.width);
  const std::size_t row = static_cast<std::size_t>(image.width) * 3;
  for (int y = 0; y < image.height; ++y) {
    std::copy_n(image.pixels.begin() + static_cast<std::ptrdiff_t>(y * row), row,
                out.pixels.begin() +
                    static_cast<std::ptrdiff_t>((image.height - 1 - y) * row));
  }
  return out;
}

AugmentedSample random_crop_flip(const Image& image,
                                 std::span<const Annotation> annotations,
                                 const AugmentConfig& config,
                                 std::mt19937_64& rng) {
  const int crop = config.crop_size;
  if (crop <= 0 || crop > image.height || crop > image.width) {
    throw std::invalid_argument("crop size " + std::to_string(crop) +
                                " exceeds the " + std::to_string(image.height) +
                                "x" + std::to_string(image.width) + " source");
  }
  const int oy = std::uniform_int_distribution<int>(0, image.height - crop)(rng);
  const int ox = std::uniform_int_distribution<int>(0, image.width - crop)(rng);
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  const bool flip_h = unit(rng) < config.flip_h_prob;
  const bool flip_v = unit(rng) < config.flip_v_prob;

  const Window window{oy, ox, crop, crop};
  AugmentedSample out;
  out.image = (crop == image.height && crop == image.width)
                  ? image
                  : crop_image(image, window);
  out.annotations = remap_annotations(annotations, window);
  if (flip_h) {
    out.image = flip_image_horizontal(out.image);
    for (auto& a : out.annotations) a.box = flip_horizontal(a.box, crop);
  }
  if (flip_v) {
    out.image = flip_image_vertical(out.image);
    for (auto& a : out.annotations) a.box = flip_vertical(a.box, crop);
  }
  out.foreground = label_foreground(out.annotations);
  return out;
}

AugmentedSample compose(const Image& image,
                        std::span<const Annotation> annotations,
                        const AugmentConfig& config, std::uint64_t seed) {
  if (!config.enabled) {
    return {image, {annotations.begin(), annotations.end()},
            label_foreground(annotations)};
  }
  config.validate();
  std::mt19937_64 rng = derive_rng(seed, {0x61756eULL});
  AugmentedSample out = random_crop_flip(image, annotations, config, rng);
  out.image = color_jitter(out.image, config, rng);
  return out;
}

}  // namespace mitodet
