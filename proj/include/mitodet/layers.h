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
#include <string>
#include <vector>

namespace mitodet {

// Dense CHW feature map for a single image.
struct Tensor {
  int channels = 0;
  int height = 0;
  int width = 0;
  std::vector<float> data;

  Tensor() = default;
  Tensor(int c, int h, int w, float fill = 0.0f)
      : channels(c), height(h), width(w),
        data(static_cast<std::size_t>(c) * h * w, fill) {}

  std::size_t plane() const { return static_cast<std::size_t>(height) * width; }
  std::size_t size() const { return data.size(); }
  float& at(int c, int y, int x) {
    return data[(static_cast<std::size_t>(c) * height + y) * width + x];
  }
  float at(int c, int y, int x) const {
    return data[(static_cast<std::size_t>(c) * height + y) * width + x];
  }
  bool same_shape(const Tensor& o) const {
    return channels == o.channels && height == o.height && width == o.width;
  }
};

struct Parameter {
  std::string name;
  std::vector<float> value;
  std::vector<float> grad;

  Parameter() = default;
  Parameter(std::string n, std::size_t count)
      : name(std::move(n)), value(count, 0.0f), grad(count, 0.0f) {}
  std::size_t size() const { return value.size(); }
};

struct ConvCache {
  int in_channels = 0;
  int in_height = 0;
  int in_width = 0;
  std::vector<float> columns;  // im2col of the input, or the input for 1x1
  Tensor output;               // post-activation output, kept for ReLU masks
};

// 2-D convolution with bias and optional fused ReLU.
class Conv2d {
 public:
  Conv2d() = default;
  Conv2d(const std::string& name, int in_channels, int out_channels,
         int kernel, int stride, int pad, bool relu);

  // He-normal weights scaled by `weight_scale`, constant bias.
  void init(std::mt19937_64& rng, float bias = 0.0f, float weight_scale = 1.0f);
  void init_normal(std::mt19937_64& rng, float stddev, float bias = 0.0f);

  Tensor forward(const Tensor& x, ConvCache* cache = nullptr) const;
  // Accumulates parameter gradients. Returns dL/dx unless `need_input_grad`
  // is false, in which case an empty tensor comes back.
  Tensor backward(const Tensor& grad_out, const ConvCache& cache,
                  bool need_input_grad = true);

  int out_height(int h) const { return (h + 2 * pad_ - kernel_) / stride_ + 1; }
  int out_width(int w) const { return (w + 2 * pad_ - kernel_) / stride_ + 1; }
  int out_channels() const { return out_channels_; }

  Parameter& weight() { return weight_; }
  Parameter& bias() { return bias_; }
  void collect(std::vector<Parameter*>& out) {
    out.push_back(&weight_);
    out.push_back(&bias_);
  }

 private:
  bool pointwise() const { return kernel_ == 1 && stride_ == 1 && pad_ == 0; }

  int in_channels_ = 0;
  int out_channels_ = 0;
  int kernel_ = 1;
  int stride_ = 1;
  int pad_ = 0;
  bool relu_ = false;
  Parameter weight_;  // [out][in][k][k]
  Parameter bias_;
};

struct LinearCache {
  std::vector<float> input;
  std::vector<float> output;
};

class Linear {
 public:
  Linear() = default;
  Linear(const std::string& name, int in_features, int out_features, bool relu);

  void init(std::mt19937_64& rng, float bias = 0.0f);
  std::vector<float> forward(const std::vector<float>& x,
                             LinearCache* cache = nullptr) const;
  std::vector<float> backward(const std::vector<float>& grad_out,
                              const LinearCache& cache);

  void collect(std::vector<Parameter*>& out) {
    out.push_back(&weight_);
    out.push_back(&bias_);
  }

 private:
  int in_ = 0;
  int out_ = 0;
  bool relu_ = false;
  Parameter weight_;  // [out][in]
  Parameter bias_;
};

struct MaxPoolCache {
  int in_channels = 0;
  int in_height = 0;
  int in_width = 0;
  std::vector<std::int32_t> argmax;
};

// 3x3 stride-2 max pooling with padding 1.
Tensor max_pool_3x3s2(const Tensor& x, MaxPoolCache* cache = nullptr);
Tensor max_pool_3x3s2_backward(const Tensor& grad_out,
                               const MaxPoolCache& cache);

// Nearest-neighbour 2x upsampling cropped to (height, width).
Tensor upsample2x(const Tensor& x, int height, int width);
// Adjoint of upsample2x; accumulates into `grad_in` (shape of the source).
void upsample2x_backward(const Tensor& grad_out, Tensor& grad_in);

std::vector<float> global_average_pool(const Tensor& x);
Tensor global_average_pool_backward(const std::vector<float>& grad_out,
                                    int height, int width);

void add_inplace(Tensor& dst, const Tensor& src);
void relu_inplace(Tensor& t);
void relu_backward_inplace(Tensor& grad, const Tensor& output);

// Adam with bias correction.
class Adam {
 public:
  struct Options {
    double learning_rate = 1e-5;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double epsilon = 1e-8;
  };

  Adam(std::vector<Parameter*> params, Options options);
  void step();
  void zero_grad();
  std::int64_t steps() const { return step_; }
  const Options& options() const { return options_; }

 private:
  std::vector<Parameter*> params_;
  Options options_;
  std::vector<std::vector<float>> m_;
  std::vector<std::vector<float>> v_;
  std::int64_t step_ = 0;
};

}  // namespace mitodet
