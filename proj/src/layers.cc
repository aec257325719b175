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

#include "mitodet/layers.h"

#include <Eigen/Core>
#include <algorithm>
#include <cmath>
#include <limits>
#include <stdexcept>

namespace mitodet {
namespace {

using RowMatrix =
    Eigen::Matrix<float, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MatrixMap = Eigen::Map<RowMatrix>;
using ConstMatrixMap = Eigen::Map<const RowMatrix>;

void im2col(const float* data, int channels, int height, int width, int kernel,
            int pad, int stride, int out_h, int out_w, float* col) {
  for (int c = 0; c < channels; ++c) {
    const float* plane = data + static_cast<std::size_t>(c) * height * width;
    for (int ky = 0; ky < kernel; ++ky) {
      for (int kx = 0; kx < kernel; ++kx) {
        for (int oy = 0; oy < out_h; ++oy) {
          const int iy = oy * stride - pad + ky;
          if (iy < 0 || iy >= height) {
            std::fill(col, col + out_w, 0.0f);
            col += out_w;
            continue;
          }
          const float* row = plane + static_cast<std::size_t>(iy) * width;
          for (int ox = 0; ox < out_w; ++ox) {
            const int ix = ox * stride - pad + kx;
            *col++ = (ix >= 0 && ix < width) ? row[ix] : 0.0f;
          }
        }
      }
    }
  }
}

void col2im(const float* col, int channels, int height, int width, int kernel,
            int pad, int stride, int out_h, int out_w, float* data) {
  for (int c = 0; c < channels; ++c) {
    float* plane = data + static_cast<std::size_t>(c) * height * width;
    for (int ky = 0; ky < kernel; ++ky) {
      for (int kx = 0; kx < kernel; ++kx) {
        for (int oy = 0; oy < out_h; ++oy) {
          const int iy = oy * stride - pad + ky;
          if (iy < 0 || iy >= height) {
            col += out_w;
            continue;
          }
          float* row = plane + static_cast<std::size_t>(iy) * width;
          for (int ox = 0; ox < out_w; ++ox) {
            const int ix = ox * stride - pad + kx;
            if (ix >= 0 && ix < width) row[ix] += *col;
            ++col;
          }
        }
      }
    }
  }
}

}  // namespace

Conv2d::Conv2d(const std::string& name, int in_channels, int out_channels,
               int kernel, int stride, int pad, bool relu)
    : in_channels_(in_channels),
      out_channels_(out_channels),
      kernel_(kernel),
      stride_(stride),
      pad_(pad),
      relu_(relu),
      weight_(name + ".weight", static_cast<std::size_t>(out_channels) *
                                    in_channels * kernel * kernel),
      bias_(name + ".bias", static_cast<std::size_t>(out_channels)) {
  if (in_channels <= 0 || out_channels <= 0 || kernel <= 0 || stride <= 0 ||
      pad < 0) {
    throw std::invalid_argument("Conv2d " + name + ": bad geometry");
  }
}

void Conv2d::init(std::mt19937_64& rng, float bias, float weight_scale) {
  const float fan_in = static_cast<float>(in_channels_ * kernel_ * kernel_);
  std::normal_distribution<float> dist(0.0f,
                                       weight_scale * std::sqrt(2.0f / fan_in));
  for (float& w : weight_.value) w = dist(rng);
  std::fill(bias_.value.begin(), bias_.value.end(), bias);
}

void Conv2d::init_normal(std::mt19937_64& rng, float stddev, float bias) {
  std::normal_distribution<float> dist(0.0f, stddev);
  for (float& w : weight_.value) w = dist(rng);
  std::fill(bias_.value.begin(), bias_.value.end(), bias);
}

Tensor Conv2d::forward(const Tensor& x, ConvCache* cache) const {
  if (x.channels != in_channels_) {
    throw std::invalid_argument(weight_.name + ": expected " +
                                std::to_string(in_channels_) +
                                " input channels, got " +
                                std::to_string(x.channels));
  }
  const int oh = out_height(x.height);
  const int ow = out_width(x.width);
  if (oh <= 0 || ow <= 0) {
    throw std::invalid_argument(weight_.name + ": input too small");
  }
  const int k = in_channels_ * kernel_ * kernel_;
  const int hw = oh * ow;

  std::vector<float> local;
  std::vector<float>& columns = cache != nullptr ? cache->columns : local;
  const float* col_ptr = x.data.data();
  if (!pointwise()) {
    columns.resize(static_cast<std::size_t>(k) * hw);
    im2col(x.data.data(), in_channels_, x.height, x.width, kernel_, pad_,
           stride_, oh, ow, columns.data());
    col_ptr = columns.data();
  } else if (cache != nullptr) {
    columns = x.data;
    col_ptr = columns.data();
  }

  Tensor out(out_channels_, oh, ow);
  ConstMatrixMap w(weight_.value.data(), out_channels_, k);
  ConstMatrixMap col(col_ptr, k, hw);
  MatrixMap y(out.data.data(), out_channels_, hw);
  y.noalias() = w * col;
  for (int c = 0; c < out_channels_; ++c) {
    y.row(c).array() += bias_.value[c];
  }
  if (relu_) relu_inplace(out);

  if (cache != nullptr) {
    cache->in_channels = x.channels;
    cache->in_height = x.height;
    cache->in_width = x.width;
    cache->output = out;
  }
  return out;
}

Tensor Conv2d::backward(const Tensor& grad_out, const ConvCache& cache,
                        bool need_input_grad) {
  const int oh = cache.output.height;
  const int ow = cache.output.width;
  const int hw = oh * ow;
  const int k = in_channels_ * kernel_ * kernel_;
  if (grad_out.channels != out_channels_ || grad_out.height != oh ||
      grad_out.width != ow) {
    throw std::invalid_argument(weight_.name + ": gradient shape mismatch");
  }

  Tensor g = grad_out;
  if (relu_) relu_backward_inplace(g, cache.output);

  ConstMatrixMap gm(g.data.data(), out_channels_, hw);
  ConstMatrixMap col(cache.columns.data(), k, hw);
  MatrixMap dw(weight_.grad.data(), out_channels_, k);
  dw.noalias() += gm * col.transpose();
  // Plain loop: Eigen's vectorised sum depends on buffer alignment.
  for (int c = 0; c < out_channels_; ++c) {
    const float* row = g.data.data() + static_cast<std::size_t>(c) * hw;
    double s = 0.0;
    for (int i = 0; i < hw; ++i) s += row[i];
    bias_.grad[c] += static_cast<float>(s);
  }

  if (!need_input_grad) return {};

  ConstMatrixMap w(weight_.value.data(), out_channels_, k);
  Tensor dx(cache.in_channels, cache.in_height, cache.in_width);
  if (pointwise()) {
    MatrixMap dxm(dx.data.data(), k, hw);
    dxm.noalias() = w.transpose() * gm;
  } else {
    RowMatrix dcol(k, hw);
    dcol.noalias() = w.transpose() * gm;
    col2im(dcol.data(), in_channels_, cache.in_height, cache.in_width, kernel_,
           pad_, stride_, oh, ow, dx.data.data());
  }
  return dx;
}

Linear::Linear(const std::string& name, int in_features, int out_features,
               bool relu)
    : in_(in_features),
      out_(out_features),
      relu_(relu),
      weight_(name + ".weight",
              static_cast<std::size_t>(in_features) * out_features),
      bias_(name + ".bias", static_cast<std::size_t>(out_features)) {
  if (in_features <= 0 || out_features <= 0) {
    throw std::invalid_argument("Linear " + name + ": bad size");
  }
}

void Linear::init(std::mt19937_64& rng, float bias) {
  const float scale = relu_ ? std::sqrt(2.0f / in_) : std::sqrt(1.0f / in_);
  std::normal_distribution<float> dist(0.0f, scale);
  for (float& w : weight_.value) w = dist(rng);
  std::fill(bias_.value.begin(), bias_.value.end(), bias);
}

std::vector<float> Linear::forward(const std::vector<float>& x,
                                   LinearCache* cache) const {
  if (static_cast<int>(x.size()) != in_) {
    throw std::invalid_argument(weight_.name + ": input size mismatch");
  }
  std::vector<float> y(out_);
  for (int o = 0; o < out_; ++o) {
    const float* row = weight_.value.data() + static_cast<std::size_t>(o) * in_;
    float acc = bias_.value[o];
    for (int i = 0; i < in_; ++i) acc += row[i] * x[i];
    y[o] = relu_ ? std::max(acc, 0.0f) : acc;
  }
  if (cache != nullptr) {
    cache->input = x;
    cache->output = y;
  }
  return y;
}

std::vector<float> Linear::backward(const std::vector<float>& grad_out,
                                    const LinearCache& cache) {
  std::vector<float> dx(in_, 0.0f);
  for (int o = 0; o < out_; ++o) {
    float g = grad_out[o];
    if (relu_ && cache.output[o] <= 0.0f) g = 0.0f;
    bias_.grad[o] += g;
    const float* row = weight_.value.data() + static_cast<std::size_t>(o) * in_;
    float* grow = weight_.grad.data() + static_cast<std::size_t>(o) * in_;
    for (int i = 0; i < in_; ++i) {
      grow[i] += g * cache.input[i];
      dx[i] += g * row[i];
    }
  }
  return dx;
}

Tensor max_pool_3x3s2(const Tensor& x, MaxPoolCache* cache) {
  const int oh = (x.height - 1) / 2 + 1;
  const int ow = (x.width - 1) / 2 + 1;
  Tensor out(x.channels, oh, ow);
  if (cache != nullptr) {
    cache->in_channels = x.channels;
    cache->in_height = x.height;
    cache->in_width = x.width;
    cache->argmax.assign(out.size(), -1);
  }
  std::size_t o = 0;
  for (int c = 0; c < x.channels; ++c) {
    for (int oy = 0; oy < oh; ++oy) {
      for (int ox = 0; ox < ow; ++ox, ++o) {
        float best = -std::numeric_limits<float>::infinity();
        std::int32_t best_idx = -1;
        for (int ky = 0; ky < 3; ++ky) {
          const int iy = oy * 2 - 1 + ky;
          if (iy < 0 || iy >= x.height) continue;
          for (int kx = 0; kx < 3; ++kx) {
            const int ix = ox * 2 - 1 + kx;
            if (ix < 0 || ix >= x.width) continue;
            const std::int32_t idx = static_cast<std::int32_t>(
                (static_cast<std::size_t>(c) * x.height + iy) * x.width + ix);
            if (x.data[idx] > best) {
              best = x.data[idx];
              best_idx = idx;
            }
          }
        }
        out.data[o] = best;
        if (cache != nullptr) cache->argmax[o] = best_idx;
      }
    }
  }
  return out;
}

Tensor max_pool_3x3s2_backward(const Tensor& grad_out,
                               const MaxPoolCache& cache) {
  Tensor dx(cache.in_channels, cache.in_height, cache.in_width);
  for (std::size_t o = 0; o < grad_out.size(); ++o) {
    dx.data[cache.argmax[o]] += grad_out.data[o];
  }
  return dx;
}

Tensor upsample2x(const Tensor& x, int height, int width) {
  Tensor out(x.channels, height, width);
  for (int c = 0; c < x.channels; ++c) {
    for (int y = 0; y < height; ++y) {
      const int sy = std::min(y / 2, x.height - 1);
      for (int xx = 0; xx < width; ++xx) {
        const int sx = std::min(xx / 2, x.width - 1);
        out.at(c, y, xx) = x.at(c, sy, sx);
      }
    }
  }
  return out;
}

void upsample2x_backward(const Tensor& grad_out, Tensor& grad_in) {
  for (int c = 0; c < grad_out.channels; ++c) {
    for (int y = 0; y < grad_out.height; ++y) {
      const int sy = std::min(y / 2, grad_in.height - 1);
      for (int xx = 0; xx < grad_out.width; ++xx) {
        const int sx = std::min(xx / 2, grad_in.width - 1);
        grad_in.at(c, sy, sx) += grad_out.at(c, y, xx);
      }
    }
  }
}

std::vector<float> global_average_pool(const Tensor& x) {
  std::vector<float> out(x.channels, 0.0f);
  const std::size_t plane = x.plane();
  for (int c = 0; c < x.channels; ++c) {
    double acc = 0.0;
    const float* p = x.data.data() + c * plane;
    for (std::size_t i = 0; i < plane; ++i) acc += p[i];
    out[c] = static_cast<float>(acc / static_cast<double>(plane));
  }
  return out;
}

Tensor global_average_pool_backward(const std::vector<float>& grad_out,
                                    int height, int width) {
  Tensor dx(static_cast<int>(grad_out.size()), height, width);
  const std::size_t plane = dx.plane();
  for (int c = 0; c < dx.channels; ++c) {
    const float g = grad_out[c] / static_cast<float>(plane);
    std::fill(dx.data.begin() + c * plane, dx.data.begin() + (c + 1) * plane, g);
  }
  return dx;
}

void add_inplace(Tensor& dst, const Tensor& src) {
  if (!dst.same_shape(src)) throw std::invalid_argument("add: shape mismatch");
  for (std::size_t i = 0; i < dst.size(); ++i) dst.data[i] += src.data[i];
}

void relu_inplace(Tensor& t) {
  for (float& v : t.data) v = std::max(v, 0.0f);
}

void relu_backward_inplace(Tensor& grad, const Tensor& output) {
  for (std::size_t i = 0; i < grad.size(); ++i) {
    if (output.data[i] <= 0.0f) grad.data[i] = 0.0f;
  }
}

Adam::Adam(std::vector<Parameter*> params, Options options)
    : params_(std::move(params)), options_(options) {
  if (!(options_.learning_rate > 0.0)) {
    throw std::invalid_argument("learning rate must be positive");
  }
  for (const Parameter* p : params_) {
    m_.emplace_back(p->size(), 0.0f);
    v_.emplace_back(p->size(), 0.0f);
  }
}

void Adam::step() {
  ++step_;
  const double bc1 = 1.0 - std::pow(options_.beta1, static_cast<double>(step_));
  const double bc2 = 1.0 - std::pow(options_.beta2, static_cast<double>(step_));
  const float lr = static_cast<float>(options_.learning_rate * std::sqrt(bc2) / bc1);
  const float b1 = static_cast<float>(options_.beta1);
  const float b2 = static_cast<float>(options_.beta2);
  const float eps = static_cast<float>(options_.epsilon * std::sqrt(bc2));
  for (std::size_t i = 0; i < params_.size(); ++i) {
    Parameter& p = *params_[i];
    std::vector<float>& m = m_[i];
    std::vector<float>& v = v_[i];
    for (std::size_t j = 0; j < p.size(); ++j) {
      const float g = p.grad[j];
      m[j] = b1 * m[j] + (1.0f - b1) * g;
      v[j] = b2 * v[j] + (1.0f - b2) * g * g;
      p.value[j] -= lr * m[j] / (std::sqrt(v[j]) + eps);
    }
  }
}

void Adam::zero_grad() {
  for (Parameter* p : params_) std::fill(p->grad.begin(), p->grad.end(), 0.0f);
}

}  // namespace mitodet
