// Copyright 2026 The lnseg Authors
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//     http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

#pragma once

#include <cstdint>
#include <optional>
#include <random>
#include <string>
#include <string_view>
#include <vector>

#include "lnseg/image.hpp"
#include "lnseg/tensor.hpp"

namespace lnseg::nn {

enum class NormMode { Instance, Batch };
enum class Mode { Train, Infer };

std::string_view to_string(NormMode m);
std::optional<NormMode> parse_norm_mode(std::string_view text);

inline constexpr double kNormEpsilon = 1e-5;

/// Architecture of one residual encoder-decoder. `filters` has one entry per
/// level; the last entry is the channel count at full encoding.
struct ModelSpec {
  int depth = 5;
  std::vector<int> filters{16, 32, 64, 128, 256};
  NormMode norm_mode = NormMode::Instance;
  int input_dim = 512;

  /// Filter ladder doubling from `base`: E-D5/6/7 use base 16.
  static ModelSpec standard(int depth, int input_dim, NormMode norm = NormMode::Instance);
  static ModelSpec scaled(int depth, int input_dim, int base, NormMode norm = NormMode::Instance);

  /// Throws SpecError: depth outside [2, 8], filters not doubling, or an
  /// input_dim not divisible by 2^(depth-1).
  void validate() const;
  std::string name() const;  // "E-D5"
};

/// Trainable tensor with its gradient. `shape` is informational
/// (out, in, kh, kw for convolutions; channels for norms).
template <typename Scalar>
struct Parameter {
  std::string name;
  std::vector<int> shape;
  Eigen::Array<Scalar, Eigen::Dynamic, 1> value;
  Eigen::Array<Scalar, Eigen::Dynamic, 1> grad;
};

/// Non-trainable state such as batch-norm running statistics.
template <typename Scalar>
struct Buffer {
  std::string name;
  Eigen::Array<Scalar, Eigen::Dynamic, 1> value;
};

template <typename Scalar>
class Conv2d {
 public:
  Conv2d() = default;
  Conv2d(std::string name, int in_channels, int out_channels, int kernel, int stride);

  /// TF-style "same" padding: output is ceil(H / stride).
  Tensor<Scalar> forward(const Tensor<Scalar>& x, Mode mode);
  Tensor<Scalar> forward(Tensor<Scalar>&& x, Mode mode);
  /// Accumulates weight/bias gradients; returns dL/dx unless the layer was
  /// told it sits on the network input.
  Tensor<Scalar> backward(const Tensor<Scalar>& dy);

  void set_input_grad(bool needed) { input_grad_ = needed; }
  const Tensor<Scalar>& cached_input() const { return input_; }
  void parameters(std::vector<Parameter<Scalar>*>& out) { out.push_back(&weight_); out.push_back(&bias_); }
  void clear_cache() { input_.release(); }

 private:
  Tensor<Scalar> compute(const Tensor<Scalar>& x) const;

  int cin_ = 0, cout_ = 0, k_ = 1, stride_ = 1;
  bool input_grad_ = true;
  Parameter<Scalar> weight_, bias_;
  Tensor<Scalar> input_;
};

/// Per-channel normalisation followed by a learnable affine map. Instance
/// mode standardises every (sample, channel) plane on its own; batch mode
/// pools statistics over the batch while training and uses running
/// statistics at inference.
template <typename Scalar>
class Norm {
 public:
  Norm() = default;
  Norm(std::string name, int channels, NormMode mode);

  /// Normalises x in place and returns it.
  Tensor<Scalar> forward(Tensor<Scalar> x, Mode mode);
  Tensor<Scalar> backward(const Tensor<Scalar>& dy);

  void parameters(std::vector<Parameter<Scalar>*>& out) { out.push_back(&gamma_); out.push_back(&beta_); }
  void buffers(std::vector<Buffer<Scalar>*>& out);
  void clear_cache() { xhat_.release(); inv_std_.resize(0); }

 private:
  int channels_ = 0;
  NormMode mode_ = NormMode::Instance;
  Scalar momentum_ = Scalar(0.99);
  Parameter<Scalar> gamma_, beta_;
  Buffer<Scalar> running_mean_, running_var_;
  Tensor<Scalar> xhat_;
  Eigen::Array<Scalar, Eigen::Dynamic, 1> inv_std_;
};

/// Pre-activation unit: norm -> ReLU -> 3x3 convolution.
template <typename Scalar>
class ConvBlock {
 public:
  ConvBlock() = default;
  ConvBlock(const std::string& name, int in_channels, int out_channels, int stride, NormMode mode);

  Tensor<Scalar> forward(const Tensor<Scalar>& x, Mode mode);
  Tensor<Scalar> forward(Tensor<Scalar>&& x, Mode mode);
  Tensor<Scalar> backward(const Tensor<Scalar>& dy);

  void parameters(std::vector<Parameter<Scalar>*>& out) { norm_.parameters(out); conv_.parameters(out); }
  void buffers(std::vector<Buffer<Scalar>*>& out) { norm_.buffers(out); }
  void clear_cache() { norm_.clear_cache(); conv_.clear_cache(); }

 private:
  Tensor<Scalar> activate(Tensor<Scalar> normed, Mode mode);

  Norm<Scalar> norm_;
  Conv2d<Scalar> conv_;
};

/// Two pre-activation units plus a 1x1 projection shortcut (with its own
/// norm); the first unit and the shortcut carry the stride.
template <typename Scalar>
class ResidualBlock {
 public:
  ResidualBlock() = default;
  ResidualBlock(const std::string& name, int in_channels, int out_channels, int stride, NormMode mode);

  Tensor<Scalar> forward(const Tensor<Scalar>& x, Mode mode);
  Tensor<Scalar> forward(Tensor<Scalar>&& x, Mode mode);
  Tensor<Scalar> backward(const Tensor<Scalar>& dy);

  void parameters(std::vector<Parameter<Scalar>*>& out);
  void buffers(std::vector<Buffer<Scalar>*>& out);
  void clear_cache();

 private:
  ConvBlock<Scalar> first_, second_;
  Conv2d<Scalar> shortcut_;
  Norm<Scalar> shortcut_norm_;
};

/// Input stem: 3x3 convolution then one pre-activation unit, with a 1x1
/// normalised shortcut from the raw image.
template <typename Scalar>
class Stem {
 public:
  Stem() = default;
  Stem(const std::string& name, int in_channels, int out_channels, NormMode mode);

  Tensor<Scalar> forward(const Tensor<Scalar>& x, Mode mode);
  void backward(const Tensor<Scalar>& dy);

  void parameters(std::vector<Parameter<Scalar>*>& out);
  void buffers(std::vector<Buffer<Scalar>*>& out);
  void clear_cache();

 private:
  Conv2d<Scalar> conv_;
  ConvBlock<Scalar> block_;
  Conv2d<Scalar> shortcut_;
  Norm<Scalar> shortcut_norm_;
};

struct LayerCount {
  std::string name;
  std::vector<int> shape;
  std::int64_t count = 0;
};

/// Residual encoder-decoder (E-D5/6/7 family).
///
/// stem(f0) -> residual blocks f1..f(d-1), each halving resolution ->
/// bridge of two pre-activation units at f(d-1) -> for each level back up:
/// nearest 2x upsample, concatenate the encoder skip, residual block with
/// the encoder's filter count -> 1x1 convolution to one logit per pixel.
template <typename Scalar>
class EncoderDecoder {
 public:
  explicit EncoderDecoder(const ModelSpec& spec, std::uint64_t seed = 0);

  EncoderDecoder(const EncoderDecoder&) = delete;
  EncoderDecoder& operator=(const EncoderDecoder&) = delete;
  EncoderDecoder(EncoderDecoder&&) = default;
  EncoderDecoder& operator=(EncoderDecoder&&) = default;

  const ModelSpec& spec() const { return spec_; }
  std::uint64_t seed() const { return seed_; }

  /// Pre-sigmoid logits, same N x 1 x H x W as the input. Train mode caches
  /// activations for backward(). Throws ShapeError on a wrong input shape.
  Tensor<Scalar> forward(const Tensor<Scalar>& x, Mode mode);
  /// Gradient of the loss w.r.t. the logits of the last Train forward.
  void backward(const Tensor<Scalar>& dlogits);

  /// Sigmoid probabilities in inference mode.
  Tensor<Scalar> predict(const Tensor<Scalar>& x);
  Image<Scalar> predict(const Image<Scalar>& image);

  std::vector<Parameter<Scalar>*> parameters();
  std::vector<Buffer<Scalar>*> buffers();
  void zero_grad();
  void clear_cache();

  std::int64_t parameter_count();
  std::vector<LayerCount> layer_counts();
  /// FNV-1a over the raw parameter bytes; equal weights give equal sums.
  std::uint64_t checksum();

 private:
  void initialise(std::uint64_t seed);

  ModelSpec spec_;
  std::uint64_t seed_ = 0;
  Stem<Scalar> stem_;
  std::vector<ResidualBlock<Scalar>> encoder_;
  ConvBlock<Scalar> bridge_a_, bridge_b_;
  std::vector<ResidualBlock<Scalar>> decoder_;
  Conv2d<Scalar> head_;
  std::vector<int> skip_channels_;
  std::vector<int> up_channels_;
};

/// Standardises every (sample, channel) plane to zero mean and unit
/// variance: (x - mean) / sqrt(var + epsilon), population variance. This is
/// the pre-affine part of instance normalisation.
template <typename Scalar>
Tensor<Scalar> instance_normalize(const Tensor<Scalar>& x, double epsilon = kNormEpsilon);

/// Parameter count from the spec alone, without allocating weights.
std::int64_t count_parameters(const ModelSpec& spec);

/// Builds a 1 x 1 x H x W tensor from an image.
template <typename Scalar>
Tensor<Scalar> to_tensor(const Image<Scalar>& image);

template <typename Scalar>
Image<Scalar> to_image(const Tensor<Scalar>& t, int n = 0);

template <typename Scalar>
void sigmoid_inplace(Tensor<Scalar>& t);

}  // namespace lnseg::nn
