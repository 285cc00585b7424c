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

#include "lnseg/ednet.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>

#include "lnseg/rng.hpp"

namespace lnseg::nn {

namespace {

// Upper bound on im2col buffer elements; keeps full-resolution convolutions
// out of multi-gigabyte temporaries.
constexpr Eigen::Index kColumnBudget = Eigen::Index(1) << 21;

template <typename Scalar>
void ensure_grad(Parameter<Scalar>& p) {
  if (p.grad.size() != p.value.size()) p.grad = Eigen::Array<Scalar, Eigen::Dynamic, 1>::Zero(p.value.size());
}

int same_out(int in, int stride) { return (in + stride - 1) / stride; }

int same_pad_begin(int in, int k, int stride) {
  const int out = same_out(in, stride);
  const int total = std::max((out - 1) * stride + k - in, 0);
  return total / 2;
}

template <typename Scalar>
void relu_inplace(Tensor<Scalar>& t) {
  t.storage() = t.storage().max(Scalar(0));
}

// Nearest 2x upsample of `low` into channels [0, c_low) of a fresh tensor,
// followed by `skip` in the remaining channels.
template <typename Scalar>
Tensor<Scalar> upsample_concat(const Tensor<Scalar>& low, const Tensor<Scalar>& skip) {
  const int n = low.batch(), cl = low.channels(), cs = skip.channels();
  const int h = skip.height(), w = skip.width();
  if (skip.batch() != n || low.height() * 2 != h || low.width() * 2 != w) {
    throw Error(Errc::ShapeError, "upsample_concat: incompatible shapes");
  }
  Tensor<Scalar> out(n, cl + cs, h, w);
  for (int b = 0; b < n; ++b) {
    for (int c = 0; c < cl; ++c) {
      const Scalar* src = low.channel(b, c);
      Scalar* dst = out.channel(b, c);
      for (int y = 0; y < h; ++y) {
        const Scalar* srow = src + Eigen::Index(y / 2) * low.width();
        Scalar* drow = dst + Eigen::Index(y) * w;
        for (int x = 0; x < w; ++x) drow[x] = srow[x / 2];
      }
    }
    std::memcpy(out.channel(b, cl), skip.sample(b), sizeof(Scalar) * Eigen::Index(cs) * skip.plane());
  }
  return out;
}

template <typename Scalar>
void split_upsample_grad(const Tensor<Scalar>& dcat, int c_low, Tensor<Scalar>& dlow, Tensor<Scalar>& dskip) {
  const int n = dcat.batch(), h = dcat.height(), w = dcat.width();
  const int cs = dcat.channels() - c_low;
  dlow = Tensor<Scalar>::zeros(n, c_low, h / 2, w / 2);
  dskip = Tensor<Scalar>(n, cs, h, w);
  for (int b = 0; b < n; ++b) {
    for (int c = 0; c < c_low; ++c) {
      const Scalar* src = dcat.channel(b, c);
      Scalar* dst = dlow.channel(b, c);
      for (int y = 0; y < h; ++y) {
        const Scalar* srow = src + Eigen::Index(y) * w;
        Scalar* drow = dst + Eigen::Index(y / 2) * (w / 2);
        for (int x = 0; x < w; ++x) drow[x / 2] += srow[x];
      }
    }
    std::memcpy(dskip.sample(b), dcat.channel(b, c_low), sizeof(Scalar) * Eigen::Index(cs) * dcat.plane());
  }
}

}  // namespace

std::string_view to_string(NormMode m) { return m == NormMode::Instance ? "instance" : "batch"; }

std::optional<NormMode> parse_norm_mode(std::string_view text) {
  if (text == "instance") return NormMode::Instance;
  if (text == "batch") return NormMode::Batch;
  return std::nullopt;
}

// ---------------------------------------------------------------- ModelSpec

ModelSpec ModelSpec::standard(int depth, int input_dim, NormMode norm) {
  return scaled(depth, input_dim, 16, norm);
}

ModelSpec ModelSpec::scaled(int depth, int input_dim, int base, NormMode norm) {
  ModelSpec s;
  s.depth = depth;
  s.input_dim = input_dim;
  s.norm_mode = norm;
  s.filters.clear();
  for (int i = 0; i < depth; ++i) s.filters.push_back(base << i);
  return s;
}

void ModelSpec::validate() const {
  if (depth < 2 || depth > 8) throw Error(Errc::SpecError, "depth must lie in [2, 8]");
  if (static_cast<int>(filters.size()) != depth) {
    throw Error(Errc::SpecError, "filters must have one entry per level");
  }
  if (filters[0] < 1) throw Error(Errc::SpecError, "filters must be positive");
  for (int i = 1; i < depth; ++i) {
    if (filters[i] != 2 * filters[i - 1]) throw Error(Errc::SpecError, "filters must double per level");
  }
  const int factor = 1 << (depth - 1);
  if (input_dim <= 0 || input_dim % factor != 0) {
    throw Error(Errc::SpecError, "input_dim " + std::to_string(input_dim) + " is not divisible by " +
                                     std::to_string(factor));
  }
}

std::string ModelSpec::name() const { return "E-D" + std::to_string(depth); }

std::int64_t count_parameters(const ModelSpec& spec) {
  spec.validate();
  auto conv = [](std::int64_t cin, std::int64_t cout, std::int64_t k) { return k * k * cin * cout + cout; };
  auto norm = [](std::int64_t c) { return 2 * c; };
  auto unit = [&](std::int64_t cin, std::int64_t cout) { return norm(cin) + conv(cin, cout, 3); };
  auto block = [&](std::int64_t cin, std::int64_t cout) {
    return unit(cin, cout) + unit(cout, cout) + conv(cin, cout, 1) + norm(cout);
  };
  const auto& f = spec.filters;
  std::int64_t total = conv(1, f[0], 3) + unit(f[0], f[0]) + conv(1, f[0], 1) + norm(f[0]);
  for (int i = 1; i < spec.depth; ++i) total += block(f[i - 1], f[i]);
  total += 2 * unit(f.back(), f.back());
  std::int64_t c = f.back();
  for (int level = spec.depth - 2; level >= 0; --level) {
    const std::int64_t out = f[level + 1];
    total += block(c + f[level], out);
    c = out;
  }
  return total + conv(c, 1, 1);
}

// ------------------------------------------------------------------- Conv2d

template <typename Scalar>
Conv2d<Scalar>::Conv2d(std::string name, int in_channels, int out_channels, int kernel, int stride)
    : cin_(in_channels), cout_(out_channels), k_(kernel), stride_(stride) {
  weight_.name = name + ".weight";
  weight_.shape = {out_channels, in_channels, kernel, kernel};
  weight_.value = Eigen::Array<Scalar, Eigen::Dynamic, 1>::Zero(Eigen::Index(out_channels) * in_channels * kernel * kernel);
  bias_.name = name + ".bias";
  bias_.shape = {out_channels};
  bias_.value = Eigen::Array<Scalar, Eigen::Dynamic, 1>::Zero(out_channels);
}

template <typename Scalar>
Tensor<Scalar> Conv2d<Scalar>::forward(const Tensor<Scalar>& x, Mode mode) {
  Tensor<Scalar> y = compute(x);
  if (mode == Mode::Train) input_ = x;
  return y;
}

template <typename Scalar>
Tensor<Scalar> Conv2d<Scalar>::forward(Tensor<Scalar>&& x, Mode mode) {
  Tensor<Scalar> y = compute(x);
  if (mode == Mode::Train) {
    input_ = std::move(x);
  } else {
    x.release();
  }
  return y;
}

namespace {

template <typename Scalar>
void im2col(const Scalar* src, int cin, int h, int w, int k, int stride, int pad_top, int pad_left,
            int wo, int oy0, int oy1, Scalar* col) {
  const Eigen::Index cols = Eigen::Index(oy1 - oy0) * wo;
  for (int ci = 0; ci < cin; ++ci) {
    const Scalar* plane = src + Eigen::Index(ci) * h * w;
    for (int ky = 0; ky < k; ++ky) {
      for (int kx = 0; kx < k; ++kx) {
        Scalar* dst = col + (Eigen::Index(ci * k + ky) * k + kx) * cols;
        for (int oy = oy0; oy < oy1; ++oy) {
          const int iy = oy * stride + ky - pad_top;
          Scalar* drow = dst + Eigen::Index(oy - oy0) * wo;
          if (iy < 0 || iy >= h) {
            std::fill(drow, drow + wo, Scalar(0));
            continue;
          }
          const Scalar* srow = plane + Eigen::Index(iy) * w;
          if (stride == 1) {
            const int off = kx - pad_left;
            const int lo = std::max(0, -off);
            const int hi = std::min(wo, w - off);
            std::fill(drow, drow + lo, Scalar(0));
            if (hi > lo) std::memcpy(drow + lo, srow + lo + off, sizeof(Scalar) * (hi - lo));
            std::fill(drow + std::max(hi, lo), drow + wo, Scalar(0));
          } else {
            for (int ox = 0; ox < wo; ++ox) {
              const int ix = ox * stride + kx - pad_left;
              drow[ox] = (ix >= 0 && ix < w) ? srow[ix] : Scalar(0);
            }
          }
        }
      }
    }
  }
}

template <typename Scalar>
void col2im(const Scalar* col, int cin, int h, int w, int k, int stride, int pad_top, int pad_left,
            int wo, int oy0, int oy1, Scalar* dst) {
  const Eigen::Index cols = Eigen::Index(oy1 - oy0) * wo;
  for (int ci = 0; ci < cin; ++ci) {
    Scalar* plane = dst + Eigen::Index(ci) * h * w;
    for (int ky = 0; ky < k; ++ky) {
      for (int kx = 0; kx < k; ++kx) {
        const Scalar* src = col + (Eigen::Index(ci * k + ky) * k + kx) * cols;
        for (int oy = oy0; oy < oy1; ++oy) {
          const int iy = oy * stride + ky - pad_top;
          if (iy < 0 || iy >= h) continue;
          const Scalar* srow = src + Eigen::Index(oy - oy0) * wo;
          Scalar* drow = plane + Eigen::Index(iy) * w;
          for (int ox = 0; ox < wo; ++ox) {
            const int ix = ox * stride + kx - pad_left;
            if (ix >= 0 && ix < w) drow[ix] += srow[ox];
          }
        }
      }
    }
  }
}

}  // namespace

template <typename Scalar>
Tensor<Scalar> Conv2d<Scalar>::compute(const Tensor<Scalar>& x) const {
  using Mat = typename Tensor<Scalar>::Matrix;
  if (x.channels() != cin_) {
    throw Error(Errc::ShapeError, weight_.name + ": expected " + std::to_string(cin_) + " channels, got " +
                                      std::to_string(x.channels()));
  }
  const int h = x.height(), w = x.width();
  const int ho = same_out(h, stride_), wo = same_out(w, stride_);
  Tensor<Scalar> y(x.batch(), cout_, ho, wo);
  const Eigen::Map<const Mat> wmat(weight_.value.data(), cout_, Eigen::Index(cin_) * k_ * k_);
  const auto bias = bias_.value.matrix();

  if (k_ == 1 && stride_ == 1) {
    for (int n = 0; n < x.batch(); ++n) {
      auto out = y.matrix(n);
      out.noalias() = wmat * x.matrix(n);
      out.colwise() += bias;
    }
    return y;
  }
  const int pt = same_pad_begin(h, k_, stride_), pl = same_pad_begin(w, k_, stride_);
  const Eigen::Index rows = Eigen::Index(cin_) * k_ * k_;
  const int chunk = static_cast<int>(std::clamp<Eigen::Index>(kColumnBudget / (rows * wo), 1, ho));
  Mat col(rows, Eigen::Index(chunk) * wo);
  for (int n = 0; n < x.batch(); ++n) {
    auto out = y.matrix(n);
    for (int oy0 = 0; oy0 < ho; oy0 += chunk) {
      const int oy1 = std::min(ho, oy0 + chunk);
      const Eigen::Index cnt = Eigen::Index(oy1 - oy0) * wo;
      im2col(x.sample(n), cin_, h, w, k_, stride_, pt, pl, wo, oy0, oy1, col.data());
      Eigen::Map<const Mat> colv(col.data(), rows, cnt);
      out.middleCols(Eigen::Index(oy0) * wo, cnt).noalias() = wmat * colv;
    }
    out.colwise() += bias;
  }
  return y;
}

template <typename Scalar>
Tensor<Scalar> Conv2d<Scalar>::backward(const Tensor<Scalar>& dy) {
  using Mat = typename Tensor<Scalar>::Matrix;
  const Tensor<Scalar>& x = input_;
  if (x.empty()) throw Error(Errc::ShapeError, weight_.name + ": backward without a Train forward");
  ensure_grad(weight_);
  ensure_grad(bias_);
  const int h = x.height(), w = x.width();
  const int ho = dy.height(), wo = dy.width();
  const Eigen::Index rows = Eigen::Index(cin_) * k_ * k_;
  Eigen::Map<const Mat> wmat(weight_.value.data(), cout_, rows);
  Eigen::Map<Mat> dw(weight_.grad.data(), cout_, rows);

  Tensor<Scalar> dx;
  if (input_grad_) dx = Tensor<Scalar>::zeros(x.batch(), cin_, h, w);

  for (int n = 0; n < dy.batch(); ++n) bias_.grad.matrix() += dy.matrix(n).rowwise().sum();

  if (k_ == 1 && stride_ == 1) {
    for (int n = 0; n < dy.batch(); ++n) {
      dw.noalias() += dy.matrix(n) * x.matrix(n).transpose();
      if (input_grad_) dx.matrix(n).noalias() = wmat.transpose() * dy.matrix(n);
    }
    return dx;
  }
  const int pt = same_pad_begin(h, k_, stride_), pl = same_pad_begin(w, k_, stride_);
  const int chunk = static_cast<int>(std::clamp<Eigen::Index>(kColumnBudget / (rows * wo), 1, ho));
  Mat col(rows, Eigen::Index(chunk) * wo);
  Mat dcol;
  if (input_grad_) dcol.resize(rows, Eigen::Index(chunk) * wo);
  for (int n = 0; n < dy.batch(); ++n) {
    const auto g = dy.matrix(n);
    for (int oy0 = 0; oy0 < ho; oy0 += chunk) {
      const int oy1 = std::min(ho, oy0 + chunk);
      const Eigen::Index cnt = Eigen::Index(oy1 - oy0) * wo;
      im2col(x.sample(n), cin_, h, w, k_, stride_, pt, pl, wo, oy0, oy1, col.data());
      Eigen::Map<const Mat> colv(col.data(), rows, cnt);
      const auto gchunk = g.middleCols(Eigen::Index(oy0) * wo, cnt);
      dw.noalias() += gchunk * colv.transpose();
      if (input_grad_) {
        Eigen::Map<Mat> dcolv(dcol.data(), rows, cnt);
        dcolv.noalias() = wmat.transpose() * gchunk;
        col2im(dcol.data(), cin_, h, w, k_, stride_, pt, pl, wo, oy0, oy1, dx.sample(n));
      }
    }
  }
  return dx;
}

// --------------------------------------------------------------------- Norm

template <typename Scalar>
Norm<Scalar>::Norm(std::string name, int channels, NormMode mode) : channels_(channels), mode_(mode) {
  gamma_.name = name + ".gamma";
  gamma_.shape = {channels};
  gamma_.value = Eigen::Array<Scalar, Eigen::Dynamic, 1>::Ones(channels);
  beta_.name = name + ".beta";
  beta_.shape = {channels};
  beta_.value = Eigen::Array<Scalar, Eigen::Dynamic, 1>::Zero(channels);
  if (mode_ == NormMode::Batch) {
    running_mean_ = {name + ".running_mean", Eigen::Array<Scalar, Eigen::Dynamic, 1>::Zero(channels)};
    running_var_ = {name + ".running_var", Eigen::Array<Scalar, Eigen::Dynamic, 1>::Ones(channels)};
  }
}

template <typename Scalar>
void Norm<Scalar>::buffers(std::vector<Buffer<Scalar>*>& out) {
  if (mode_ == NormMode::Batch) {
    out.push_back(&running_mean_);
    out.push_back(&running_var_);
  }
}

template <typename Scalar>
Tensor<Scalar> Norm<Scalar>::forward(Tensor<Scalar> x, Mode mode) {
  if (x.channels() != channels_) throw Error(Errc::ShapeError, gamma_.name + ": channel mismatch");
  const int n = x.batch();
  const Eigen::Index plane = x.plane();

  if (mode_ == NormMode::Instance) {
    inv_std_.resize(Eigen::Index(n) * channels_);
    for (int b = 0; b < n; ++b) {
      for (int c = 0; c < channels_; ++c) {
        Eigen::Map<Eigen::Array<Scalar, Eigen::Dynamic, 1>> v(x.channel(b, c), plane);
        const double mean = v.template cast<double>().mean();
        const double var = (v.template cast<double>() - mean).square().mean();
        const Scalar inv = static_cast<Scalar>(1.0 / std::sqrt(var + kNormEpsilon));
        v = (v - static_cast<Scalar>(mean)) * inv;
        inv_std_[Eigen::Index(b) * channels_ + c] = inv;
      }
    }
  } else {
    const bool batch_stats = mode == Mode::Train;
    inv_std_.resize(channels_);
    for (int c = 0; c < channels_; ++c) {
      double mean, var;
      if (batch_stats) {
        double s = 0.0;
        for (int b = 0; b < n; ++b) {
          s += Eigen::Map<const Eigen::Array<Scalar, Eigen::Dynamic, 1>>(x.channel(b, c), plane)
                   .template cast<double>()
                   .sum();
        }
        mean = s / (double(n) * plane);
        double q = 0.0;
        for (int b = 0; b < n; ++b) {
          q += (Eigen::Map<const Eigen::Array<Scalar, Eigen::Dynamic, 1>>(x.channel(b, c), plane)
                    .template cast<double>() -
                mean)
                   .square()
                   .sum();
        }
        var = q / (double(n) * plane);
        running_mean_.value[c] = momentum_ * running_mean_.value[c] + (1 - momentum_) * Scalar(mean);
        running_var_.value[c] = momentum_ * running_var_.value[c] + (1 - momentum_) * Scalar(var);
      } else {
        mean = running_mean_.value[c];
        var = running_var_.value[c];
      }
      const Scalar inv = static_cast<Scalar>(1.0 / std::sqrt(var + kNormEpsilon));
      inv_std_[c] = inv;
      for (int b = 0; b < n; ++b) {
        Eigen::Map<Eigen::Array<Scalar, Eigen::Dynamic, 1>> v(x.channel(b, c), plane);
        v = (v - static_cast<Scalar>(mean)) * inv;
      }
    }
  }
  if (mode == Mode::Train) xhat_ = x;
  for (int b = 0; b < n; ++b) {
    for (int c = 0; c < channels_; ++c) {
      Eigen::Map<Eigen::Array<Scalar, Eigen::Dynamic, 1>> v(x.channel(b, c), plane);
      v = v * gamma_.value[c] + beta_.value[c];
    }
  }
  return x;
}

template <typename Scalar>
Tensor<Scalar> Norm<Scalar>::backward(const Tensor<Scalar>& dy) {
  if (xhat_.empty() || !xhat_.same_shape(dy)) throw Error(Errc::ShapeError, gamma_.name + ": backward mismatch");
  ensure_grad(gamma_);
  ensure_grad(beta_);
  using Arr = Eigen::Array<Scalar, Eigen::Dynamic, 1>;
  const int n = dy.batch();
  const Eigen::Index plane = dy.plane();
  Tensor<Scalar> dx(n, channels_, dy.height(), dy.width());

  for (int c = 0; c < channels_; ++c) {
    for (int b = 0; b < n; ++b) {
      Eigen::Map<const Arr> g(dy.channel(b, c), plane);
      Eigen::Map<const Arr> xh(xhat_.channel(b, c), plane);
      gamma_.grad[c] += (g * xh).sum();
      beta_.grad[c] += g.sum();
    }
  }
  const Scalar* gamma = gamma_.value.data();
  if (mode_ == NormMode::Instance) {
    const Scalar m = static_cast<Scalar>(plane);
    for (int b = 0; b < n; ++b) {
      for (int c = 0; c < channels_; ++c) {
        Eigen::Map<const Arr> g(dy.channel(b, c), plane);
        Eigen::Map<const Arr> xh(xhat_.channel(b, c), plane);
        Eigen::Map<Arr> out(dx.channel(b, c), plane);
        const Scalar sum_g = g.sum() * gamma[c];
        const Scalar sum_gx = (g * xh).sum() * gamma[c];
        const Scalar inv = inv_std_[Eigen::Index(b) * channels_ + c];
        out = (inv / m) * (m * gamma[c] * g - sum_g - xh * sum_gx);
      }
    }
  } else {
    const Scalar m = static_cast<Scalar>(double(n) * plane);
    for (int c = 0; c < channels_; ++c) {
      Scalar sum_g = 0, sum_gx = 0;
      for (int b = 0; b < n; ++b) {
        Eigen::Map<const Arr> g(dy.channel(b, c), plane);
        Eigen::Map<const Arr> xh(xhat_.channel(b, c), plane);
        sum_g += g.sum();
        sum_gx += (g * xh).sum();
      }
      sum_g *= gamma[c];
      sum_gx *= gamma[c];
      const Scalar inv = inv_std_[c];
      for (int b = 0; b < n; ++b) {
        Eigen::Map<const Arr> g(dy.channel(b, c), plane);
        Eigen::Map<const Arr> xh(xhat_.channel(b, c), plane);
        Eigen::Map<Arr> out(dx.channel(b, c), plane);
        out = (inv / m) * (m * gamma[c] * g - sum_g - xh * sum_gx);
      }
    }
  }
  return dx;
}

// ---------------------------------------------------------------- ConvBlock

template <typename Scalar>
ConvBlock<Scalar>::ConvBlock(const std::string& name, int in_channels, int out_channels, int stride,
                             NormMode mode)
    : norm_(name + ".norm", in_channels, mode), conv_(name + ".conv", in_channels, out_channels, 3, stride) {}

template <typename Scalar>
Tensor<Scalar> ConvBlock<Scalar>::activate(Tensor<Scalar> normed, Mode mode) {
  relu_inplace(normed);
  return conv_.forward(std::move(normed), mode);
}

template <typename Scalar>
Tensor<Scalar> ConvBlock<Scalar>::forward(const Tensor<Scalar>& x, Mode mode) {
  return activate(norm_.forward(x, mode), mode);
}

template <typename Scalar>
Tensor<Scalar> ConvBlock<Scalar>::forward(Tensor<Scalar>&& x, Mode mode) {
  return activate(norm_.forward(std::move(x), mode), mode);
}

template <typename Scalar>
Tensor<Scalar> ConvBlock<Scalar>::backward(const Tensor<Scalar>& dy) {
  Tensor<Scalar> d = conv_.backward(dy);
  // The conv input is the ReLU output, so its sign is the ReLU mask.
  d.storage() = (conv_.cached_input().storage() > Scalar(0)).select(d.storage(), Scalar(0));
  return norm_.backward(d);
}

// ------------------------------------------------------------ ResidualBlock

template <typename Scalar>
ResidualBlock<Scalar>::ResidualBlock(const std::string& name, int in_channels, int out_channels, int stride,
                                     NormMode mode)
    : first_(name + ".unit1", in_channels, out_channels, stride, mode),
      second_(name + ".unit2", out_channels, out_channels, 1, mode),
      shortcut_(name + ".shortcut.conv", in_channels, out_channels, 1, stride),
      shortcut_norm_(name + ".shortcut.norm", out_channels, mode) {}

template <typename Scalar>
Tensor<Scalar> ResidualBlock<Scalar>::forward(const Tensor<Scalar>& x, Mode mode) {
  Tensor<Scalar> h = second_.forward(first_.forward(x, mode), mode);
  h += shortcut_norm_.forward(shortcut_.forward(x, mode), mode);
  return h;
}

template <typename Scalar>
Tensor<Scalar> ResidualBlock<Scalar>::forward(Tensor<Scalar>&& x, Mode mode) {
  Tensor<Scalar> h = second_.forward(first_.forward(x, mode), mode);
  h += shortcut_norm_.forward(shortcut_.forward(std::move(x), mode), mode);
  return h;
}

template <typename Scalar>
Tensor<Scalar> ResidualBlock<Scalar>::backward(const Tensor<Scalar>& dy) {
  Tensor<Scalar> dx = first_.backward(second_.backward(dy));
  dx += shortcut_.backward(shortcut_norm_.backward(dy));
  return dx;
}

template <typename Scalar>
void ResidualBlock<Scalar>::parameters(std::vector<Parameter<Scalar>*>& out) {
  first_.parameters(out);
  second_.parameters(out);
  shortcut_.parameters(out);
  shortcut_norm_.parameters(out);
}

template <typename Scalar>
void ResidualBlock<Scalar>::buffers(std::vector<Buffer<Scalar>*>& out) {
  first_.buffers(out);
  second_.buffers(out);
  shortcut_norm_.buffers(out);
}

template <typename Scalar>
void ResidualBlock<Scalar>::clear_cache() {
  first_.clear_cache();
  second_.clear_cache();
  shortcut_.clear_cache();
  shortcut_norm_.clear_cache();
}

// --------------------------------------------------------------------- Stem

template <typename Scalar>
Stem<Scalar>::Stem(const std::string& name, int in_channels, int out_channels, NormMode mode)
    : conv_(name + ".conv", in_channels, out_channels, 3, 1),
      block_(name + ".unit", out_channels, out_channels, 1, mode),
      shortcut_(name + ".shortcut.conv", in_channels, out_channels, 1, 1),
      shortcut_norm_(name + ".shortcut.norm", out_channels, mode) {
  conv_.set_input_grad(false);
  shortcut_.set_input_grad(false);
}

template <typename Scalar>
Tensor<Scalar> Stem<Scalar>::forward(const Tensor<Scalar>& x, Mode mode) {
  Tensor<Scalar> h = block_.forward(conv_.forward(x, mode), mode);
  h += shortcut_norm_.forward(shortcut_.forward(x, mode), mode);
  return h;
}

template <typename Scalar>
void Stem<Scalar>::backward(const Tensor<Scalar>& dy) {
  conv_.backward(block_.backward(dy));
  shortcut_.backward(shortcut_norm_.backward(dy));
}

template <typename Scalar>
void Stem<Scalar>::parameters(std::vector<Parameter<Scalar>*>& out) {
  conv_.parameters(out);
  block_.parameters(out);
  shortcut_.parameters(out);
  shortcut_norm_.parameters(out);
}

template <typename Scalar>
void Stem<Scalar>::buffers(std::vector<Buffer<Scalar>*>& out) {
  block_.buffers(out);
  shortcut_norm_.buffers(out);
}

template <typename Scalar>
void Stem<Scalar>::clear_cache() {
  conv_.clear_cache();
  block_.clear_cache();
  shortcut_.clear_cache();
  shortcut_norm_.clear_cache();
}

// ----------------------------------------------------------- EncoderDecoder

template <typename Scalar>
EncoderDecoder<Scalar>::EncoderDecoder(const ModelSpec& spec, std::uint64_t seed) : spec_(spec), seed_(seed) {
  spec_.validate();
  const auto& f = spec_.filters;
  const NormMode nm = spec_.norm_mode;
  stem_ = Stem<Scalar>("stem", 1, f[0], nm);
  for (int i = 1; i < spec_.depth; ++i) {
    encoder_.emplace_back("enc" + std::to_string(i), f[i - 1], f[i], 2, nm);
  }
  bridge_a_ = ConvBlock<Scalar>("bridge.unit1", f.back(), f.back(), 1, nm);
  bridge_b_ = ConvBlock<Scalar>("bridge.unit2", f.back(), f.back(), 1, nm);
  int c = f.back();
  for (int level = spec_.depth - 2, j = 1; level >= 0; --level, ++j) {
    // Decoder blocks take the filter count of the level below the skip, so
    // the outermost block ends at f1 and there is no f0 decoder.
    const int out = f[level + 1];
    decoder_.emplace_back("dec" + std::to_string(j), c + f[level], out, 1, nm);
    up_channels_.push_back(c);
    skip_channels_.push_back(f[level]);
    c = out;
  }
  head_ = Conv2d<Scalar>("head", c, 1, 1, 1);
  initialise(seed);
}

template <typename Scalar>
void EncoderDecoder<Scalar>::initialise(std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  for (auto* p : parameters()) {
    if (p->shape.size() != 4) continue;  // norms start at identity, biases at zero
    if (p->name.size() >= 5 && p->name.compare(p->name.size() - 5, 5, ".bias") == 0) continue;
    const double fan_in = double(p->shape[1]) * p->shape[2] * p->shape[3];
    const double limit = std::sqrt(6.0 / fan_in);
    for (Eigen::Index i = 0; i < p->value.size(); ++i) {
      p->value[i] = static_cast<Scalar>((2.0 * unit_uniform(rng) - 1.0) * limit);
    }
  }
}

template <typename Scalar>
Tensor<Scalar> EncoderDecoder<Scalar>::forward(const Tensor<Scalar>& x, Mode mode) {
  if (x.channels() != 1 || x.height() != spec_.input_dim || x.width() != spec_.input_dim) {
    throw Error(Errc::ShapeError, spec_.name() + " expects N x 1 x " + std::to_string(spec_.input_dim) + " x " +
                                      std::to_string(spec_.input_dim) + " input, got N x " +
                                      std::to_string(x.channels()) + " x " + std::to_string(x.height()) + " x " +
                                      std::to_string(x.width()));
  }
  std::vector<Tensor<Scalar>> skips;
  skips.push_back(stem_.forward(x, mode));
  for (std::size_t i = 0; i < encoder_.size(); ++i) {
    skips.push_back(encoder_[i].forward(skips.back(), mode));
  }
  Tensor<Scalar> h = std::move(skips.back());
  skips.pop_back();
  h = bridge_b_.forward(bridge_a_.forward(std::move(h), mode), mode);
  for (auto& block : decoder_) {
    Tensor<Scalar> cat = upsample_concat(h, skips.back());
    h.release();
    skips.pop_back();
    h = block.forward(std::move(cat), mode);
  }
  return head_.forward(std::move(h), mode);
}

template <typename Scalar>
void EncoderDecoder<Scalar>::backward(const Tensor<Scalar>& dlogits) {
  Tensor<Scalar> d = head_.backward(dlogits);
  std::vector<Tensor<Scalar>> dskips(decoder_.size());
  for (std::size_t j = decoder_.size(); j-- > 0;) {
    Tensor<Scalar> dcat = decoder_[j].backward(d);
    Tensor<Scalar> dlow;
    split_upsample_grad(dcat, up_channels_[j], dlow, dskips[j]);
    d = std::move(dlow);
  }
  // dskips[j] belongs to encoder output level depth-2-j.
  d = bridge_a_.backward(bridge_b_.backward(d));
  const int levels = static_cast<int>(encoder_.size());
  for (int i = levels; i >= 1; --i) {
    if (i < levels) d += dskips[levels - 1 - i];
    d = encoder_[i - 1].backward(d);
  }
  d += dskips[levels - 1];
  stem_.backward(d);
}

template <typename Scalar>
void sigmoid_inplace(Tensor<Scalar>& t) {
  t.storage() = Scalar(1) / (Scalar(1) + (-t.storage()).exp());
}

template <typename Scalar>
Tensor<Scalar> EncoderDecoder<Scalar>::predict(const Tensor<Scalar>& x) {
  Tensor<Scalar> y = forward(x, Mode::Infer);
  sigmoid_inplace(y);
  return y;
}

template <typename Scalar>
Image<Scalar> EncoderDecoder<Scalar>::predict(const Image<Scalar>& image) {
  return to_image(predict(to_tensor(image)));
}

template <typename Scalar>
std::vector<Parameter<Scalar>*> EncoderDecoder<Scalar>::parameters() {
  std::vector<Parameter<Scalar>*> out;
  stem_.parameters(out);
  for (auto& b : encoder_) b.parameters(out);
  bridge_a_.parameters(out);
  bridge_b_.parameters(out);
  for (auto& b : decoder_) b.parameters(out);
  head_.parameters(out);
  return out;
}

template <typename Scalar>
std::vector<Buffer<Scalar>*> EncoderDecoder<Scalar>::buffers() {
  std::vector<Buffer<Scalar>*> out;
  stem_.buffers(out);
  for (auto& b : encoder_) b.buffers(out);
  bridge_a_.buffers(out);
  bridge_b_.buffers(out);
  for (auto& b : decoder_) b.buffers(out);
  return out;
}

template <typename Scalar>
void EncoderDecoder<Scalar>::zero_grad() {
  for (auto* p : parameters()) p->grad = Eigen::Array<Scalar, Eigen::Dynamic, 1>::Zero(p->value.size());
}

template <typename Scalar>
void EncoderDecoder<Scalar>::clear_cache() {
  stem_.clear_cache();
  for (auto& b : encoder_) b.clear_cache();
  bridge_a_.clear_cache();
  bridge_b_.clear_cache();
  for (auto& b : decoder_) b.clear_cache();
  head_.clear_cache();
}

template <typename Scalar>
std::int64_t EncoderDecoder<Scalar>::parameter_count() {
  std::int64_t total = 0;
  for (auto* p : parameters()) total += p->value.size();
  return total;
}

template <typename Scalar>
std::vector<LayerCount> EncoderDecoder<Scalar>::layer_counts() {
  std::vector<LayerCount> out;
  for (auto* p : parameters()) out.push_back({p->name, p->shape, static_cast<std::int64_t>(p->value.size())});
  return out;
}

template <typename Scalar>
std::uint64_t EncoderDecoder<Scalar>::checksum() {
  std::uint64_t h = 1469598103934665603ull;
  for (auto* p : parameters()) {
    const auto* bytes = reinterpret_cast<const unsigned char*>(p->value.data());
    for (std::size_t i = 0; i < sizeof(Scalar) * static_cast<std::size_t>(p->value.size()); ++i) {
      h ^= bytes[i];
      h *= 1099511628211ull;
    }
  }
  return h;
}

// ----------------------------------------------------------------- helpers

template <typename Scalar>
Tensor<Scalar> instance_normalize(const Tensor<Scalar>& x, double epsilon) {
  Tensor<Scalar> out = x;
  for (int b = 0; b < x.batch(); ++b) {
    for (int c = 0; c < x.channels(); ++c) {
      Eigen::Map<Eigen::Array<Scalar, Eigen::Dynamic, 1>> v(out.channel(b, c), x.plane());
      const double mean = v.template cast<double>().mean();
      const double var = (v.template cast<double>() - mean).square().mean();
      v = ((v.template cast<double>() - mean) / std::sqrt(var + epsilon)).template cast<Scalar>();
    }
  }
  return out;
}

template <typename Scalar>
Tensor<Scalar> to_tensor(const Image<Scalar>& image) {
  Tensor<Scalar> t(1, 1, static_cast<int>(image.rows()), static_cast<int>(image.cols()));
  std::memcpy(t.data(), image.data(), sizeof(Scalar) * image.size());
  return t;
}

template <typename Scalar>
Image<Scalar> to_image(const Tensor<Scalar>& t, int n) {
  Image<Scalar> img(t.height(), t.width());
  std::memcpy(img.data(), t.channel(n, 0), sizeof(Scalar) * img.size());
  return img;
}

#define LNSEG_INSTANTIATE(S)                                                         \
  template class Conv2d<S>;                                                          \
  template class Norm<S>;                                                            \
  template class ConvBlock<S>;                                                       \
  template class ResidualBlock<S>;                                                   \
  template class Stem<S>;                                                            \
  template class EncoderDecoder<S>;                                                  \
  template Tensor<S> instance_normalize<S>(const Tensor<S>&, double);                \
  template Tensor<S> to_tensor<S>(const Image<S>&);                                  \
  template Image<S> to_image<S>(const Tensor<S>&, int);                              \
  template void sigmoid_inplace<S>(Tensor<S>&);

LNSEG_INSTANTIATE(float)
LNSEG_INSTANTIATE(double)

#undef LNSEG_INSTANTIATE

}  // namespace lnseg::nn
