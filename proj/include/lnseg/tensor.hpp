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

#include <Eigen/Core>

#include "lnseg/error.hpp"

namespace lnseg::nn {

/// Dense NCHW activation tensor. Storage is contiguous; each sample is a
/// row-major (channels x height*width) matrix.
template <typename Scalar>
class Tensor {
 public:
  using Storage = Eigen::Array<Scalar, Eigen::Dynamic, 1>;
  using Matrix = Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
  using MatrixMap = Eigen::Map<Matrix>;
  using ConstMatrixMap = Eigen::Map<const Matrix>;

  Tensor() = default;

  /// Uninitialised storage.
  Tensor(int n, int c, int h, int w) : n_(n), c_(c), h_(h), w_(w), data_(Eigen::Index(n) * c * h * w) {}

  static Tensor zeros(int n, int c, int h, int w) {
    Tensor t(n, c, h, w);
    t.data_.setZero();
    return t;
  }

  int batch() const { return n_; }
  int channels() const { return c_; }
  int height() const { return h_; }
  int width() const { return w_; }
  Eigen::Index plane() const { return Eigen::Index(h_) * w_; }
  Eigen::Index size() const { return data_.size(); }
  bool empty() const { return data_.size() == 0; }

  bool same_shape(const Tensor& o) const {
    return n_ == o.n_ && c_ == o.c_ && h_ == o.h_ && w_ == o.w_;
  }

  Scalar* data() { return data_.data(); }
  const Scalar* data() const { return data_.data(); }
  Scalar* sample(int n) { return data() + Eigen::Index(n) * c_ * plane(); }
  const Scalar* sample(int n) const { return data() + Eigen::Index(n) * c_ * plane(); }
  Scalar* channel(int n, int c) { return sample(n) + Eigen::Index(c) * plane(); }
  const Scalar* channel(int n, int c) const { return sample(n) + Eigen::Index(c) * plane(); }

  MatrixMap matrix(int n) { return MatrixMap(sample(n), c_, plane()); }
  ConstMatrixMap matrix(int n) const { return ConstMatrixMap(sample(n), c_, plane()); }

  Storage& storage() { return data_; }
  const Storage& storage() const { return data_; }

  Scalar& at(int n, int c, int y, int x) { return channel(n, c)[Eigen::Index(y) * w_ + x]; }
  Scalar at(int n, int c, int y, int x) const { return channel(n, c)[Eigen::Index(y) * w_ + x]; }

  /// Frees the storage; the tensor becomes empty.
  void release() {
    data_.resize(0);
    n_ = c_ = h_ = w_ = 0;
  }

  Tensor& operator+=(const Tensor& o) {
    if (!same_shape(o)) throw Error(Errc::ShapeError, "tensor add: shape mismatch");
    data_ += o.data_;
    return *this;
  }

 private:
  int n_ = 0, c_ = 0, h_ = 0, w_ = 0;
  Storage data_;
};

}  // namespace lnseg::nn
