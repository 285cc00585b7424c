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

namespace lnseg {

/// Square grayscale image, row-major so that (row, col) = (y, x).
template <typename Scalar>
using Image = Eigen::Array<Scalar, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

using ImageF = Image<float>;
using ImageD = Image<double>;

/// Binary mask; any nonzero value is foreground.
using Mask = Eigen::Array<std::uint8_t, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

template <typename Derived>
bool is_square(const Eigen::ArrayBase<Derived>& a) {
  return a.rows() == a.cols() && a.rows() > 0;
}

inline bool is_power_of_two(long v) { return v > 0 && (v & (v - 1)) == 0; }

}  // namespace lnseg
