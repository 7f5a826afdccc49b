// Copyright 2026 The dualref Authors
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

#pragma once

#include <cmath>
#include <stdexcept>
#include <string>

#include <Eigen/Dense>

namespace dualref {

/// Upper bound on the number of links. Joint-space quantities use Eigen's
/// fixed-capacity dynamic storage so the inner simulation loop does not
/// touch the heap.
inline constexpr int kMaxLinks = 6;
/// Parameters per rigid body: (m, h_x, h_y, I_zz).
inline constexpr int kBodyParams = 4;
inline constexpr int kMaxParams = kBodyParams * (kMaxLinks + 1);

using JointVec = Eigen::Matrix<double, Eigen::Dynamic, 1, 0, kMaxLinks, 1>;
using JointMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, 0,
                               kMaxLinks, kMaxLinks>;
using ParamVec = Eigen::Matrix<double, Eigen::Dynamic, 1, 0, kMaxParams, 1>;
using RegressorMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, 0,
                                   kMaxLinks, kMaxParams>;
using PayloadRegressor = Eigen::Matrix<double, Eigen::Dynamic, kBodyParams, 0,
                                       kMaxLinks, kBodyParams>;

using Vec2 = Eigen::Vector2d;
using Vec4 = Eigen::Vector4d;
using Mat3 = Eigen::Matrix3d;
using Mat4 = Eigen::Matrix4d;

using Vec = Eigen::VectorXd;
using Mat = Eigen::MatrixXd;

/// Inputs with inconsistent sizes.
class DimensionError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

/// Numerical failure: singular systems, loss of definiteness, non-finite data.
class NumericalError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

inline void require_size(Eigen::Index got, Eigen::Index want,
                         const char* what) {
  if (got != want) {
    throw DimensionError(std::string(what) + ": expected size " +
                         std::to_string(want) + ", got " +
                         std::to_string(got));
  }
}

template <class Derived>
bool all_finite(const Eigen::DenseBase<Derived>& x) {
  return x.allFinite();
}

template <class Derived>
void require_finite(const Eigen::DenseBase<Derived>& x, const char* what) {
  if (!x.allFinite()) {
    throw NumericalError(std::string(what) + ": non-finite entries");
  }
}

/// Symmetric part, (A + A^T) / 2.
template <class Derived>
auto symmetrized(const Eigen::MatrixBase<Derived>& a) {
  using Plain = typename Derived::PlainObject;
  return Plain(0.5 * (a + a.transpose()));
}

/// Smallest eigenvalue of a symmetric matrix.
template <class Derived>
double min_eigenvalue(const Eigen::MatrixBase<Derived>& a) {
  Mat s = 0.5 * (a + a.transpose());
  if (s.size() == 0) return 0.0;
  Eigen::SelfAdjointEigenSolver<Mat> es(s, Eigen::EigenvaluesOnly);
  return es.eigenvalues().minCoeff();
}

}  // namespace dualref
