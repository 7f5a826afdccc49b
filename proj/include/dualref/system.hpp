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

// Generic closed-loop systems xi' = g(t, xi, theta) sampled on a uniform time
// grid. Uncertainty propagation and the expected-cost objectives are written
// against this interface so they apply equally to the manipulator loop and to
// small analytic test systems.

#include <concepts>
#include <vector>

#include "dualref/common.hpp"

namespace dualref {

struct TimeGrid {
  double step = 1e-3;
  int n_steps = 0;

  double time(int k) const { return step * k; }
  double duration() const { return step * n_steps; }
  int samples() const { return n_steps + 1; }

  static TimeGrid from_duration(double duration, double step) {
    if (!(step > 0.0) || !(duration > 0.0)) {
      throw std::invalid_argument("TimeGrid: duration and step must be positive");
    }
    const double ratio = duration / step;
    const double rounded = std::round(ratio);
    if (std::abs(ratio - rounded) > 1e-9 * std::max(1.0, ratio)) {
      throw std::invalid_argument("TimeGrid: duration must be an integer multiple of step");
    }
    return {step, static_cast<int>(rounded)};
  }
};

/// Sampled state xi and input u; rows are time samples. A diverged run is
/// truncated after its last finite sample.
struct SystemTrajectory {
  std::vector<double> t;
  Mat xi;
  Mat u;
  bool diverged = false;
  double fail_time = 0.0;

  int samples() const { return static_cast<int>(t.size()); }
};

template <class S>
concept ClosedLoopModel = requires(const S& s, double t, const Vec& xi,
                                   const Vec& theta) {
  { s.state_dim() } -> std::convertible_to<int>;
  { s.param_dim() } -> std::convertible_to<int>;
  { s.input_dim() } -> std::convertible_to<int>;
  { s.grid() } -> std::convertible_to<TimeGrid>;
  { s.initial_state() } -> std::convertible_to<Vec>;
  { s.derivative(t, xi, theta) } -> std::convertible_to<Vec>;
  { s.input(t, xi, theta) } -> std::convertible_to<Vec>;
  { s.simulate(theta) } -> std::convertible_to<SystemTrajectory>;
  { s.is_continuous() } -> std::convertible_to<bool>;
};

inline constexpr double kDivergenceLimit = 1e6;

/// Fixed-step classical Runge-Kutta integration of a continuous system.
template <class S>
SystemTrajectory integrate_rk4(const S& sys, const Vec& theta,
                               double limit = kDivergenceLimit) {
  const TimeGrid grid = sys.grid();
  const double h = grid.step;
  SystemTrajectory out;
  out.t.reserve(static_cast<std::size_t>(grid.samples()));
  out.xi.resize(grid.samples(), sys.state_dim());
  out.u.resize(grid.samples(), sys.input_dim());
  Vec xi = sys.initial_state();
  int recorded = 0;
  try {
    for (int k = 0;; ++k) {
      const double t = grid.time(k);
      const Vec u = sys.input(t, xi, theta);
      out.xi.row(k) = xi.transpose();
      out.u.row(k) = u.transpose();
      out.t.push_back(t);
      recorded = k + 1;
      if (k == grid.n_steps) break;
      const Vec k1 = sys.derivative(t, xi, theta);
      const Vec k2 = sys.derivative(t + 0.5 * h, xi + 0.5 * h * k1, theta);
      const Vec k3 = sys.derivative(t + 0.5 * h, xi + 0.5 * h * k2, theta);
      const Vec k4 = sys.derivative(t + h, xi + h * k3, theta);
      xi += (h / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4);
      if (!xi.allFinite() || xi.cwiseAbs().maxCoeff() > limit) {
        throw NumericalError("integrate_rk4: state diverged");
      }
    }
  } catch (const NumericalError&) {
    out.diverged = true;
    out.fail_time = grid.time(recorded);
    out.xi.conservativeResize(recorded, Eigen::NoChange);
    out.u.conservativeResize(recorded, Eigen::NoChange);
  }
  return out;
}

/// CRTP helper for systems without discrete updates.
template <class Derived>
struct ContinuousSystem {
  bool is_continuous() const { return true; }
  SystemTrajectory simulate(const Vec& theta) const {
    return integrate_rk4(static_cast<const Derived&>(*this), theta);
  }
};

}  // namespace dualref
