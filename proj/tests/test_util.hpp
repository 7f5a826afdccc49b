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

#include <random>
#include <vector>

#include "dualref/dynamics.hpp"

namespace dualref::testing {

inline double uniform(std::mt19937_64& rng, double lo, double hi) {
  return std::uniform_real_distribution<double>(lo, hi)(rng);
}

inline JointVec random_joint(std::mt19937_64& rng, int n, double scale) {
  JointVec v(n);
  for (int i = 0; i < n; ++i) v(i) = uniform(rng, -scale, scale);
  return v;
}

// Consistent body: positive mass, centre of mass inside a 0.3 m disc,
// positive rotational inertia about the centre of mass.
inline BodyParams random_body(std::mt19937_64& rng) {
  return BodyParams::from_com(uniform(rng, 0.2, 4.0), uniform(rng, -0.3, 0.3),
                              uniform(rng, -0.3, 0.3), uniform(rng, 0.005, 0.2));
}

inline ManipulatorModel random_model(std::mt19937_64& rng, int n, bool gravity = true) {
  ManipulatorModel m;
  std::vector<BodyParams> bodies;
  for (int i = 0; i < n; ++i) {
    m.link_lengths.push_back(uniform(rng, 0.2, 0.8));
    bodies.push_back(random_body(rng));
  }
  m.robot_params = InertialParams(bodies);
  if (gravity) m.gravity = Vec2(uniform(rng, -3.0, 3.0), uniform(rng, -9.81, 0.0));
  return m;
}

inline ManipulatorModel two_link_arm() {
  ManipulatorModel m;
  m.link_lengths = {0.5, 0.5};
  m.robot_params = InertialParams({BodyParams::from_com(3.0, 0.25, 0.0, 0.0625),
                                   BodyParams::from_com(2.0, 0.25, 0.0, 0.0417)});
  return m;
}

inline Vec4 cube_payload() { return BodyParams::from_com(2.0, 0.04, 0.04, 2.0 * 0.02 / 12.0).to_vector(); }

}  // namespace dualref::testing
