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

#include <gtest/gtest.h>

#include <random>
#include <sstream>

#include "dualref/reference.hpp"
#include "test_util.hpp"

namespace dualref {
namespace {

using testing::uniform;

struct Fixture {
  Boundary boundary;
  SplineConfig cfg;
  Vec d;
};

Fixture random_spline(std::mt19937_64& rng, int n, bool knots) {
  Fixture f;
  f.cfg = {5, 8, 1.5, knots};
  f.boundary.q0 = Vec::Zero(n);
  f.boundary.qT = Vec::Zero(n);
  for (int j = 0; j < n; ++j) {
    f.boundary.q0(j) = uniform(rng, -1.0, 1.0);
    f.boundary.qT(j) = uniform(rng, -1.0, 1.0);
  }
  f.d = straight_line_design(f.boundary, f.cfg);
  for (int i = 0; i < (f.cfg.n_control - 2) * n; ++i) f.d(i) += uniform(rng, -0.5, 0.5);
  return f;
}

TEST(Reference, CubicSingleSpanMatchesDeBoor) {
  Mat P(4, 1);
  P << 1.0, -2.0, 4.0, 0.5;
  const BSplineTrajectory tr(3, {0, 0, 0, 0, 1, 1, 1, 1}, P, 1.0);
  // One span with clamped knots is the Bernstein form; de Boor at s = 1/2
  // collapses to (P0 + 3 P1 + 3 P2 + P3) / 8.
  EXPECT_NEAR(tr.curve(0.5)(0), (1.0 - 6.0 + 12.0 + 0.5) / 8.0, 1e-14);
  // Triangle by hand at s = 1/4.
  const double s = 0.25;
  double a0 = (1 - s) * P(0) + s * P(1), a1 = (1 - s) * P(1) + s * P(2), a2 = (1 - s) * P(2) + s * P(3);
  double b0 = (1 - s) * a0 + s * a1, b1 = (1 - s) * a1 + s * a2;
  EXPECT_NEAR(tr.curve(s)(0), (1 - s) * b0 + s * b1, 1e-14);
  // Derivative of the Bernstein form at s = 0 is 3 (P1 - P0).
  EXPECT_NEAR(tr.curve_ds(0.0)(0), 3.0 * (P(1) - P(0)), 1e-12);
}

TEST(Reference, MultiSpanMatchesCoxDeBoorRecursion) {
  std::mt19937_64 rng(21);
  const Fixture f = random_spline(rng, 2, false);
  const BSplineTrajectory tr = make_spline(f.boundary, f.d, f.cfg);
  const auto& U = tr.knots();
  const int p = tr.degree();
  // Independent Cox-de Boor basis evaluation.
  std::function<double(int, int, double)> N = [&](int i, int k, double x) -> double {
    if (k == 0) {
      const bool last = x == 1.0 && U[i + 1] == 1.0 && U[i] < 1.0;
      return (U[i] <= x && x < U[i + 1]) || last ? 1.0 : 0.0;
    }
    double out = 0.0;
    if (U[i + k] > U[i]) out += (x - U[i]) / (U[i + k] - U[i]) * N(i, k - 1, x);
    if (U[i + k + 1] > U[i + 1]) out += (U[i + k + 1] - x) / (U[i + k + 1] - U[i + 1]) * N(i + 1, k - 1, x);
    return out;
  };
  for (double x : {0.0, 0.13, 0.4, 0.5, 0.77, 0.999, 1.0}) {
    Vec expect = Vec::Zero(2);
    for (int i = 0; i < tr.n_control(); ++i) expect += N(i, p, x) * tr.control_points().row(i).transpose();
    EXPECT_LT((tr.curve(x) - expect).cwiseAbs().maxCoeff(), 1e-12) << "s = " << x;
  }
}

TEST(Reference, BoundaryConditions) {
  std::mt19937_64 rng(22);
  for (int trial = 0; trial < 20; ++trial) {
    const Fixture f = random_spline(rng, 1 + trial % kMaxLinks, trial % 2 == 1);
    const BSplineTrajectory tr = make_spline(f.boundary, f.d, f.cfg);
    const ReferenceSample a = tr.eval(0.0), b = tr.eval(f.cfg.duration);
    EXPECT_LT((Vec(a.q) - f.boundary.q0).cwiseAbs().maxCoeff(), 1e-12);
    EXPECT_LT((Vec(b.q) - f.boundary.qT).cwiseAbs().maxCoeff(), 1e-12);
    for (const auto* v : {&a.dq, &a.ddq, &b.dq, &b.ddq}) EXPECT_LT(v->cwiseAbs().maxCoeff(), 1e-10);
  }
}

TEST(Reference, TimeDerivativesMatchDifferences) {
  std::mt19937_64 rng(23);
  const Fixture f = random_spline(rng, 3, false);
  const BSplineTrajectory tr = make_spline(f.boundary, f.d, f.cfg);
  const double h = 1e-5;
  for (int k = 0; k < 10; ++k) {
    const double t = uniform(rng, 0.01, f.cfg.duration - 0.01);
    const ReferenceSample r = tr.eval(t), rp = tr.eval(t + h), rm = tr.eval(t - h);
    EXPECT_LT((Vec(r.dq) - Vec(rp.q - rm.q) / (2 * h)).cwiseAbs().maxCoeff(), 1e-6);
    EXPECT_LT((Vec(r.ddq) - Vec(rp.dq - rm.dq) / (2 * h)).cwiseAbs().maxCoeff(), 1e-6);
  }
}

TEST(Reference, ConvexHullOfControlPoints) {
  std::mt19937_64 rng(24);
  const Fixture f = random_spline(rng, 2, false);
  const BSplineTrajectory tr = make_spline(f.boundary, f.d, f.cfg);
  const Vec lo = tr.control_points().colwise().minCoeff(), hi = tr.control_points().colwise().maxCoeff();
  for (int k = 0; k <= 400; ++k) {
    const Vec q = tr.curve(k / 400.0);
    EXPECT_TRUE(((q - lo).array() >= -1e-12).all() && ((hi - q).array() >= -1e-12).all());
  }
}

TEST(Reference, SecondDerivativeContinuousAcrossKnots) {
  std::mt19937_64 rng(25);
  const Fixture f = random_spline(rng, 2, false);
  const BSplineTrajectory tr = make_spline(f.boundary, f.d, f.cfg);
  const auto& U = tr.knots();
  for (int i = tr.degree() + 1; i < tr.n_control(); ++i) {
    const double u = U[static_cast<std::size_t>(i)];
    const double e = 1e-9;
    EXPECT_LT((tr.curve_dds(u - e) - tr.curve_dds(u + e)).cwiseAbs().maxCoeff(), 1e-5);
    EXPECT_LT((tr.curve_ds(u - e) - tr.curve_ds(u + e)).cwiseAbs().maxCoeff(), 1e-6);
  }
}

TEST(Reference, DesignRoundTripAndStraightLine) {
  std::mt19937_64 rng(26);
  const Fixture f = random_spline(rng, 2, true);
  const BSplineTrajectory tr = make_spline(f.boundary, f.d, f.cfg);
  EXPECT_EQ(pack_design(tr, true), f.d);
  EXPECT_EQ(design_size(f.cfg, 2), f.d.size());
  const SplineConfig plain{5, 8, 1.5, false};
  const BSplineTrajectory line = make_spline(f.boundary, straight_line_design(f.boundary, plain), plain);
  // Collinear control points with uniform knots reproduce the chord.
  for (double s : {0.1, 0.35, 0.8}) {
    const Vec q = line.curve(s);
    const Vec dir = f.boundary.qT - f.boundary.q0;
    const Vec off = q - f.boundary.q0;
    EXPECT_NEAR(std::abs(dir(0) * off(1) - dir(1) * off(0)), 0.0, 1e-12);
  }
}

TEST(Reference, SplineFileRoundTrip) {
  std::mt19937_64 rng(27);
  const Fixture f = random_spline(rng, 3, true);
  const BSplineTrajectory tr = make_spline(f.boundary, f.d, f.cfg);
  std::stringstream ss;
  write_spline(tr, ss);
  EXPECT_TRUE(read_spline(ss) == tr);
}

TEST(Reference, RejectsInvalidInput) {
  Boundary b{Vec::Zero(2), Vec::Ones(2)};
  SplineConfig cfg{5, 8, 1.0, true};
  Vec d = straight_line_design(b, cfg);
  EXPECT_THROW(make_spline(b, Vec::Zero(3), cfg), DimensionError);
  d(d.size() - 1) = 0.0;  // interior knot on the boundary
  EXPECT_THROW(make_spline(b, d, cfg), std::invalid_argument);
  d = straight_line_design(b, cfg);
  std::swap(d(d.size() - 1), d(d.size() - 2));
  ASSERT_NE(d(d.size() - 1), d(d.size() - 2));
  EXPECT_THROW(make_spline(b, d, cfg), std::invalid_argument);  // knots out of order
  EXPECT_THROW((SplineConfig{2, 8, 1.0, false}.validate()), std::invalid_argument);
  EXPECT_THROW((SplineConfig{5, 5, 1.0, false}.validate()), std::invalid_argument);
  const BSplineTrajectory tr = make_spline(b, straight_line_design(b, {5, 8, 1.0, false}), {5, 8, 1.0, false});
  EXPECT_THROW(tr.eval(1.5), std::out_of_range);
}

}  // namespace
}  // namespace dualref
