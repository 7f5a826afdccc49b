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

#include "dualref/control.hpp"
#include "test_util.hpp"

namespace dualref {
namespace {

using testing::random_body;
using testing::random_joint;
using testing::random_model;
using testing::uniform;

PayloadRegressor random_regressor(std::mt19937_64& rng, int n) {
  PayloadRegressor Y(n, kBodyParams);
  for (int i = 0; i < n; ++i)
    for (int c = 0; c < kBodyParams; ++c) Y(i, c) = uniform(rng, -1.0, 1.0);
  return Y;
}

TEST(PseudoInertia, RoundTrip) {
  std::mt19937_64 rng(31);
  for (int k = 0; k < 100; ++k) {
    const Vec4 th = random_body(rng).to_vector();
    const Mat3 Theta = pseudo_inertia(th);
    EXPECT_LT((params_from_pseudo_inertia(Theta) - th).cwiseAbs().maxCoeff(), 1e-12);
    EXPECT_TRUE(is_positive_definite(Theta));
    EXPECT_LT((Theta - Theta.transpose()).cwiseAbs().maxCoeff(), 0.0 + 1e-300);
  }
}

TEST(PseudoInertia, ConsistencyBoundaryIsSingular) {
  std::mt19937_64 rng(32);
  for (int k = 0; k < 50; ++k) {
    const double m = uniform(rng, 0.5, 3.0), hx = uniform(rng, -0.3, 0.3), hy = uniform(rng, -0.3, 0.3);
    const Vec4 th(m, hx, hy, (hx * hx + hy * hy) / m);
    EXPECT_NEAR(min_eigenvalue(pseudo_inertia(th)), 0.0, 1e-12);
  }
  EXPECT_THROW(pseudo_inertia(Vec4(1.0, 1.0, 0.0, 0.5)), NumericalError);
  EXPECT_THROW(pseudo_inertia(Vec4(-1.0, 0.0, 0.0, 0.5)), NumericalError);
}

TEST(PseudoInertia, MultiplierReproducesLinearForm) {
  std::mt19937_64 rng(33);
  for (int k = 0; k < 20; ++k) {
    Mat3 S = Mat3::Random();
    S = 0.5 * (S + S.transpose());
    Vec4 l;
    for (int i = 0; i < 4; ++i) l(i) = uniform(rng, -2.0, 2.0);
    EXPECT_NEAR((S * natural_multiplier(l)).trace(), params_from_pseudo_inertia(S).dot(l), 1e-12);
  }
}

TEST(Adaptation, NaturalEulerStepStaysPositiveDefinite) {
  std::mt19937_64 rng(34);
  ControllerGains gains = ControllerGains::defaults(2);
  for (int k = 0; k < 200; ++k) {
    Mat3 Theta = pseudo_inertia(random_body(rng).to_vector());
    const PayloadRegressor Y = random_regressor(rng, 2);
    const JointVec s = random_joint(rng, 2, 1.0);
    for (int step = 0; step < 100; ++step) {
      Theta += 1e-3 * nac_update(gains, Theta, Y, s);
      Eigen::SelfAdjointEigenSolver<Mat3> es(Theta);
      ASSERT_GT(es.eigenvalues().minCoeff(), 0.0);
    }
  }
}

TEST(Adaptation, NaturalUpdateOracle) {
  std::mt19937_64 rng(35);
  ControllerGains gains = ControllerGains::defaults(3);
  gains.gamma = 2.5;
  const Mat3 Theta = pseudo_inertia(random_body(rng).to_vector());
  const PayloadRegressor Y = random_regressor(rng, 3);
  const JointVec s = random_joint(rng, 3, 1.0);
  const Vec4 l = Y.transpose() * s;
  const Mat3 expect = -(Theta * natural_multiplier(l) * Theta) / 2.5;
  EXPECT_LT((nac_update(gains, Theta, Y, s) - expect).cwiseAbs().maxCoeff(), 1e-12);
  // Rate of the linear parameters: d/dt theta = phi(dTheta).
  const Vec4 rate = params_from_pseudo_inertia(nac_update(gains, Theta, Y, s));
  EXPECT_LE(rate.dot(l), 1e-12);  // descent on the l-weighted energy
}

TEST(Adaptation, GradientLaw) {
  std::mt19937_64 rng(36);
  ControllerGains gains = ControllerGains::defaults(2);
  gains.Gamma = Mat4::Identity() * 0.5;
  gains.Gamma(0, 1) = gains.Gamma(1, 0) = 0.1;
  const PayloadRegressor Y = random_regressor(rng, 2);
  const JointVec s = random_joint(rng, 2, 1.0);
  EXPECT_LT((gradient_update(gains, Y, s) + gains.Gamma * (Y.transpose() * s)).cwiseAbs().maxCoeff(), 1e-15);
}

TEST(Policy, SlotineLiTermByTerm) {
  std::mt19937_64 rng(37);
  for (int trial = 0; trial < 20; ++trial) {
    const int n = 1 + trial % 4;
    const ManipulatorModel model = random_model(rng, n);
    ControllerGains gains = ControllerGains::defaults(n);
    for (int j = 0; j < n; ++j) {
      gains.K(j) = uniform(rng, 1.0, 30.0);
      gains.Lambda(j) = uniform(rng, 1.0, 20.0);
    }
    const JointState st{random_joint(rng, n, 2.0), random_joint(rng, n, 1.0)};
    const ReferenceSample ref{random_joint(rng, n, 2.0), random_joint(rng, n, 1.0), random_joint(rng, n, 3.0)};
    const Vec4 hat = random_body(rng).to_vector();
    const JointVec tau = slotine_li_torque(model, gains, st, ref, hat);

    const JointVec e = st.q - ref.q, de = st.dq - ref.dq;
    const JointVec lam = gains.Lambda, K = gains.K;
    const JointVec s = de + lam.cwiseProduct(e);
    const JointVec v = ref.dq - lam.cwiseProduct(e);
    const JointVec a = ref.ddq - lam.cwiseProduct(de);
    const auto t = dynamics_terms(model, InertialParams::single(BodyParams::from_vector(hat)), st);
    const JointVec expect = t.M * a + t.C * v + t.g - K.cwiseProduct(s);
    EXPECT_LT((tau - expect).cwiseAbs().maxCoeff(), 1e-10 * std::max(1.0, expect.cwiseAbs().maxCoeff()));
    // The same torque through the regressor.
    const JointVec via_y = regressor(model, st, a, v) * full_params(model, hat) - K.cwiseProduct(s);
    EXPECT_LT((tau - via_y).cwiseAbs().maxCoeff(), 1e-10 * std::max(1.0, expect.cwiseAbs().maxCoeff()));
  }
}

TEST(Policy, ComputedTorqueTermByTerm) {
  std::mt19937_64 rng(38);
  for (int trial = 0; trial < 20; ++trial) {
    const int n = 1 + trial % 4;
    const ManipulatorModel model = random_model(rng, n);
    ControllerGains gains = ControllerGains::defaults(n);
    for (int j = 0; j < n; ++j) {
      gains.Kp(j) = uniform(rng, 10.0, 200.0);
      gains.Kd(j) = uniform(rng, 5.0, 40.0);
    }
    const JointState st{random_joint(rng, n, 2.0), random_joint(rng, n, 1.0)};
    const ReferenceSample ref{random_joint(rng, n, 2.0), random_joint(rng, n, 1.0), random_joint(rng, n, 3.0)};
    const Vec4 hat = random_body(rng).to_vector();
    const JointVec tau = ctc_torque(model, gains, st, ref, hat);
    const JointVec Kp = gains.Kp, Kd = gains.Kd;
    const JointVec acc = ref.ddq - Kd.cwiseProduct(st.dq - ref.dq) - Kp.cwiseProduct(st.q - ref.q);
    const auto t = dynamics_terms(model, InertialParams::single(BodyParams::from_vector(hat)), st);
    const JointVec expect = t.M * acc + t.C * st.dq + t.g;
    EXPECT_LT((tau - expect).cwiseAbs().maxCoeff(), 1e-10 * std::max(1.0, expect.cwiseAbs().maxCoeff()));
  }
}

TEST(Rls, ScalarMatchesBatchLeastSquares) {
  // One measured coordinate: only the first parameter is informed.
  const double y = 0.7, r = 0.04, p0 = 2.0, th0 = 1.0;
  EstimatorState est;
  est.theta_hat = Vec4(th0, 0.0, 0.0, 0.0);
  est.P = Mat4::Identity();
  est.P(0, 0) = p0;
  PayloadRegressor Y(1, 4);
  Y << y, 0.0, 0.0, 0.0;
  std::mt19937_64 rng(39);
  double sum = 0.0;
  const int K = 500;
  for (int k = 0; k < K; ++k) {
    JointVec z(1);
    z(0) = y * 3.0 + uniform(rng, -0.2, 0.2);
    sum += z(0);
    est = rls_update(est, Y, z, Mat::Constant(1, 1, r));
  }
  const double batch = (th0 / p0 + y * sum / r) / (1.0 / p0 + K * y * y / r);
  EXPECT_NEAR(est.theta_hat(0), batch, 1e-10);
  EXPECT_NEAR(est.P(0, 0), 1.0 / (1.0 / p0 + K * y * y / r), 1e-12);
  EXPECT_EQ(est.theta_hat.tail<3>(), Eigen::Vector3d::Zero());
}

TEST(Rls, VectorMatchesBatchMap) {
  std::mt19937_64 rng(40);
  const int n = 2;
  EstimatorState est;
  est.theta_hat = random_body(rng).to_vector();
  est.P = Mat4::Identity() * 0.5;
  const Vec4 prior = est.theta_hat;
  Mat R = Mat::Identity(n, n) * 0.01;
  R(0, 1) = R(1, 0) = 0.002;
  const Mat Rinv = R.inverse();
  Mat4 info = est.P.inverse();
  Vec4 rhs = info * prior;
  for (int k = 0; k < 50; ++k) {
    const PayloadRegressor Y = random_regressor(rng, n);
    const JointVec z = random_joint(rng, n, 1.0);
    est = rls_update(est, Y, z, R);
    info += Y.transpose() * Rinv * Y;
    rhs += Y.transpose() * Rinv * Vec(z);
  }
  const Vec4 batch = info.ldlt().solve(rhs);
  EXPECT_LT((est.theta_hat - batch).cwiseAbs().maxCoeff(), 1e-9);
  EXPECT_LT((est.P - info.inverse()).cwiseAbs().maxCoeff(), 1e-10);
}

TEST(Rls, HugeNoiseLeavesPriorUnchanged) {
  std::mt19937_64 rng(41);
  EstimatorState est;
  est.theta_hat = random_body(rng).to_vector();
  const Vec4 prior = est.theta_hat;
  for (int k = 0; k < 20; ++k) {
    est = rls_update(est, random_regressor(rng, 2), random_joint(rng, 2, 1.0), Mat::Identity(2, 2) * 1e14);
  }
  EXPECT_LT((est.theta_hat - prior).cwiseAbs().maxCoeff(), 1e-12);
  EXPECT_LT((est.P - Mat4::Identity()).cwiseAbs().maxCoeff(), 1e-12);
}

TEST(Rls, FixedGainAndProjection) {
  std::mt19937_64 rng(42);
  EstimatorState est;
  est.theta_hat = random_body(rng).to_vector();
  const PayloadRegressor Y = random_regressor(rng, 2);
  const JointVec z = random_joint(rng, 2, 1.0);
  const EstimatorState out = rls_update(est, Y, z, Mat::Identity(2, 2), RlsMode::kFixedGain, 0.05);
  const Vec4 expect = est.theta_hat + 0.05 * (Y.transpose() * (z - Y * est.theta_hat));
  EXPECT_LT((out.theta_hat - expect).cwiseAbs().maxCoeff(), 1e-15);
  EXPECT_EQ(out.P, est.P);

  const Vec4 inconsistent(-0.5, 0.4, -0.3, 0.01);
  const Vec4 p = project_consistent(inconsistent);
  EXPECT_TRUE(BodyParams::from_vector(p).is_consistent());
  const Vec4 good = random_body(rng).to_vector();
  EXPECT_EQ(project_consistent(good), good);
}

TEST(Rls, RejectsMismatchedShapes) {
  EstimatorState est;
  PayloadRegressor Y = PayloadRegressor::Zero(2, 4);
  EXPECT_THROW(rls_update(est, Y, JointVec::Zero(3), Mat::Identity(2, 2)), DimensionError);
  EXPECT_THROW(rls_update(est, Y, JointVec::Zero(2), Mat::Identity(3, 3)), DimensionError);
}

TEST(Gains, Validation) {
  ControllerGains g = ControllerGains::defaults(2);
  EXPECT_NO_THROW(g.validate(2));
  EXPECT_THROW(g.validate(3), DimensionError);
  g.K(0) = -1.0;
  EXPECT_THROW(g.validate(2), std::invalid_argument);
  EXPECT_EQ(controller_from_string("ctc-rls"), ControllerKind::kCtcRls);
  EXPECT_THROW(controller_from_string("pid"), std::invalid_argument);
}

}  // namespace
}  // namespace dualref
