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

#include "dualref/bench.hpp"
#include "dualref/objective.hpp"
#include "test_util.hpp"

namespace dualref {
namespace {

using testing::uniform;

RolloutLog constant_regressor_log(const PayloadRegressor& Y, int samples, double dt) {
  RolloutLog log;
  log.q = Mat::Zero(samples, Y.rows());
  for (int k = 0; k < samples; ++k) {
    log.t.push_back(k * dt);
    log.Yl.push_back(Y);
  }
  return log;
}

PayloadRegressor random_regressor(std::mt19937_64& rng, int n) {
  PayloadRegressor Y(n, kBodyParams);
  for (int i = 0; i < n; ++i)
    for (int c = 0; c < kBodyParams; ++c) Y(i, c) = uniform(rng, -1.0, 1.0);
  return Y;
}

TEST(FisherInformation, ConstantIntegrand) {
  std::mt19937_64 rng(61);
  const PayloadRegressor Y = random_regressor(rng, 2);
  const RolloutLog log = constant_regressor_log(Y, 51, 0.04);
  Mat R(2, 2);
  R << 0.02, 0.005, 0.005, 0.03;
  const FisherInfo fi = fisher_information(log, R);
  const Mat expect = 2.0 * Y.transpose() * R.inverse() * Y;
  EXPECT_LT((fi.I - expect).cwiseAbs().maxCoeff(), 1e-10 * expect.cwiseAbs().maxCoeff());
  EXPECT_DOUBLE_EQ(fi.t1, 2.0);
  // Doubling the noise halves the information.
  EXPECT_LT((fisher_information(log, 2.0 * R).I - 0.5 * fi.I).cwiseAbs().maxCoeff(), 1e-10 * fi.I.norm());
}

TEST(FisherInformation, MonotoneInTheWindow) {
  std::mt19937_64 rng(62);
  RolloutLog log;
  log.q = Mat::Zero(100, 2);
  for (int k = 0; k < 100; ++k) {
    log.t.push_back(0.01 * k);
    log.Yl.push_back(random_regressor(rng, 2));
  }
  const Mat R = Mat::Identity(2, 2) * 0.01;
  Mat prev = Mat::Zero(4, 4);
  for (double te : {0.1, 0.3, 0.5, 0.99}) {
    const Mat I = fisher_information(log, R, te).I;
    EXPECT_GE(min_eigenvalue(I - prev), -1e-10);
    prev = I;
  }
  log.Yl.clear();
  EXPECT_THROW(fisher_information(log, R), std::invalid_argument);
}

TEST(Oed, CriteriaMatchEigenvalueOracles) {
  std::mt19937_64 rng(63);
  Mat A(4, 4);
  for (int i = 0; i < 4; ++i)
    for (int j = 0; j < 4; ++j) A(i, j) = uniform(rng, -1.0, 1.0);
  const Mat I = A * A.transpose() + 0.2 * Mat::Identity(4, 4);
  Eigen::SelfAdjointEigenSolver<Mat> es(I);
  const Vec ev = es.eigenvalues();
  EXPECT_NEAR(oed_criterion(I, OedKind::kA), ev.cwiseInverse().sum(), 1e-10);
  EXPECT_NEAR(oed_criterion(I, OedKind::kD), 1.0 / I.determinant(), 1e-10 / I.determinant());
  EXPECT_NEAR(oed_criterion(I, OedKind::kE), 1.0 / ev.minCoeff(), 1e-10);
  EXPECT_NEAR(oed_criterion(I, OedKind::kT), I.trace(), 1e-12);
  Mat singular = I;
  singular.row(3).setZero();
  singular.col(3).setZero();
  EXPECT_THROW(oed_criterion(singular, OedKind::kA), RankDeficientError);
  EXPECT_NO_THROW(oed_criterion(singular, OedKind::kT));
  EXPECT_EQ(oed_kind_from_string("D"), OedKind::kD);
}

TEST(Oed, PosteriorCovariance) {
  std::mt19937_64 rng(64);
  Mat A(4, 4);
  for (int i = 0; i < 4; ++i)
    for (int j = 0; j < 4; ++j) A(i, j) = uniform(rng, -1.0, 1.0);
  const Mat I = A * A.transpose();
  const Mat Q = Mat(Vec4(0.5, 0.01, 0.02, 0.003).asDiagonal());
  const Mat expect = (I + Q.inverse()).inverse();
  EXPECT_LT((posterior_covariance(I, Q) - expect).cwiseAbs().maxCoeff(), 1e-12);
  EXPECT_EQ(posterior_covariance(I, Mat::Zero(4, 4)).cwiseAbs().maxCoeff(), 0.0);
}

// x' = -x + theta from x(0) = 0, cost (x(T) - a)^2.
struct Relax : ContinuousSystem<Relax> {
  int state_dim() const { return 1; }
  int param_dim() const { return 1; }
  int input_dim() const { return 1; }
  TimeGrid grid() const { return {0.01, 150}; }
  Vec initial_state() const { return Vec::Zero(1); }
  Vec derivative(double, const Vec& x, const Vec& th) const { return Vec::Constant(1, th(0) - x(0)); }
  Vec input(double, const Vec&, const Vec& th) const { return th; }
};

struct Miss {
  double a = 0.3;
  double terminal(const Vec& x) const { return (x(0) - a) * (x(0) - a); }
  double running(double, const Vec&, const Vec&) const { return 0.0; }
  Mat terminal_hessian(const Vec&) const { return Mat::Constant(1, 1, 2.0); }
  Mat running_hessian(double, const Vec&, const Vec&) const { return Mat::Zero(2, 2); }
};

TEST(ExpectedCost, GaussHermiteToy) {
  const Relax sys;
  const Miss cost;
  const double mu = 0.8, sd = 0.1;
  const MixtureCost j = j_dual1(sys, build_gmm(Vec::Constant(1, mu), Mat::Constant(1, 1, sd * sd), 1,
                                               GmmStrategy::kSingle),
                                cost);
  // Gauss-Hermite nodes from the Jacobi matrix of the Hermite recurrence.
  const int n = 12;
  Mat Jm = Mat::Zero(n, n);
  for (int k = 1; k < n; ++k) Jm(k, k - 1) = Jm(k - 1, k) = std::sqrt(k / 2.0);
  Eigen::SelfAdjointEigenSolver<Mat> es(Jm);
  double expect = 0.0;
  for (int i = 0; i < n; ++i) {
    const double w = es.eigenvectors()(0, i) * es.eigenvectors()(0, i);  // sums to 1
    const double th = mu + std::sqrt(2.0) * sd * es.eigenvalues()(i);
    const SystemTrajectory tr = sys.simulate(Vec::Constant(1, th));
    expect += w * cost.terminal(tr.xi.row(tr.samples() - 1).transpose());
  }
  EXPECT_NEAR(j.value, expect, 0.02 * expect);
}

TEST(OptimalityLoss, ScalarQuadraticIsExact) {
  auto J = [](const Vec& d, const Vec& th) { return (d(0) - th(0)) * (d(0) - th(0)); };
  OptimizerConfig opt;
  std::mt19937_64 rng(65);
  for (int k = 0; k < 10; ++k) {
    const double theta = uniform(rng, -1.0, 1.0), bar = theta + uniform(rng, -0.5, 0.5);
    const OptimalityLossModel olm = optimality_loss_model(J, Vec::Constant(1, bar), Vec::Constant(1, 0.0), opt);
    EXPECT_NEAR(olm.D(0, 0), 2.0, 1e-5);
    EXPECT_NEAR(olm.anchor_design(0), bar, 1e-6);
    const double d_true = optimize([&](const Vec& d) { return J(d, Vec::Constant(1, theta)); },
                                   Vec::Constant(1, 0.0), opt).d(0);
    const double measured = J(olm.anchor_design, Vec::Constant(1, theta)) -
                            J(Vec::Constant(1, d_true), Vec::Constant(1, theta));
    EXPECT_NEAR(olm.predicted_loss(Vec::Constant(1, theta)), measured, 1e-6);
  }
}

TEST(OptimalityLoss, QuadraticFormGivesSchurComplement) {
  std::mt19937_64 rng(66);
  const int nd = 3, nt = 2;
  Mat A(nd, nd), B(nd, nt);
  for (int i = 0; i < nd; ++i) {
    for (int j = 0; j < nd; ++j) A(i, j) = uniform(rng, -1.0, 1.0);
    for (int j = 0; j < nt; ++j) B(i, j) = uniform(rng, -1.0, 1.0);
  }
  const Mat H = A * A.transpose() + Mat::Identity(nd, nd);
  auto J = [&](const Vec& d, const Vec& th) { return 0.5 * d.dot(H * d) - d.dot(B * th) + 0.5 * th.squaredNorm(); };
  const Vec bar = Vec::Constant(nt, 0.4);
  const Vec dstar = H.ldlt().solve(B * bar);
  const OptimalityLossModel olm = optimality_loss_at(J, bar, dstar);
  const Mat expect = B.transpose() * (H + olm.damping * Mat::Identity(nd, nd)).inverse() * B;
  EXPECT_LT((olm.D - expect).cwiseAbs().maxCoeff(), 1e-6);
  EXPECT_LT((olm.D - olm.D.transpose()).cwiseAbs().maxCoeff(), 1e-15);
  EXPECT_GE(min_eigenvalue(olm.D), -1e-12);
  EXPECT_FALSE(olm.regularized);
}

TEST(OptimalityLoss, IndefiniteHessianIsFlagged) {
  auto J = [](const Vec& d, const Vec& th) { return -d(0) * d(0) + d(0) * th(0); };
  const OptimalityLossModel olm = optimality_loss_at(J, Vec::Constant(1, 1.0), Vec::Constant(1, 0.5));
  EXPECT_TRUE(olm.regularized);
  EXPECT_GE(min_eigenvalue(olm.D), 0.0);
  EXPECT_NEAR(optimality_loss_penalty(Mat::Identity(2, 2) * 2.0, Mat::Identity(2, 2) * 0.5), 1.0, 1e-15);
}

ExperimentConfig small_config() {
  ExperimentConfig c;
  c.spline.duration = 0.5;
  c.step = 5e-3;
  return c;
}

TEST(ManipulatorObjectives, FimObjectiveComposition) {
  const ExperimentConfig c = small_config();
  const ManipulatorProblem p = make_problem(c, ControllerKind::kCtcFixed);
  Vec d = p.straight_line();
  d(1) += 0.2;
  const Vec4 th = nominal_payload(c);
  const RolloutLog log = p.rollout(d, th, true);
  const double manual = task_cost(p.model, log, p.cost) - 1e-3 * fisher_information(log, p.fi_noise).I.trace();
  EXPECT_NEAR(j_fim(d, th, 1e-3, p), manual, 1e-12 * std::abs(manual));
}

TEST(ManipulatorObjectives, ExpectedCostReducesToTaskCostWithoutSpread) {
  const ExperimentConfig c = small_config();
  const ManipulatorProblem p = make_problem(c, ControllerKind::kNac);
  const Vec d = p.straight_line();
  const Vec4 th = nominal_payload(c);
  const GaussianMixture point{{{1.0, Vec(th), Mat::Zero(4, 4)}}};
  EXPECT_NEAR(j_dual1(d, point, p).value, p.task(d, th), 1e-12);
}

TEST(ManipulatorObjectives, DualTwoComposition) {
  const ExperimentConfig c = small_config();
  const ManipulatorProblem p = make_problem(c, ControllerKind::kNac);
  const Vec d = p.straight_line();
  const Vec4 th = nominal_payload(c);
  const Mat Q = payload_prior_covariance(c);
  const GaussianMixture g = build_gmm(Vec(th), Q, 1, GmmStrategy::kSingle);
  OptimalityLossModel olm;
  Mat A = Mat::Random(4, 4);
  olm.D = A * A.transpose();
  const double manual = p.task(d, th) +
                        0.5 * (olm.D * posterior_covariance(fisher_information(p.rollout(d, th, true), p.fi_noise).I, Q)).trace();
  EXPECT_NEAR(j_dual2(d, g, olm, p).value, manual, 1e-10 * std::abs(manual));

  // Vanishing prior spread leaves the deterministic cost.
  const GaussianMixture tight = build_gmm(Vec(th), Mat::Identity(4, 4) * 1e-12, 1, GmmStrategy::kSingle);
  EXPECT_NEAR(j_dual2(d, tight, olm, p).value, p.task(d, th), 1e-6);
}

TEST(ManipulatorObjectives, PropagatedSigmaThetaIsCovariance) {
  ExperimentConfig c = small_config();
  c.sigma_source = SigmaThetaSource::kPropagated;
  const ManipulatorProblem p = make_problem(c, ControllerKind::kNac);
  const Vec4 th = nominal_payload(c);
  const ManipulatorClosedLoop loop = p.closed_loop(p.straight_line());
  const MomentTrajectory m = propagate_moments(loop, Vec(th), payload_prior_covariance(c));
  const Mat S = propagated_estimate_error(loop, m);
  EXPECT_LT((S - S.transpose()).cwiseAbs().maxCoeff(), 1e-15);
  EXPECT_GE(min_eigenvalue(S), -1e-12 * S.norm());
}

}  // namespace
}  // namespace dualref
