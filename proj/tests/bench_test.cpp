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

#include <sstream>

#include "dualref/bench.hpp"

namespace dualref {
namespace {

ExperimentConfig parse(const std::string& text) {
  std::istringstream is(text);
  return load_config(is);
}

TEST(Config, DefaultsAreValid) {
  const ExperimentConfig c;
  EXPECT_NO_THROW(c.validate());
  EXPECT_EQ(c.n_links(), 2);
  const ManipulatorModel m = make_model(c);
  EXPECT_EQ(m.n_links(), 2);
}

TEST(Config, ParsesSectionsAndTrailingComments) {
  const ExperimentConfig c = parse(
      "; leading comment\n"
      "[robot]\n"
      "link_lengths = 0.4, 0.3, 0.2   ; three links\n"
      "mass = 1, 1, 0.5\n"
      "com_x = 0.2, 0.15, 0.1\n"
      "com_y = 0, 0, 0\n"
      "inertia_com = 0.01, 0.01, 0.005\n"
      "damping = 0, 0, 0\n"
      "[task]\n"
      "start = 0.5, 0.3\n"
      "target = 0.1, 0.6  # in metres\n"
      "[bench]\n"
      "methods = nominal, ol\n"
      "controllers = ctc-rls\n"
      "seed = 42\n"
      "[optimizer]\n"
      "method = es\n"
      "max_iters = 7\n");
  EXPECT_EQ(c.n_links(), 3);
  EXPECT_DOUBLE_EQ(c.links[2].mass, 0.5);
  EXPECT_DOUBLE_EQ(c.target.y(), 0.6);
  ASSERT_EQ(c.methods.size(), 2u);
  EXPECT_EQ(c.methods[1], Method::kOl);
  ASSERT_EQ(c.controllers.size(), 1u);
  EXPECT_EQ(c.controllers[0], ControllerKind::kCtcRls);
  EXPECT_EQ(c.seed, 42u);
  EXPECT_EQ(c.opt_method, OptMethod::kEvolutionary);
  EXPECT_EQ(c.max_iters, 7);
}

TEST(Config, RejectsBadInput) {
  EXPECT_THROW(parse("[robot]\nlink_lengths = 0.5, 0.5\nmass = 1\n"), std::invalid_argument);
  EXPECT_THROW(parse("[bench]\nmethods = nominal, magic\n"), std::invalid_argument);
  EXPECT_THROW(parse("[bench]\nmoment_route = guess\n"), std::invalid_argument);
  EXPECT_THROW(parse("[task]\nstart = 0.5\n"), std::invalid_argument);
  EXPECT_THROW(parse("[sim]\nstep = -1\n"), std::invalid_argument);
  EXPECT_THROW(parse("[sim]\nstep = fast\n"), std::invalid_argument);
  EXPECT_THROW(parse("[bench]\nseed = -\n"), std::invalid_argument);
  EXPECT_THROW(parse("[gains]\nrls_project = maybe\n"), std::invalid_argument);
  EXPECT_THROW(load_config(std::string("/nonexistent/dualref.ini")), std::invalid_argument);
}

TEST(Config, ShippedConfigsLoad) {
  for (const char* name : {"bench.ini", "smoke.ini"}) {
    const ExperimentConfig c = load_config(std::string(DUALREF_CONFIG_DIR) + "/" + name);
    EXPECT_NO_THROW(make_problem(c, ControllerKind::kNac)) << name;
  }
}

TEST(Payloads, SamplesAreConsistentAndSeeded) {
  const ExperimentConfig c;
  const Vec4 mean = nominal_payload(c);
  const Mat4 cov = payload_prior_covariance(c);
  const auto a = sample_payloads(mean, cov, 200, 5);
  const auto b = sample_payloads(mean, cov, 200, 5);
  const auto other = sample_payloads(mean, cov, 200, 6);
  ASSERT_EQ(a.size(), 200u);
  for (std::size_t k = 0; k < a.size(); ++k) {
    EXPECT_TRUE(BodyParams::from_vector(a[k]).is_consistent());
    EXPECT_EQ(a[k], b[k]);
  }
  EXPECT_NE(a[0], other[0]);

  // With a tight prior rejection never triggers and the draws are plain Gaussian.
  ExperimentConfig tight_cfg;
  tight_cfg.relative_std = 0.02;
  const Mat4 tight = payload_prior_covariance(tight_cfg);
  const auto g = sample_payloads(mean, tight, 400, 7);
  Vec4 sum = Vec4::Zero();
  for (const Vec4& x : g) sum += x;
  const Vec4 avg = sum / 400.0;
  for (int i = 0; i < 4; ++i) {
    EXPECT_LT(std::abs(avg(i) - mean(i)), 3.0 * std::sqrt(tight(i, i) / 400.0)) << i;
  }
  EXPECT_TRUE(sample_payloads(mean, cov, 0, 1).empty());
  EXPECT_THROW(sample_payloads(mean, cov, -1, 1), std::invalid_argument);
}

TEST(Payloads, RelativeErrors) {
  const BodyParams truth = BodyParams::from_com(2.0, 0.04, 0.04, 0.01);
  BodyParams est = truth;
  est.mass *= 1.1;
  est.hx *= 1.1;  // same centre of mass
  const Vec4 e = relative_errors(est.to_vector(), truth.to_vector());
  EXPECT_NEAR(e(0), 0.1, 1e-12);
  EXPECT_NEAR(e(1), 0.0, 1e-12);
  EXPECT_NEAR(e(2), 0.1 / 1.1, 1e-12);
  EXPECT_NEAR(e(3), 0.0, 1e-12);
}

TEST(Summary, QuartilesAndImprovement) {
  std::vector<ResultRow> rows;
  for (int k = 0; k < 5; ++k) {
    ResultRow r;
    r.method = Method::kOl;
    r.controller = ControllerKind::kNac;
    r.sample = k;
    r.final_pose_error = 1.0 + k;
    r.err_initial = Vec4::Constant(0.2);
    r.err_final = Vec4::Constant(0.05 * (k + 1));
    rows.push_back(r);
  }
  rows[4].diverged = true;
  rows[4].final_pose_error = std::numeric_limits<double>::infinity();
  ResultRow other;
  other.method = Method::kNominal;
  rows.push_back(other);

  const auto s = summarize(rows);
  ASSERT_EQ(s.size(), 2u);
  const SummaryRow& ol = s[0].method == Method::kOl ? s[0] : s[1];
  EXPECT_EQ(ol.n, 5);
  EXPECT_EQ(ol.n_diverged, 1);
  EXPECT_DOUBLE_EQ(ol.pose_median, 3.0);
  EXPECT_DOUBLE_EQ(ol.pose_q1, 2.0);
  EXPECT_NEAR(ol.mean(0), 0.125, 1e-15);
  EXPECT_NEAR(ol.improvement(0), 100.0 * (1.0 - 0.125 / 0.2), 1e-12);
  EXPECT_NEAR(ol.sd(0), std::sqrt((0.075 * 0.075 + 0.025 * 0.025) * 2.0 / 3.0), 1e-12);
  EXPECT_DOUBLE_EQ(quantile({1.0, 2.0}, 0.5), 1.5);
}

TEST(Seeds, MixingSeparatesStreams) {
  EXPECT_EQ(detail::mix_seed(1, 2), detail::mix_seed(1, 2));
  EXPECT_NE(detail::mix_seed(1, 2), detail::mix_seed(2, 1));
  EXPECT_NE(detail::mix_seed(1, 0), detail::mix_seed(1, 1));
}

TEST(Experiment, TinyGridRunsAndWrites) {
  ExperimentConfig c;
  c.spline.duration = 0.4;
  c.step = 5e-3;
  c.n_payload_samples = 2;
  c.methods = {Method::kNominal, Method::kFim};
  c.controllers = {ControllerKind::kCtcRls};
  c.max_iters = 1;
  const ExperimentResult r = run_experiment(c);
  EXPECT_EQ(r.rows.size(), 4u);
  EXPECT_EQ(r.trajectories.size(), 2u);
  std::ostringstream a, b;
  write_rows_csv(r.rows, a);
  write_rows_csv(run_experiment(c).rows, b);
  EXPECT_EQ(a.str(), b.str());
}

}  // namespace
}  // namespace dualref
