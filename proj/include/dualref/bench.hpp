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

// Benchmark harness: payload sampling, reference generation for each method,
// the method x controller x payload grid and its CSV reports.
//
// Configuration is an INI file; every key is optional and falls back to the
// default in ExperimentConfig. See configs/bench.ini for the full schema.

#include <algorithm>
#include <chrono>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <map>
#include <optional>
#include <random>
#include <sstream>
#include <string>
#include <vector>

#include <boost/property_tree/ini_parser.hpp>
#include <boost/property_tree/ptree.hpp>

#include "dualref/objective.hpp"

namespace dualref {

enum class Method { kNominal, kFim, kRo, kOl };

inline std::string to_string(Method m) {
  switch (m) {
    case Method::kNominal: return "nominal";
    case Method::kFim: return "fim";
    case Method::kRo: return "ro";
    case Method::kOl: return "ol";
  }
  return "?";
}

inline Method method_from_string(const std::string& s) {
  if (s == "nominal") return Method::kNominal;
  if (s == "fim") return Method::kFim;
  if (s == "ro") return Method::kRo;
  if (s == "ol") return Method::kOl;
  throw std::invalid_argument("unknown method '" + s + "'");
}

struct LinkSpec {
  double length = 0.5;
  double mass = 1.0;
  double com_x = 0.25;
  double com_y = 0.0;
  double inertia_com = 0.02;
  double damping = 0.0;
};

struct ExperimentConfig {
  // plant
  std::vector<LinkSpec> links{{0.5, 3.0, 0.25, 0.0, 0.0625, 0.0}, {0.5, 2.0, 0.25, 0.0, 0.0417, 0.0}};
  Vec2 gravity = Vec2::Zero();
  // task: end-effector start and target, elbow branch of the inverse kinematics
  Vec2 start{0.66, 0.61};
  Vec2 target{-0.03, 0.95};
  double elbow = 1.0;
  // reference
  SplineConfig spline{5, 6, 2.0, false};
  // simulation
  double step = 2e-3;
  double torque_noise_std = 0.1;  // per joint, benchmark rollouts only
  int rls_update_every = 1;
  // gains
  double K = 20.0, Lambda = 10.0, Kp = 100.0, Kd = 20.0;
  double gamma = 1.0;
  double Gamma = 1.0;
  double rls_noise_std = 0.1;
  RlsMode rls_mode = RlsMode::kCovariance;
  double rls_fixed_gain = 1e-3;
  bool rls_project = true;
  // cost
  double w_position = 1e3, w_velocity = 1.0, w_torque = 1e-4, w_limit = 0.0;
  double q_limit = 3.0;  // symmetric joint limits, also the box on control points
  // payload prior
  double payload_mass = 2.0;
  double payload_com_x = 0.04;
  double payload_com_y = 0.04;
  double payload_inertia_com = 2.0 * (0.1 * 0.1 + 0.1 * 0.1) / 12.0;  // 10 cm cube
  double relative_std = 0.5;
  int n_payload_samples = 20;
  // methods
  std::vector<Method> methods{Method::kNominal, Method::kFim, Method::kRo, Method::kOl};
  std::vector<ControllerKind> controllers{ControllerKind::kNac, ControllerKind::kCtcRls,
                                          ControllerKind::kCtcFixed};
  GmmStrategy gmm_strategy = GmmStrategy::kSigma;
  int gmm_components = 9;
  MomentRoute moment_route = MomentRoute::kSensitivity;
  double fim_weight = 1e-3;
  double fi_noise_std = 0.1;
  SigmaThetaSource sigma_source = SigmaThetaSource::kPosterior;
  double hessian_step = 1e-4;
  // optimizer
  OptMethod opt_method = OptMethod::kBfgs;
  int max_iters = 8;
  double rel_tol = 1e-6;
  double fd_step = 1e-6;
  int population = 16;
  double sigma0 = 0.1;
  // bookkeeping
  std::uint64_t seed = 1;
  std::string out_dir = "out";

  int n_links() const { return static_cast<int>(links.size()); }

  void validate() const {
    if (links.empty() || n_links() > kMaxLinks) throw std::invalid_argument("config: 1..6 links required");
    if (!(step > 0.0) || !(step < spline.duration)) {
      throw std::invalid_argument("config: step must lie in (0, duration)");
    }
    if (n_payload_samples < 1) throw std::invalid_argument("config: n_payload_samples must be >= 1");
    if (!(relative_std > 0.0)) throw std::invalid_argument("config: relative_std must be positive");
    if (methods.empty() || controllers.empty()) throw std::invalid_argument("config: empty method or controller set");
    double reach = 0.0;
    for (const auto& l : links) reach += l.length;
    for (const Vec2& p : {start, target}) {
      if (!(p.norm() < reach)) throw std::invalid_argument("config: task point outside the workspace");
    }
    if (!(torque_noise_std >= 0.0) || !(rls_noise_std > 0.0) || !(fi_noise_std > 0.0)) {
      throw std::invalid_argument("config: noise levels must be positive");
    }
    if (!(payload_mass > 0.0) || !(payload_inertia_com > 0.0)) {
      throw std::invalid_argument("config: nominal payload must be physical");
    }
    spline.validate();
  }
};

namespace detail {

inline std::vector<double> parse_list(const std::string& s) {
  std::vector<double> out;
  std::string tok;
  std::stringstream ss(s);
  while (std::getline(ss, tok, ',')) {
    std::stringstream ts(tok);
    double v;
    if (!(ts >> v)) throw std::invalid_argument("config: bad number '" + tok + "'");
    out.push_back(v);
  }
  return out;
}

inline std::vector<std::string> parse_words(const std::string& s) {
  std::vector<std::string> out;
  std::string tok;
  std::stringstream ss(s);
  while (std::getline(ss, tok, ',')) {
    tok.erase(0, tok.find_first_not_of(" \t"));
    tok.erase(tok.find_last_not_of(" \t") + 1);
    if (!tok.empty()) out.push_back(tok);
  }
  return out;
}

inline Vec2 parse_vec2(const std::string& s, const char* key) {
  const auto v = parse_list(s);
  if (v.size() != 2) throw std::invalid_argument(std::string("config: ") + key + " needs two values");
  return {v[0], v[1]};
}

}  // namespace detail

/// Reads an INI file on top of the defaults.
inline ExperimentConfig load_config(std::istream& is) {
  namespace pt = boost::property_tree;
  // The INI reader only knows whole-line comments; drop trailing ones here.
  std::stringstream clean;
  for (std::string line; std::getline(is, line);) {
    const auto pos = line.find_first_of(";#");
    if (pos != std::string::npos) line.erase(pos);
    clean << line << '\n';
  }
  pt::ptree tree;
  try {
    pt::read_ini(clean, tree);
  } catch (const pt::ini_parser_error& e) {
    throw std::invalid_argument(std::string("config: ") + e.what());
  }
  ExperimentConfig c;
  // A present but malformed value is an error, never a silent default.
  auto typed = [&]<class T>(const char* key, T& v) {
    if (!tree.get_child_optional(key)) return;
    try {
      v = tree.get<T>(key);
    } catch (const pt::ptree_bad_data&) {
      throw std::invalid_argument(std::string("config: bad value for ") + key);
    }
  };
  auto num = [&](const char* key, double& v) { typed(key, v); };
  auto integer = [&](const char* key, int& v) { typed(key, v); };

  if (auto l = tree.get_optional<std::string>("robot.link_lengths")) {
    const auto len = detail::parse_list(*l);
    c.links.resize(len.size());
    for (std::size_t i = 0; i < len.size(); ++i) c.links[i].length = len[i];
  }
  auto per_link = [&](const char* key, double LinkSpec::*field) {
    if (auto s = tree.get_optional<std::string>(key)) {
      const auto v = detail::parse_list(*s);
      if (v.size() != c.links.size()) throw std::invalid_argument(std::string("config: ") + key + " needs one value per link");
      for (std::size_t i = 0; i < v.size(); ++i) c.links[i].*field = v[i];
    }
  };
  per_link("robot.mass", &LinkSpec::mass);
  per_link("robot.com_x", &LinkSpec::com_x);
  per_link("robot.com_y", &LinkSpec::com_y);
  per_link("robot.inertia_com", &LinkSpec::inertia_com);
  per_link("robot.damping", &LinkSpec::damping);
  if (auto s = tree.get_optional<std::string>("robot.gravity")) c.gravity = detail::parse_vec2(*s, "robot.gravity");

  if (auto s = tree.get_optional<std::string>("task.start")) c.start = detail::parse_vec2(*s, "task.start");
  if (auto s = tree.get_optional<std::string>("task.target")) c.target = detail::parse_vec2(*s, "task.target");
  num("task.elbow", c.elbow);

  integer("reference.degree", c.spline.degree);
  integer("reference.n_control", c.spline.n_control);
  num("reference.duration", c.spline.duration);
  typed("reference.optimize_knots", c.spline.optimize_knots);

  num("sim.step", c.step);
  num("sim.torque_noise_std", c.torque_noise_std);
  integer("sim.rls_update_every", c.rls_update_every);

  num("gains.K", c.K);
  num("gains.Lambda", c.Lambda);
  num("gains.Kp", c.Kp);
  num("gains.Kd", c.Kd);
  num("gains.gamma", c.gamma);
  num("gains.Gamma", c.Gamma);
  num("gains.rls_noise_std", c.rls_noise_std);
  if (auto s = tree.get_optional<std::string>("gains.rls_mode")) {
    if (*s == "covariance") c.rls_mode = RlsMode::kCovariance;
    else if (*s == "fixed-gain") c.rls_mode = RlsMode::kFixedGain;
    else throw std::invalid_argument("config: gains.rls_mode must be covariance or fixed-gain");
  }
  num("gains.rls_fixed_gain", c.rls_fixed_gain);
  typed("gains.rls_project", c.rls_project);

  num("cost.w_position", c.w_position);
  num("cost.w_velocity", c.w_velocity);
  num("cost.w_torque", c.w_torque);
  num("cost.w_limit", c.w_limit);
  num("cost.q_limit", c.q_limit);

  num("payload.mass", c.payload_mass);
  num("payload.com_x", c.payload_com_x);
  num("payload.com_y", c.payload_com_y);
  num("payload.inertia_com", c.payload_inertia_com);
  num("payload.relative_std", c.relative_std);
  integer("payload.n_samples", c.n_payload_samples);

  if (auto s = tree.get_optional<std::string>("bench.methods")) {
    c.methods.clear();
    for (const auto& w : detail::parse_words(*s)) c.methods.push_back(method_from_string(w));
  }
  if (auto s = tree.get_optional<std::string>("bench.controllers")) {
    c.controllers.clear();
    for (const auto& w : detail::parse_words(*s)) c.controllers.push_back(controller_from_string(w));
  }
  if (auto s = tree.get_optional<std::string>("bench.gmm_strategy")) c.gmm_strategy = gmm_strategy_from_string(*s);
  integer("bench.gmm_components", c.gmm_components);
  if (auto s = tree.get_optional<std::string>("bench.moment_route")) {
    if (*s == "sensitivity") c.moment_route = MomentRoute::kSensitivity;
    else if (*s == "lyapunov") c.moment_route = MomentRoute::kLyapunov;
    else throw std::invalid_argument("config: bench.moment_route must be sensitivity or lyapunov");
  }
  num("bench.fim_weight", c.fim_weight);
  num("bench.fi_noise_std", c.fi_noise_std);
  if (auto s = tree.get_optional<std::string>("bench.sigma_theta")) {
    if (*s == "posterior") c.sigma_source = SigmaThetaSource::kPosterior;
    else if (*s == "propagated") c.sigma_source = SigmaThetaSource::kPropagated;
    else throw std::invalid_argument("config: bench.sigma_theta must be posterior or propagated");
  }
  num("bench.hessian_step", c.hessian_step);
  typed("bench.seed", c.seed);
  c.out_dir = tree.get<std::string>("bench.out_dir", c.out_dir);

  if (auto s = tree.get_optional<std::string>("optimizer.method")) c.opt_method = opt_method_from_string(*s);
  integer("optimizer.max_iters", c.max_iters);
  num("optimizer.rel_tol", c.rel_tol);
  num("optimizer.fd_step", c.fd_step);
  integer("optimizer.population", c.population);
  num("optimizer.sigma0", c.sigma0);

  c.validate();
  return c;
}

inline ExperimentConfig load_config(const std::string& path) {
  std::ifstream is(path);
  if (!is) throw std::invalid_argument("config: cannot open '" + path + "'");
  return load_config(is);
}

// ---------------------------------------------------------------------------

/// Damped least-squares inverse kinematics of the tip position.
inline Vec inverse_kinematics(const ManipulatorModel& model, const Vec2& target, Vec q) {
  require_size(q.size(), model.n_links(), "inverse_kinematics seed");
  double mu = 1e-3;
  for (int it = 0; it < 200; ++it) {
    const Vec2 r = target - ee_position(model, q);
    if (r.norm() < 1e-13) return q;
    const Mat J = ee_jacobian(model, q);
    const Mat A = J * J.transpose() + mu * Mat::Identity(2, 2);
    const Vec dq = J.transpose() * A.ldlt().solve(r);
    const Vec qn = q + dq;
    if ((target - ee_position(model, qn)).norm() < r.norm()) {
      q = qn;
      mu = std::max(mu * 0.3, 1e-12);
    } else {
      mu *= 10.0;
    }
  }
  if ((target - ee_position(model, q)).norm() > 1e-9) {
    throw NumericalError("inverse_kinematics: target not reached");
  }
  return q;
}

inline ManipulatorModel make_model(const ExperimentConfig& c) {
  ManipulatorModel m;
  std::vector<BodyParams> bodies;
  for (const auto& l : c.links) {
    m.link_lengths.push_back(l.length);
    m.joint_damping.push_back(l.damping);
    bodies.push_back(BodyParams::from_com(l.mass, l.com_x, l.com_y, l.inertia_com));
  }
  m.robot_params = InertialParams(bodies);
  m.gravity = c.gravity;
  m.validate();
  return m;
}

inline Vec4 nominal_payload(const ExperimentConfig& c) {
  return BodyParams::from_com(c.payload_mass, c.payload_com_x, c.payload_com_y, c.payload_inertia_com)
      .to_vector();
}

/// Diagonal prior with standard deviation relative_std * |nominal|.
inline Mat4 payload_prior_covariance(const ExperimentConfig& c) {
  const Vec4 sd = c.relative_std * nominal_payload(c).cwiseAbs();
  return sd.cwiseAbs2().asDiagonal();
}

/// The manipulator problem for one controller.
inline ManipulatorProblem make_problem(const ExperimentConfig& c, ControllerKind controller) {
  ManipulatorProblem p;
  p.model = make_model(c);
  const int n = c.n_links();
  Vec seed = Vec::Zero(n);
  if (n > 1) seed(1) = c.elbow;
  p.boundary.q0 = inverse_kinematics(p.model, c.start, seed);
  p.boundary.qT = inverse_kinematics(p.model, c.target, p.boundary.q0);
  p.spline = c.spline;
  p.gains = ControllerGains::defaults(n);
  p.gains.K.setConstant(c.K);
  p.gains.Lambda.setConstant(c.Lambda);
  p.gains.Kp.setConstant(c.Kp);
  p.gains.Kd.setConstant(c.Kd);
  p.gains.gamma = c.gamma;
  p.gains.Gamma = c.Gamma * Mat4::Identity();
  p.gains.rls_prior_covariance = payload_prior_covariance(c);
  p.gains.rls_noise_covariance = c.rls_noise_std * c.rls_noise_std * Mat::Identity(n, n);
  p.gains.rls_mode = c.rls_mode;
  p.gains.rls_fixed_gain = c.rls_fixed_gain;
  p.gains.rls_project = c.rls_project;
  p.sim.step = c.step;
  p.sim.controller = controller;
  p.sim.adaptation = controller != ControllerKind::kCtcFixed;
  p.sim.rls_update_every = c.rls_update_every;
  p.cost.terminal = TerminalSpace::kCartesian;
  p.cost.target_position = c.target;
  p.cost.w_position = c.w_position;
  p.cost.w_velocity = c.w_velocity;
  p.cost.w_torque = c.w_torque;
  p.cost.w_limit = c.w_limit;
  p.cost.q_min = Vec::Constant(n, -c.q_limit);
  p.cost.q_max = Vec::Constant(n, c.q_limit);
  p.prior_mean = nominal_payload(c);
  p.fi_noise = c.fi_noise_std * c.fi_noise_std * Mat::Identity(n, n);
  p.moments.route = c.moment_route;
  p.sigma_source = c.sigma_source;
  return p;
}

inline OptimizerConfig make_optimizer_config(const ExperimentConfig& c, const ManipulatorProblem& p) {
  OptimizerConfig o;
  o.method = c.opt_method;
  o.max_iters = c.max_iters;
  o.rel_tol = c.rel_tol;
  o.fd = FdPolicy{c.fd_step};
  o.seed = c.seed + 1;
  o.population = c.population;
  o.sigma0 = c.sigma0;
  const int n = c.n_links();
  const int nd = p.design_dim();
  o.lower = Vec::Constant(nd, -c.q_limit);
  o.upper = Vec::Constant(nd, c.q_limit);
  const int n_cp = (c.spline.n_control - 2) * n;
  for (int i = n_cp; i < nd; ++i) {
    o.lower(i) = 1e-3;
    o.upper(i) = 1.0 - 1e-3;
  }
  return o;
}

/// Gaussian draws from the prior, redrawn until physically consistent.
inline std::vector<Vec4> sample_payloads(const Vec4& mean, const Mat4& cov, int n, std::uint64_t seed) {
  if (n < 0) throw std::invalid_argument("sample_payloads: n must be >= 0");
  Mat4 L = Mat4::Zero();
  if (cov.cwiseAbs().maxCoeff() > 0.0) {
    Eigen::LLT<Mat4> llt(symmetrized(cov));
    if (llt.info() != Eigen::Success) throw NumericalError("sample_payloads: prior covariance is not PD");
    L = llt.matrixL();
  }
  if (!BodyParams::from_vector(mean).is_consistent()) {
    throw std::invalid_argument("sample_payloads: prior mean is not physically consistent");
  }
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> normal(0.0, 1.0);
  std::vector<Vec4> out;
  long long draws = 0;
  while (static_cast<int>(out.size()) < n) {
    Vec4 z;
    for (int i = 0; i < 4; ++i) z(i) = normal(rng);
    const Vec4 x = mean + L * z;
    ++draws;
    if (BodyParams::from_vector(x).is_consistent()) {
      out.push_back(x);
    } else if (draws > 1000 && static_cast<double>(out.size()) < 0.01 * static_cast<double>(draws)) {
      throw std::invalid_argument("sample_payloads: rejection rate above 99%, check the prior");
    }
  }
  return out;
}

// ---------------------------------------------------------------------------

/// One generated reference. Nominal and FIM references are shared by every
/// controller (controller field "all"); RO and OL are generated per closed loop.
struct GeneratedTrajectory {
  Method method = Method::kNominal;
  std::string controller = "all";
  Vec design;
  double objective = 0.0;
  bool converged = false;
  int iterations = 0;
  int evaluations = 0;
  double trace_fi = 0.0;  // tr I at the nominal payload
  double wall_time = 0.0;
  std::vector<TraceRow> trace;
};

struct ResultRow {
  Method method = Method::kNominal;
  ControllerKind controller = ControllerKind::kNac;
  int sample = 0;
  double final_pose_error = 0.0;
  Vec4 err_initial = Vec4::Zero();  // relative errors of (m, c_x, c_y, I) for the prior guess
  Vec4 err_final = Vec4::Zero();    // and for the final estimate
  bool diverged = false;
  double wall_time = 0.0;  // reported in timing.csv only

  Vec4 improvement() const {
    Vec4 out;
    for (int i = 0; i < 4; ++i) {
      out(i) = err_initial(i) > 0.0 ? 100.0 * (1.0 - err_final(i) / err_initial(i)) : 0.0;
    }
    return out;
  }
};

struct ExperimentResult {
  std::vector<GeneratedTrajectory> trajectories;
  std::vector<ResultRow> rows;
  std::vector<Vec4> payloads;
  ManipulatorProblem problem;  // controller-independent parts (model, boundary, spline, cost)
};

/// Relative errors of (m, c_x, c_y, I_zz about the frame origin).
inline Vec4 relative_errors(const Vec4& estimate, const Vec4& truth) {
  const BodyParams e = BodyParams::from_vector(estimate), t = BodyParams::from_vector(truth);
  const Vec4 ev(e.mass, e.hx / e.mass, e.hy / e.mass, e.inertia);
  const Vec4 tv(t.mass, t.com_x(), t.com_y(), t.inertia);
  Vec4 out;
  for (int i = 0; i < 4; ++i) {
    out(i) = std::abs(ev(i) - tv(i)) / std::max(std::abs(tv(i)), 1e-12);
  }
  return out;
}

namespace detail {

/// Wraps a design objective so that designs the spline rejects (e.g. knots
/// out of order) get the divergence cost instead of an exception.
template <class F>
auto guarded(F f, double horizon) {
  return [f = std::move(f), horizon](const Vec& d) {
    try {
      return f(d);
    } catch (const std::invalid_argument&) {
      return diverged_cost(0.0, horizon);
    }
  };
}

inline std::uint64_t mix_seed(std::uint64_t a, std::uint64_t b) {
  std::uint64_t z = a + 0x9e3779b97f4a7c15ull * (b + 1);
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ull;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebull;
  return z ^ (z >> 31);
}

inline double seconds_since(std::chrono::steady_clock::time_point t0) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

}  // namespace detail

/// Generates the reference of one method for one controller's closed loop.
/// `nominal_design` is the nominal optimum, the anchor of the optimality-loss
/// model (ignored by the other methods).
inline GeneratedTrajectory generate_trajectory(const ExperimentConfig& c, Method method,
                                               ControllerKind controller,
                                               const Vec* nominal_design = nullptr) {
  const auto t0 = std::chrono::steady_clock::now();
  const ManipulatorProblem p = make_problem(c, controller);
  const OptimizerConfig opt = make_optimizer_config(c, p);
  const double T = p.spline.duration;
  const Vec d0 = p.straight_line();
  GeneratedTrajectory g;
  g.method = method;
  g.controller = (method == Method::kNominal || method == Method::kFim) ? "all" : to_string(controller);
  OptimizeResult r;
  switch (method) {
    case Method::kNominal:
      r = optimize(detail::guarded([&](const Vec& d) { return nominal_objective(d, p); }, T), d0, opt);
      break;
    case Method::kFim:
      r = optimize(detail::guarded([&](const Vec& d) { return j_fim(d, p.prior_mean, c.fim_weight, p); }, T),
                   d0, opt);
      break;
    case Method::kRo: {
      const GaussianMixture gmm =
          build_gmm(p.prior_mean, payload_prior_covariance(c), c.gmm_components, c.gmm_strategy);
      r = optimize(detail::guarded([&](const Vec& d) { return j_dual1(d, gmm, p).value; }, T), d0, opt);
      break;
    }
    case Method::kOl: {
      const GaussianMixture gmm =
          build_gmm(p.prior_mean, payload_prior_covariance(c), c.gmm_components, c.gmm_strategy);
      auto J = [&p](const Vec& d, const Vec& th) { return p.task(d, th); };
      OptimalityLossModel olm;
      if (nominal_design) {
        olm = optimality_loss_at(J, Vec(p.prior_mean), *nominal_design, FdPolicy{c.hessian_step});
      } else {
        olm = optimality_loss_model(p, p.prior_mean, d0, opt, FdPolicy{c.hessian_step});
      }
      r = optimize(detail::guarded([&](const Vec& d) { return j_dual2(d, gmm, olm, p).value; }, T),
                   d0, opt);
      break;
    }
  }
  g.design = r.d;
  g.objective = r.value;
  g.converged = r.converged;
  g.iterations = r.iterations;
  g.evaluations = r.evaluations;
  g.trace = r.trace;
  // Information content at the nominal payload, with the shared fixed loop.
  const ManipulatorProblem pf = make_problem(c, ControllerKind::kCtcFixed);
  const RolloutLog log = pf.rollout(g.design, pf.prior_mean, true);
  g.trace_fi = log.diverged ? 0.0 : fisher_information(log, pf.fi_noise).I.trace();
  g.wall_time = detail::seconds_since(t0);
  return g;
}

/// Evaluates one reference on one controller and payload sample.
inline ResultRow evaluate_cell(const ExperimentConfig& c, const GeneratedTrajectory& traj,
                               ControllerKind controller, int sample, const Vec4& truth) {
  const auto t0 = std::chrono::steady_clock::now();
  const ManipulatorProblem p = make_problem(c, controller);
  SimConfig sim = p.sim;
  const int n = c.n_links();
  if (c.torque_noise_std > 0.0) sim.torque_noise_cov = c.torque_noise_std * c.torque_noise_std * Mat::Identity(n, n);
  sim.seed = detail::mix_seed(c.seed, static_cast<std::uint64_t>(sample) * 64 +
                                          static_cast<std::uint64_t>(controller) * 8 +
                                          static_cast<std::uint64_t>(traj.method));
  sim.record_regressor = false;
  const ManipulatorClosedLoop loop(p.model, p.reference(traj.design), p.gains, sim, p.prior_mean);
  const RolloutLog log = loop.rollout(truth);
  ResultRow row;
  row.method = traj.method;
  row.controller = controller;
  row.sample = sample;
  row.diverged = log.diverged;
  row.final_pose_error = log.diverged ? std::numeric_limits<double>::infinity()
                                      : final_pose_error(p.model, log, p.cost.target_position);
  row.err_initial = relative_errors(p.prior_mean, truth);
  const Vec4 est = log.samples() > 0 ? Vec4(log.theta_hat.row(log.samples() - 1).transpose()) : p.prior_mean;
  row.err_final = log.diverged ? Vec4::Constant(std::numeric_limits<double>::quiet_NaN())
                               : relative_errors(est, truth);
  row.wall_time = detail::seconds_since(t0);
  return row;
}

/// Runs the full grid: references per method, then every (method,
/// controller, payload) cell. Rows are ordered by (method, controller, sample).
inline ExperimentResult run_experiment(const ExperimentConfig& c) {
  c.validate();
  ExperimentResult res;
  res.problem = make_problem(c, c.controllers.front());
  res.payloads = sample_payloads(nominal_payload(c), payload_prior_covariance(c), c.n_payload_samples, c.seed);

  std::map<std::pair<Method, std::string>, std::size_t> index;
  auto has = [&](Method m) { return std::find(c.methods.begin(), c.methods.end(), m) != c.methods.end(); };
  std::optional<Vec> nominal;
  // The nominal optimum anchors the optimality-loss model, so it is produced
  // first whenever either is requested.
  if (has(Method::kNominal) || has(Method::kOl)) {
    GeneratedTrajectory g = generate_trajectory(c, Method::kNominal, ControllerKind::kCtcFixed);
    nominal = g.design;
    if (has(Method::kNominal)) {
      index[{Method::kNominal, "all"}] = res.trajectories.size();
      res.trajectories.push_back(std::move(g));
    }
  }
  if (has(Method::kFim)) {
    index[{Method::kFim, "all"}] = res.trajectories.size();
    res.trajectories.push_back(generate_trajectory(c, Method::kFim, ControllerKind::kCtcFixed));
  }
  for (Method m : {Method::kRo, Method::kOl}) {
    if (!has(m)) continue;
    for (ControllerKind k : c.controllers) {
      index[{m, to_string(k)}] = res.trajectories.size();
      res.trajectories.push_back(generate_trajectory(c, m, k, nominal ? &*nominal : nullptr));
    }
  }

  for (Method m : c.methods) {
    for (ControllerKind k : c.controllers) {
      auto it = index.find({m, "all"});
      if (it == index.end()) it = index.find({m, to_string(k)});
      const GeneratedTrajectory& traj = res.trajectories[it->second];
      for (int s = 0; s < c.n_payload_samples; ++s) {
        res.rows.push_back(evaluate_cell(c, traj, k, s, res.payloads[static_cast<std::size_t>(s)]));
      }
    }
  }
  std::stable_sort(res.rows.begin(), res.rows.end(), [](const ResultRow& a, const ResultRow& b) {
    return std::tie(a.method, a.controller, a.sample) < std::tie(b.method, b.controller, b.sample);
  });
  return res;
}

// ---------------------------------------------------------------------------
// Reports

inline const char* const kRowsHeader =
    "method,controller,sample,final_pose_error,diverged,"
    "err0_m,err0_cx,err0_cy,err0_I,err_m,err_cx,err_cy,err_I,imp_m,imp_cx,imp_cy,imp_I";

inline void write_rows_csv(const std::vector<ResultRow>& rows, std::ostream& os) {
  os << kRowsHeader << '\n' << std::setprecision(17);
  for (const auto& r : rows) {
    os << to_string(r.method) << ',' << to_string(r.controller) << ',' << r.sample << ','
       << r.final_pose_error << ',' << (r.diverged ? 1 : 0);
    for (int i = 0; i < 4; ++i) os << ',' << r.err_initial(i);
    for (int i = 0; i < 4; ++i) os << ',' << r.err_final(i);
    const Vec4 imp = r.improvement();
    for (int i = 0; i < 4; ++i) os << ',' << imp(i);
    os << '\n';
  }
}

/// Linear-interpolation quantile of a sorted sample.
inline double quantile(const std::vector<double>& sorted, double p) {
  if (sorted.empty()) return std::numeric_limits<double>::quiet_NaN();
  const double pos = p * static_cast<double>(sorted.size() - 1);
  const auto lo = static_cast<std::size_t>(std::floor(pos));
  const auto hi = std::min(lo + 1, sorted.size() - 1);
  const double f = pos - static_cast<double>(lo);
  if (f == 0.0 || sorted[lo] == sorted[hi]) return sorted[lo];
  return sorted[lo] + f * (sorted[hi] - sorted[lo]);
}

struct SummaryRow {
  Method method;
  ControllerKind controller;
  int n = 0;
  int n_diverged = 0;
  double pose_q1 = 0.0, pose_median = 0.0, pose_q3 = 0.0;
  Vec4 mean = Vec4::Zero();   // mean relative error of the final estimate
  Vec4 sd = Vec4::Zero();     // sample standard deviation (0 for one row)
  Vec4 improvement = Vec4::Zero();  // 100 (1 - mean final / mean initial)
};

/// Aggregates per (method, controller). Pose-error quartiles use every row
/// (diverged rows count as infinite error); parameter statistics use the
/// rows that did not diverge.
inline std::vector<SummaryRow> summarize(const std::vector<ResultRow>& rows) {
  std::map<std::pair<Method, ControllerKind>, std::vector<const ResultRow*>> groups;
  for (const auto& r : rows) groups[{r.method, r.controller}].push_back(&r);
  std::vector<SummaryRow> out;
  for (const auto& [key, g] : groups) {
    SummaryRow s;
    s.method = key.first;
    s.controller = key.second;
    s.n = static_cast<int>(g.size());
    std::vector<double> pose;
    Vec4 sum = Vec4::Zero(), sum0 = Vec4::Zero();
    int ok = 0;
    for (const ResultRow* r : g) {
      pose.push_back(r->final_pose_error);
      if (r->diverged) {
        ++s.n_diverged;
        continue;
      }
      ++ok;
      sum += r->err_final;
      sum0 += r->err_initial;
    }
    std::sort(pose.begin(), pose.end());
    s.pose_q1 = quantile(pose, 0.25);
    s.pose_median = quantile(pose, 0.5);
    s.pose_q3 = quantile(pose, 0.75);
    if (ok > 0) {
      s.mean = sum / ok;
      const Vec4 mean0 = sum0 / ok;
      Vec4 ss = Vec4::Zero();
      for (const ResultRow* r : g) {
        if (!r->diverged) ss += (r->err_final - s.mean).cwiseAbs2();
      }
      s.sd = ok > 1 ? Vec4((ss / (ok - 1)).cwiseSqrt()) : Vec4::Zero();
      for (int i = 0; i < 4; ++i) {
        s.improvement(i) = mean0(i) > 0.0 ? 100.0 * (1.0 - s.mean(i) / mean0(i)) : 0.0;
      }
    } else {
      s.mean = s.sd = s.improvement = Vec4::Constant(std::numeric_limits<double>::quiet_NaN());
    }
    out.push_back(s);
  }
  return out;
}

inline void write_summary_csv(const std::vector<SummaryRow>& summary, std::ostream& os) {
  os << "method,controller,n,n_diverged,pose_q1,pose_median,pose_q3,"
        "mu_m,mu_cx,mu_cy,mu_I,sd_m,sd_cx,sd_cy,sd_I,imp_m,imp_cx,imp_cy,imp_I\n"
     << std::setprecision(17);
  for (const auto& s : summary) {
    os << to_string(s.method) << ',' << to_string(s.controller) << ',' << s.n << ',' << s.n_diverged << ','
       << s.pose_q1 << ',' << s.pose_median << ',' << s.pose_q3;
    for (const Vec4* v : {&s.mean, &s.sd, &s.improvement}) {
      for (int i = 0; i < 4; ++i) os << ',' << (*v)(i);
    }
    os << '\n';
  }
}

inline void write_designs_csv(const std::vector<GeneratedTrajectory>& trajs, std::ostream& os) {
  os << "method,controller,objective,trace_fi,converged,iterations,evaluations,design\n"
     << std::setprecision(17);
  for (const auto& t : trajs) {
    os << to_string(t.method) << ',' << t.controller << ',' << t.objective << ',' << t.trace_fi << ','
       << (t.converged ? 1 : 0) << ',' << t.iterations << ',' << t.evaluations << ',';
    for (Eigen::Index i = 0; i < t.design.size(); ++i) os << (i ? " " : "") << t.design(i);
    os << '\n';
  }
}

inline std::string trajectory_stem(const GeneratedTrajectory& t) {
  return t.controller == "all" ? to_string(t.method) : to_string(t.method) + "_" + t.controller;
}

/// rows.csv, summary.csv, designs.csv, one sampled reference and one spline
/// file per generated trajectory, optimizer traces, and timing.csv (the only
/// file that depends on wall-clock time).
inline void write_results(const ExperimentResult& res, const std::string& out_dir) {
  if (res.rows.empty()) throw std::invalid_argument("write_results: no rows");
  namespace fs = std::filesystem;
  std::error_code ec;
  fs::create_directories(out_dir, ec);
  auto open = [&](const std::string& name) {
    std::ofstream os(fs::path(out_dir) / name);
    if (!os) throw std::runtime_error("write_results: cannot write '" + (fs::path(out_dir) / name).string() + "'");
    return os;
  };
  {
    auto os = open("rows.csv");
    write_rows_csv(res.rows, os);
  }
  {
    auto os = open("summary.csv");
    write_summary_csv(summarize(res.rows), os);
  }
  {
    auto os = open("designs.csv");
    write_designs_csv(res.trajectories, os);
  }
  for (const auto& t : res.trajectories) {
    const BSplineTrajectory traj = make_spline(res.problem.boundary, t.design, res.problem.spline);
    {
      auto os = open("trajectory_" + trajectory_stem(t) + ".csv");
      write_reference_csv(traj, os);
    }
    {
      auto os = open("trajectory_" + trajectory_stem(t) + ".spline");
      write_spline(traj, os);
    }
    {
      auto os = open("trace_" + trajectory_stem(t) + ".csv");
      write_trace_csv(t.trace, os);
    }
  }
  auto os = open("timing.csv");
  os << "kind,method,controller,sample,wall_time\n" << std::setprecision(6);
  for (const auto& t : res.trajectories) {
    os << "generate," << to_string(t.method) << ',' << t.controller << ",," << t.wall_time << '\n';
  }
  for (const auto& r : res.rows) {
    os << "evaluate," << to_string(r.method) << ',' << to_string(r.controller) << ',' << r.sample << ','
       << r.wall_time << '\n';
  }
}

}  // namespace dualref
