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

// Closed-loop simulation of plant (true payload), policy (estimated payload)
// and adaptation law, integrated with fixed-step RK4.

#include <cstdint>
#include <memory>
#include <ostream>
#include <random>

#include "dualref/control.hpp"
#include "dualref/system.hpp"

namespace dualref {

struct SimConfig {
  double duration = 0.0;  // <= 0 means the reference duration
  double step = 1e-3;
  ControllerKind controller = ControllerKind::kNac;
  bool adaptation = true;
  Mat torque_noise_cov;   // noise on the estimator's residual channel; empty = none
  std::uint64_t seed = 0;
  int rls_update_every = 1;
  bool record_regressor = true;
  double divergence_limit = kDivergenceLimit;
};

/// Time-sampled closed-loop record. Rows are samples.
struct RolloutLog {
  std::vector<double> t;
  Mat q, dq, ddq, tau;
  Mat q_d, dq_d, ddq_d;
  Mat theta_hat;  // payload estimate, samples x 4
  Mat s;          // sliding variable
  Mat estimator;  // raw estimator coordinates (NAC: upper triangle of Theta)
  std::vector<PayloadRegressor> Yl;  // Y_l(q, dq, ddq), when recorded
  bool diverged = false;
  double divergence_time = 0.0;
  double duration = 0.0;  // configured horizon
  Mat4 P_final = Mat4::Zero();

  int samples() const { return static_cast<int>(t.size()); }
  int n_joints() const { return static_cast<int>(q.cols()); }
};

namespace detail {

inline constexpr int kNacCoords = 6;

inline Vec pack_symmetric(const Mat3& S) {
  Vec v(kNacCoords);
  v << S(0, 0), S(0, 1), S(0, 2), S(1, 1), S(1, 2), S(2, 2);
  return v;
}

inline Mat3 unpack_symmetric(const Eigen::Ref<const Vec>& v) {
  Mat3 S;
  S << v(0), v(1), v(2),
       v(1), v(3), v(4),
       v(2), v(4), v(5);
  return S;
}

}  // namespace detail

/// The closed loop of plant, controller and adaptation law for one reference.
///
/// The uncertain parameter is the true payload block; the controller starts
/// from a fixed prior estimate. Instances are immutable and may be shared by
/// concurrent rollouts.
class ManipulatorClosedLoop {
 public:
  ManipulatorClosedLoop(ManipulatorModel model,
                        std::shared_ptr<const BSplineTrajectory> reference,
                        ControllerGains gains, SimConfig cfg,
                        const Vec4& theta_hat0)
      : model_(std::move(model)),
        ref_(std::move(reference)),
        gains_(std::move(gains)),
        cfg_(std::move(cfg)),
        theta_hat0_(theta_hat0) {
    model_.validate();
    if (!ref_) throw std::invalid_argument("ManipulatorClosedLoop: null reference");
    require_size(ref_->n_joints(), model_.n_links(), "reference joints");
    gains_.validate(model_.n_links());
    grid_ = TimeGrid::from_duration(
        cfg_.duration > 0.0 ? cfg_.duration : ref_->duration(), cfg_.step);
    if (cfg_.rls_update_every < 1) throw std::invalid_argument("SimConfig: rls_update_every >= 1");
    if (uses_nac()) pseudo_inertia(theta_hat0_);  // validates the prior
    robot_only_ = full_params(model_, Vec4::Zero());
    if (cfg_.torque_noise_cov.size() > 0) {
      require_size(cfg_.torque_noise_cov.rows(), model_.n_links(), "torque noise covariance");
      if (cfg_.torque_noise_cov.norm() > 0.0) {
        Eigen::LLT<Mat> llt(cfg_.torque_noise_cov);
        if (llt.info() != Eigen::Success) {
          throw std::invalid_argument("SimConfig: torque noise covariance must be PD");
        }
        noise_chol_ = llt.matrixL();
      }
    }
  }

  const ManipulatorModel& model() const { return model_; }
  const BSplineTrajectory& reference() const { return *ref_; }
  const ControllerGains& gains() const { return gains_; }
  const SimConfig& config() const { return cfg_; }
  const Vec4& prior_estimate() const { return theta_hat0_; }

  // ClosedLoopModel interface --------------------------------------------

  int n() const { return model_.n_links(); }
  int estimator_dim() const { return uses_nac() ? detail::kNacCoords : kBodyParams; }
  int state_dim() const { return 2 * n() + estimator_dim(); }
  int param_dim() const { return kBodyParams; }
  int input_dim() const { return n(); }
  TimeGrid grid() const { return grid_; }
  bool is_continuous() const {
    return !(cfg_.controller == ControllerKind::kCtcRls && cfg_.adaptation);
  }

  Vec initial_state() const {
    const ReferenceSample r0 = ref_->eval(0.0);
    Vec xi(state_dim());
    xi.head(n()) = r0.q;
    xi.segment(n(), n()) = r0.dq;
    xi.tail(estimator_dim()) = uses_nac()
                                   ? detail::pack_symmetric(pseudo_inertia(theta_hat0_))
                                   : Vec(theta_hat0_);
    return xi;
  }

  Vec4 estimate(const Eigen::Ref<const Vec>& xi) const {
    const auto est = xi.tail(estimator_dim());
    if (uses_nac()) return params_from_pseudo_inertia(detail::unpack_symmetric(est));
    return est;
  }

  /// Linear map from xi to the payload estimate (4 x state_dim).
  Mat estimate_map() const {
    Mat E = Mat::Zero(kBodyParams, state_dim());
    const int o = 2 * n();
    if (uses_nac()) {
      E(0, o + 0) = 1.0;
      E(1, o + 1) = 1.0;
      E(2, o + 2) = 1.0;
      E(3, o + 3) = 1.0;
      E(3, o + 5) = 1.0;
    } else {
      E.block(0, o, kBodyParams, kBodyParams).setIdentity();
    }
    return E;
  }

  Vec derivative(double t, const Vec& xi, const Vec& theta) const {
    return evaluate(t, xi, theta, true).xi_dot;
  }

  Vec input(double t, const Vec& xi, const Vec& theta) const {
    return Vec(evaluate(t, xi, theta, false).tau);
  }

  SystemTrajectory simulate(const Vec& theta) const {
    const RolloutLog log = run(theta, false);
    SystemTrajectory out;
    out.t = log.t;
    out.xi.resize(log.samples(), state_dim());
    out.xi << log.q, log.dq, log.estimator;
    out.u = log.tau;
    out.diverged = log.diverged;
    out.fail_time = log.divergence_time;
    return out;
  }

  // ----------------------------------------------------------------------

  struct Stage {
    ReferenceSample ref;
    JointVec tau;
    JointVec ddq;
    SlidingTerms sliding;
    Vec xi_dot;
    // Measurement-side quantities at the actual acceleration.
    PayloadRegressor Yl;
    JointVec robot_torque;  // Y_r theta_r + D dq
  };

  Stage evaluate(double t, const Vec& xi, const Vec& theta_true,
                 bool need_rates, bool need_measurement = false) const {
    require_size(xi.size(), state_dim(), "closed-loop state");
    require_size(theta_true.size(), kBodyParams, "true payload");
    const int nj = n();
    Stage st;
    st.ref = reference_at(t);
    JointState js{xi.head(nj), xi.segment(nj, nj)};
    if (!js.q.allFinite() || !js.dq.allFinite()) throw NumericalError("closed loop: non-finite state");
    DynamicsBasis basis(model_, js.q);
    const Vec4 theta_hat = estimate(xi);
    st.sliding = sliding_terms(gains_, js, st.ref);
    if (uses_sliding()) {
      st.tau = slotine_li_torque(model_, basis, gains_, js, st.sliding, theta_hat);
    } else {
      st.tau = ctc_torque(model_, basis, gains_, js, st.ref, theta_hat);
    }
    const ParamVec th = full_params(model_, Vec4(theta_true));
    st.ddq = solve_mass(basis.mass(th), st.tau - basis.coriolis(th, js.dq) * js.dq -
                                            basis.gravity(th) - model_.damping_torque(js.dq));
    if (need_measurement) {
      st.Yl = basis.payload_regressor(js.dq, st.ddq, js.dq);
      st.robot_torque = basis.mass(robot_only_) * st.ddq +
                        basis.coriolis(robot_only_, js.dq) * js.dq +
                        basis.gravity(robot_only_) + model_.damping_torque(js.dq);
    }
    if (!need_rates) return st;
    st.xi_dot = Vec::Zero(state_dim());
    st.xi_dot.head(nj) = js.dq;
    st.xi_dot.segment(nj, nj) = st.ddq;
    if (cfg_.adaptation) {
      if (cfg_.controller == ControllerKind::kNac) {
        const auto Yl = basis.payload_regressor(js.dq, st.sliding.a, st.sliding.v);
        const Mat3 Theta = detail::unpack_symmetric(xi.tail(detail::kNacCoords));
        st.xi_dot.tail(detail::kNacCoords) =
            detail::pack_symmetric(nac_update(gains_, Theta, Yl, st.sliding.s));
      } else if (cfg_.controller == ControllerKind::kSlotineLiGradient) {
        const auto Yl = basis.payload_regressor(js.dq, st.sliding.a, st.sliding.v);
        st.xi_dot.tail(kBodyParams) = gradient_update(gains_, Yl, st.sliding.s);
      }
    }
    return st;
  }

  /// Full rollout against the true payload parameters.
  RolloutLog rollout(const Vec4& payload_true) const { return run(payload_true, cfg_.record_regressor); }

 private:
  bool uses_nac() const { return cfg_.controller == ControllerKind::kNac; }
  bool uses_sliding() const {
    return cfg_.controller == ControllerKind::kNac ||
           cfg_.controller == ControllerKind::kSlotineLiGradient;
  }
  bool uses_rls() const {
    return cfg_.controller == ControllerKind::kCtcRls && cfg_.adaptation;
  }

  ReferenceSample reference_at(double t) const {
    if (t <= ref_->duration()) return ref_->eval(t);
    ReferenceSample r = ref_->eval(ref_->duration());
    r.dq.setZero();
    r.ddq.setZero();
    return r;
  }

  RolloutLog run(const Vec& theta_true, bool record_regressor) const {
    require_size(theta_true.size(), kBodyParams, "true payload");
    const int nj = n();
    const int K = grid_.n_steps;
    const double h = grid_.step;
    RolloutLog log;
    log.duration = grid_.duration();
    const int S = grid_.samples();
    log.t.reserve(static_cast<std::size_t>(S));
    for (Mat* m : {&log.q, &log.dq, &log.ddq, &log.tau, &log.q_d, &log.dq_d,
                   &log.ddq_d, &log.s}) {
      m->resize(S, nj);
    }
    log.theta_hat.resize(S, kBodyParams);
    log.estimator.resize(S, estimator_dim());
    if (record_regressor) log.Yl.reserve(static_cast<std::size_t>(S));

    std::mt19937_64 rng(cfg_.seed);
    std::normal_distribution<double> normal(0.0, 1.0);

    EstimatorState est;
    est.theta_hat = theta_hat0_;
    est.P = gains_.rls_prior_covariance;
    Vec xi = initial_state();
    int recorded = 0;
    try {
      for (int k = 0;; ++k) {
        const double t = grid_.time(k);
        const bool last = k == K;
        const Stage st = evaluate(t, xi, theta_true, !last, record_regressor);
        log.t.push_back(t);
        log.q.row(k) = xi.head(nj).transpose();
        log.dq.row(k) = xi.segment(nj, nj).transpose();
        log.ddq.row(k) = st.ddq.transpose();
        log.tau.row(k) = st.tau.transpose();
        log.q_d.row(k) = st.ref.q.transpose();
        log.dq_d.row(k) = st.ref.dq.transpose();
        log.ddq_d.row(k) = st.ref.ddq.transpose();
        log.s.row(k) = st.sliding.s.transpose();
        log.theta_hat.row(k) = estimate(xi).transpose();
        log.estimator.row(k) = xi.tail(estimator_dim()).transpose();
        if (record_regressor) log.Yl.push_back(st.Yl);
        recorded = k + 1;
        if (last) break;

        const Vec& k1 = st.xi_dot;
        const Vec k2 = evaluate(t + 0.5 * h, xi + 0.5 * h * k1, theta_true, true).xi_dot;
        const Vec k3 = evaluate(t + 0.5 * h, xi + 0.5 * h * k2, theta_true, true).xi_dot;
        const Vec k4 = evaluate(t + h, xi + h * k3, theta_true, true).xi_dot;
        xi += (h / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4);
        if (!xi.allFinite() || xi.cwiseAbs().maxCoeff() > cfg_.divergence_limit) {
          throw NumericalError("rollout diverged");
        }
        if (uses_nac() && !is_positive_definite(detail::unpack_symmetric(xi.tail(detail::kNacCoords)))) {
          throw NumericalError("rollout: pseudo-inertia estimate lost definiteness");
        }
        if (uses_rls() && (k + 1) % cfg_.rls_update_every == 0) {
          const double t1 = grid_.time(k + 1);
          const Stage s1 = evaluate(t1, xi, theta_true, false, true);
          JointVec measured = s1.tau;
          if (noise_chol_.size() > 0) {
            Vec z(nj);
            for (int j = 0; j < nj; ++j) z(j) = normal(rng);
            measured += JointVec(noise_chol_ * z);
          }
          const JointVec residual = measured - s1.robot_torque;
          est.theta_hat = estimate(xi);
          est = rls_update(est, s1.Yl, residual, gains_.rls_noise_covariance,
                           gains_.rls_mode, gains_.rls_fixed_gain, gains_.rls_project);
          xi.tail(kBodyParams) = est.theta_hat;
        }
      }
    } catch (const NumericalError&) {
      log.diverged = true;
      log.divergence_time = grid_.time(recorded);
      log.t.resize(static_cast<std::size_t>(recorded));
      for (Mat* m : {&log.q, &log.dq, &log.ddq, &log.tau, &log.q_d, &log.dq_d,
                     &log.ddq_d, &log.s, &log.theta_hat, &log.estimator}) {
        m->conservativeResize(recorded, Eigen::NoChange);
      }
      if (log.Yl.size() > static_cast<std::size_t>(recorded)) log.Yl.resize(static_cast<std::size_t>(recorded));
    }
    log.P_final = est.P;
    return log;
  }

  ManipulatorModel model_;
  std::shared_ptr<const BSplineTrajectory> ref_;
  ControllerGains gains_;
  SimConfig cfg_;
  Vec4 theta_hat0_;
  TimeGrid grid_;
  ParamVec robot_only_;
  Mat noise_chol_;
};

static_assert(ClosedLoopModel<ManipulatorClosedLoop>);

inline RolloutLog rollout(const ManipulatorModel& model, const Vec4& payload_true,
                          std::shared_ptr<const BSplineTrajectory> traj,
                          const ControllerGains& gains, const Vec4& estimator_init,
                          const SimConfig& cfg) {
  return ManipulatorClosedLoop(model, std::move(traj), gains, cfg, estimator_init)
      .rollout(payload_true);
}

// ---------------------------------------------------------------------------
// Task cost

enum class TerminalSpace { kCartesian, kJoint };

struct CostConfig {
  TerminalSpace terminal = TerminalSpace::kCartesian;
  Vec2 target_position = Vec2::Zero();
  Vec target_joint;        // used when terminal == kJoint
  double w_position = 1e3;
  double w_velocity = 1.0;
  double w_torque = 0.0;
  double w_limit = 0.0;
  Vec q_min;               // empty = no joint-limit penalty
  Vec q_max;
};

/// Cost of a run that left the divergence envelope at fail_time.
inline double diverged_cost(double fail_time, double duration) {
  const double remaining = duration > 0.0 ? std::clamp((duration - fail_time) / duration, 0.0, 1.0) : 1.0;
  return 1e6 * (1.0 + remaining);
}

inline double terminal_cost(const ManipulatorModel& model, const CostConfig& cfg,
                            const JointVec& q, const JointVec& dq) {
  double m = cfg.w_velocity * dq.squaredNorm();
  if (cfg.terminal == TerminalSpace::kCartesian) {
    m += cfg.w_position * (ee_position(model, q) - cfg.target_position).squaredNorm();
  } else {
    m += cfg.w_position * (q - JointVec(cfg.target_joint)).squaredNorm();
  }
  return m;
}

inline double limit_penalty(const CostConfig& cfg, const JointVec& q) {
  if (cfg.w_limit == 0.0 || cfg.q_min.size() == 0) return 0.0;
  double acc = 0.0;
  for (int j = 0; j < q.size(); ++j) {
    const double lo = cfg.q_min(j) - q(j), hi = q(j) - cfg.q_max(j);
    if (lo > 0.0) acc += lo * lo;
    if (hi > 0.0) acc += hi * hi;
  }
  return cfg.w_limit * acc;
}

inline double running_cost(const CostConfig& cfg, const JointVec& q, const JointVec& tau) {
  return cfg.w_torque * tau.squaredNorm() + limit_penalty(cfg, q);
}

/// Hessian of the terminal cost with respect to x = (q, dq).
inline Mat terminal_hessian(const ManipulatorModel& model, const CostConfig& cfg,
                            const JointVec& q) {
  const int n = model.n_links();
  Mat H = Mat::Zero(2 * n, 2 * n);
  if (cfg.terminal == TerminalSpace::kCartesian) {
    const auto J = ee_jacobian(model, q);
    const Vec2 r = ee_position(model, q) - cfg.target_position;
    Mat Hq = 2.0 * cfg.w_position * (J.transpose() * J);
    for (int axis = 0; axis < 2; ++axis) {
      Hq += 2.0 * cfg.w_position * r(axis) * Mat(ee_hessian(model, q, axis));
    }
    H.topLeftCorner(n, n) = Hq;
  } else {
    H.topLeftCorner(n, n) = 2.0 * cfg.w_position * Mat::Identity(n, n);
  }
  H.bottomRightCorner(n, n) = 2.0 * cfg.w_velocity * Mat::Identity(n, n);
  return H;
}

/// Hessian of the running cost with respect to (q, dq, tau).
inline Mat running_hessian(const CostConfig& cfg, const JointVec& q) {
  const auto n = q.size();
  Mat H = Mat::Zero(3 * n, 3 * n);
  if (cfg.w_limit != 0.0 && cfg.q_min.size() > 0) {
    for (int j = 0; j < n; ++j) {
      if (q(j) < cfg.q_min(j) || q(j) > cfg.q_max(j)) H(j, j) = 2.0 * cfg.w_limit;
    }
  }
  H.bottomRightCorner(n, n) = 2.0 * cfg.w_torque * Mat::Identity(n, n);
  return H;
}

/// J = m(x(T)) + integral of l dt (trapezoid on the log grid).
inline double task_cost(const ManipulatorModel& model, const RolloutLog& log,
                        const CostConfig& cfg) {
  if (log.diverged) return diverged_cost(log.divergence_time, log.duration);
  const int S = log.samples();
  if (S == 0) return diverged_cost(0.0, log.duration);
  double integral = 0.0;
  double prev = running_cost(cfg, log.q.row(0).transpose(), log.tau.row(0).transpose());
  for (int k = 1; k < S; ++k) {
    const double cur = running_cost(cfg, log.q.row(k).transpose(), log.tau.row(k).transpose());
    integral += 0.5 * (log.t[k] - log.t[k - 1]) * (prev + cur);
    prev = cur;
  }
  return terminal_cost(model, cfg, log.q.row(S - 1).transpose(), log.dq.row(S - 1).transpose()) +
         integral;
}

inline double final_pose_error(const ManipulatorModel& model, const RolloutLog& log,
                               const Vec2& target) {
  if (log.samples() == 0) return std::numeric_limits<double>::infinity();
  return (ee_position(model, log.q.row(log.samples() - 1).transpose()) - target).norm();
}

inline void write_rollout_csv(const RolloutLog& log, std::ostream& os) {
  const int n = log.n_joints();
  os << "t";
  const char* names[] = {"q", "dq", "ddq", "tau", "q_d", "dq_d", "ddq_d", "s"};
  for (const char* nm : names) {
    for (int j = 0; j < n; ++j) os << ',' << nm << j;
  }
  os << ",m_hat,hx_hat,hy_hat,I_hat\n" << std::setprecision(17);
  const Mat* cols[] = {&log.q, &log.dq, &log.ddq, &log.tau, &log.q_d, &log.dq_d, &log.ddq_d, &log.s};
  for (int k = 0; k < log.samples(); ++k) {
    os << log.t[k];
    for (const Mat* m : cols) {
      for (int j = 0; j < n; ++j) os << ',' << (*m)(k, j);
    }
    for (int c = 0; c < kBodyParams; ++c) os << ',' << log.theta_hat(k, c);
    os << '\n';
  }
}

}  // namespace dualref
