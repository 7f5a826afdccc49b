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

// Feedback policies and adaptation laws acting on the payload block theta_l.
// Robot link parameters are known; only the payload estimate adapts.

#include <string>

#include "dualref/dynamics.hpp"
#include "dualref/reference.hpp"

namespace dualref {

enum class ControllerKind {
  kNac,       // Slotine-Li tracking law with natural adaptation
  kCtcRls,    // computed torque with recursive least squares
  kCtcFixed,  // computed torque, estimate frozen
  kSlotineLiGradient,  // Slotine-Li with the classical gradient law
};

inline std::string to_string(ControllerKind k) {
  switch (k) {
    case ControllerKind::kNac: return "nac";
    case ControllerKind::kCtcRls: return "ctc-rls";
    case ControllerKind::kCtcFixed: return "ctc-fixed";
    case ControllerKind::kSlotineLiGradient: return "sl-gradient";
  }
  return "unknown";
}

inline ControllerKind controller_from_string(const std::string& s) {
  if (s == "nac") return ControllerKind::kNac;
  if (s == "ctc-rls") return ControllerKind::kCtcRls;
  if (s == "ctc-fixed") return ControllerKind::kCtcFixed;
  if (s == "sl-gradient") return ControllerKind::kSlotineLiGradient;
  throw std::invalid_argument("unknown controller '" + s + "'");
}

enum class RlsMode { kCovariance, kFixedGain };

struct ControllerGains {
  Vec K;       // sliding feedback gain (diagonal)
  Vec Lambda;  // sliding surface slope (diagonal)
  Vec Kp;      // computed torque position gain (diagonal)
  Vec Kd;      // computed torque velocity gain (diagonal)
  double gamma = 1.0;  // natural adaptation gain
  Mat4 Gamma = Mat4::Identity();  // classical gradient adaptation gain
  Mat4 rls_prior_covariance = Mat4::Identity();
  Mat rls_noise_covariance;  // n x n
  RlsMode rls_mode = RlsMode::kCovariance;
  double rls_fixed_gain = 1e-3;
  bool rls_project = true;  // project estimates onto the consistent set

  static ControllerGains defaults(int n) {
    ControllerGains g;
    g.K = Vec::Constant(n, 20.0);
    g.Lambda = Vec::Constant(n, 10.0);
    g.Kp = Vec::Constant(n, 100.0);
    g.Kd = Vec::Constant(n, 20.0);
    g.rls_noise_covariance = Mat::Identity(n, n) * 1e-2;
    return g;
  }

  void validate(int n) const {
    auto positive = [&](const Vec& v, const char* what) {
      require_size(v.size(), n, what);
      if (!(v.array() > 0.0).all()) {
        throw std::invalid_argument(std::string(what) + " must be positive");
      }
    };
    positive(K, "gains.K");
    positive(Lambda, "gains.Lambda");
    positive(Kp, "gains.Kp");
    positive(Kd, "gains.Kd");
    if (!(gamma > 0.0)) throw std::invalid_argument("gains.gamma must be positive");
    if (min_eigenvalue(Gamma) <= 0.0) throw std::invalid_argument("gains.Gamma must be PD");
    if (min_eigenvalue(rls_prior_covariance) <= 0.0) {
      throw std::invalid_argument("gains.rls_prior_covariance must be PD");
    }
    require_size(rls_noise_covariance.rows(), n, "gains.rls_noise_covariance");
    if (min_eigenvalue(rls_noise_covariance) <= 0.0) {
      throw std::invalid_argument("gains.rls_noise_covariance must be PD");
    }
  }
};

struct EstimatorState {
  Vec4 theta_hat = Vec4::Zero();
  Mat4 P = Mat4::Identity();      // RLS covariance
  Mat3 pseudo_inertia = Mat3::Identity();  // NAC
};

// ---------------------------------------------------------------------------
// Pseudo-inertia

/// Planar pseudo-inertia [[m, h^T], [h, Sigma]] with
/// Sigma = h h^T / m + (I - |h|^2 / m) / 2 * Id, so that tr(Sigma) = I and
/// Theta is PSD exactly when the body is physically consistent.
inline Mat3 pseudo_inertia(const Vec4& theta) {
  const double m = theta(0);
  const Vec2 h = theta.segment<2>(1);
  const double I = theta(3);
  if (!(m > 0.0) || !theta.allFinite()) {
    throw NumericalError("pseudo_inertia: mass must be positive");
  }
  const double spread = I - h.squaredNorm() / m;
  if (spread < -1e-12 * std::max(1.0, std::abs(I))) {
    throw NumericalError("pseudo_inertia: parameters are not physically consistent");
  }
  Mat3 out;
  out(0, 0) = m;
  out.block<1, 2>(0, 1) = h.transpose();
  out.block<2, 1>(1, 0) = h;
  out.block<2, 2>(1, 1) = h * h.transpose() / m + 0.5 * std::max(spread, 0.0) * Eigen::Matrix2d::Identity();
  return out;
}

/// Linear inverse of pseudo_inertia: (Theta_00, Theta_01, Theta_02, Theta_11 + Theta_22).
inline Vec4 params_from_pseudo_inertia(const Mat3& Theta) {
  return {Theta(0, 0), 0.5 * (Theta(0, 1) + Theta(1, 0)),
          0.5 * (Theta(0, 2) + Theta(2, 0)), Theta(1, 1) + Theta(2, 2)};
}

/// Matrix L with tr(Theta L) = phi^{-1}(Theta)^T l for every symmetric Theta.
inline Mat3 natural_multiplier(const Vec4& l) {
  Mat3 L;
  L << l(0), 0.5 * l(1), 0.5 * l(2),
       0.5 * l(1), l(3), 0.0,
       0.5 * l(2), 0.0, l(3);
  return L;
}

inline bool is_positive_definite(const Mat3& Theta) {
  Eigen::LLT<Mat3> llt(0.5 * (Theta + Theta.transpose()));
  return llt.info() == Eigen::Success;
}

// ---------------------------------------------------------------------------
// Tracking errors

struct SlidingTerms {
  JointVec s;  // dq~ + Lambda q~
  JointVec v;  // dq_d - Lambda q~
  JointVec a;  // ddq_d - Lambda dq~
};

inline SlidingTerms sliding_terms(const ControllerGains& gains,
                                  const JointState& state,
                                  const ReferenceSample& ref) {
  const JointVec e = state.q - JointVec(ref.q);
  const JointVec de = state.dq - JointVec(ref.dq);
  const JointVec lam = gains.Lambda;
  SlidingTerms out;
  out.s = de + lam.cwiseProduct(e);
  out.v = JointVec(ref.dq) - lam.cwiseProduct(e);
  out.a = JointVec(ref.ddq) - lam.cwiseProduct(de);
  return out;
}

// ---------------------------------------------------------------------------
// Policies. The *_with_basis variants reuse a basis evaluated at state.q.

inline JointVec slotine_li_torque(const ManipulatorModel& model,
                                  const DynamicsBasis& basis,
                                  const ControllerGains& gains,
                                  const JointState& state,
                                  const SlidingTerms& st, const Vec4& theta_hat) {
  const ParamVec th = full_params(model, theta_hat);
  const JointVec K = gains.K;
  return basis.mass(th) * st.a + basis.coriolis(th, state.dq) * st.v +
         basis.gravity(th) + model.damping_torque(st.v) - K.cwiseProduct(st.s);
}

/// tau = Y(q, dq, a, v) theta_hat - K s, with a, v, s from the reference.
inline JointVec slotine_li_torque(const ManipulatorModel& model,
                                  const ControllerGains& gains,
                                  const JointState& state,
                                  const ReferenceSample& ref,
                                  const Vec4& theta_hat) {
  model.validate();
  detail::check_state(model, state);
  gains.validate(model.n_links());
  DynamicsBasis basis(model, state.q);
  return slotine_li_torque(model, basis, gains, state,
                           sliding_terms(gains, state, ref), theta_hat);
}

inline JointVec ctc_torque(const ManipulatorModel& model,
                           const DynamicsBasis& basis,
                           const ControllerGains& gains,
                           const JointState& state, const ReferenceSample& ref,
                           const Vec4& theta_hat) {
  const ParamVec th = full_params(model, theta_hat);
  const JointVec e = state.q - JointVec(ref.q);
  const JointVec de = state.dq - JointVec(ref.dq);
  const JointVec Kp = gains.Kp, Kd = gains.Kd;
  const JointVec acc = JointVec(ref.ddq) - Kd.cwiseProduct(de) - Kp.cwiseProduct(e);
  return basis.mass(th) * acc + basis.coriolis(th, state.dq) * state.dq +
         basis.gravity(th) + model.damping_torque(state.dq);
}

/// tau = M^(ddq_d - Kd (dq - dq_d) - Kp (q - q_d)) + C^ dq + g^.
inline JointVec ctc_torque(const ManipulatorModel& model,
                           const ControllerGains& gains,
                           const JointState& state, const ReferenceSample& ref,
                           const Vec4& theta_hat) {
  model.validate();
  detail::check_state(model, state);
  gains.validate(model.n_links());
  DynamicsBasis basis(model, state.q);
  Eigen::LLT<JointMat> llt(basis.mass(full_params(model, theta_hat)));
  if (llt.info() != Eigen::Success) {
    throw NumericalError("ctc_torque: estimated mass matrix is not positive definite");
  }
  return ctc_torque(model, basis, gains, state, ref, theta_hat);
}

// ---------------------------------------------------------------------------
// Adaptation laws

/// Natural adaptation: dTheta/dt = -(1/gamma) Theta L Theta with
/// tr(Theta L) = theta^T l and l = Y_l^T s.
inline Mat3 nac_update(const ControllerGains& gains, const Mat3& Theta,
                       const PayloadRegressor& Yl, const JointVec& s) {
  require_size(Yl.rows(), s.size(), "nac_update regressor rows");
  if (!is_positive_definite(Theta)) {
    throw NumericalError("nac_update: pseudo-inertia estimate is not positive definite");
  }
  const Vec4 l = Yl.transpose() * s;
  const Mat3 L = natural_multiplier(l);
  const Mat3 S = 0.5 * (Theta + Theta.transpose());
  Mat3 dTheta = -(1.0 / gains.gamma) * S * L * S;
  return 0.5 * (dTheta + dTheta.transpose());
}

/// Classical gradient law d theta_hat / dt = -Gamma Y_l^T s.
inline Vec4 gradient_update(const ControllerGains& gains,
                            const PayloadRegressor& Yl, const JointVec& s) {
  return -gains.Gamma * (Yl.transpose() * s);
}

/// Pull an estimate back into the consistent set: floor m and I_zz, then
/// shrink the first moment until |h|^2 <= m I_zz. Shrinking h rather than
/// inflating I keeps the estimate bounded when m is near zero.
inline Vec4 project_consistent(const Vec4& theta, double eps = 1e-6) {
  Vec4 out = theta;
  out(0) = std::max(out(0), eps);
  out(3) = std::max(out(3), eps);
  const double h2 = out.segment<2>(1).squaredNorm();
  const double cap = out(0) * out(3) * (1.0 - 1e-9);
  if (h2 > cap) out.segment<2>(1) *= std::sqrt(cap / h2);
  return out;
}

/// Covariance-form RLS (MAP under a Gaussian prior) for r = Y_l theta + noise.
inline EstimatorState rls_update(const EstimatorState& est,
                                 const PayloadRegressor& Yl,
                                 const JointVec& residual,
                                 const Mat& noise_cov,
                                 RlsMode mode = RlsMode::kCovariance,
                                 double fixed_gain = 1e-3,
                                 bool project = false) {
  const auto n = Yl.rows();
  require_size(residual.size(), n, "rls_update residual");
  require_size(noise_cov.rows(), n, "rls_update noise covariance");
  require_size(noise_cov.cols(), n, "rls_update noise covariance");
  EstimatorState out = est;
  const JointVec innovation = residual - Yl * est.theta_hat;
  if (mode == RlsMode::kFixedGain) {
    out.theta_hat = est.theta_hat + fixed_gain * (Yl.transpose() * innovation);
  } else {
    const Mat S = Yl * est.P * Yl.transpose() + noise_cov;
    Eigen::LDLT<Mat> ldlt(S);
    if (ldlt.info() != Eigen::Success || !(ldlt.vectorD().array() > 0.0).all()) {
      throw NumericalError("rls_update: innovation covariance is singular");
    }
    const Eigen::Matrix<double, 4, Eigen::Dynamic> G =
        ldlt.solve(Yl * est.P).transpose();  // P Y^T S^-1 (S, P symmetric)
    out.theta_hat = est.theta_hat + G * innovation;
    const Mat4 IKH = Mat4::Identity() - G * Yl;
    // Joseph form keeps P symmetric positive definite under round-off.
    Mat4 P = IKH * est.P * IKH.transpose() + G * noise_cov * G.transpose();
    out.P = 0.5 * (P + P.transpose());
  }
  if (project) out.theta_hat = project_consistent(out.theta_hat);
  return out;
}

}  // namespace dualref
