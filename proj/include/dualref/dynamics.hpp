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

// Rigid-body dynamics of a planar serial chain of revolute joints carrying a
// rigidly attached payload at the last link tip.
//
// Every body b carries a parameter block (m, h_x, h_y, I_zz) expressed in its
// own frame: h = m * c is the first moment of mass and I_zz is the rotational
// inertia about the frame origin. Link i has its frame at joint i with the
// x axis along the link; the payload frame sits at the tip of the last link
// with the last link's orientation. The dynamics are linear in the stacked
// parameter vector theta = [theta_r; theta_l].

#include <array>
#include <cmath>
#include <vector>

#include "dualref/common.hpp"

namespace dualref {

/// One rigid body's parameter block.
struct BodyParams {
  double mass = 0.0;
  double hx = 0.0;  // m * c_x
  double hy = 0.0;  // m * c_y
  double inertia = 0.0;  // about the body frame origin

  static BodyParams from_vector(const Vec4& v) {
    return {v(0), v(1), v(2), v(3)};
  }
  /// From mass, centre of mass and rotational inertia about the centre of mass.
  static BodyParams from_com(double mass, double cx, double cy,
                             double inertia_com) {
    return {mass, mass * cx, mass * cy,
            inertia_com + mass * (cx * cx + cy * cy)};
  }

  Vec4 to_vector() const { return {mass, hx, hy, inertia}; }
  double com_x() const { return hx / mass; }
  double com_y() const { return hy / mass; }
  double inertia_com() const { return inertia - (hx * hx + hy * hy) / mass; }

  /// m > 0, I_zz > 0 and I_zz >= |h|^2 / m (planar pseudo-inertia PSD).
  bool is_consistent(double tol = 0.0) const {
    return std::isfinite(mass) && std::isfinite(hx) && std::isfinite(hy) &&
           std::isfinite(inertia) && mass > 0.0 && inertia > 0.0 &&
           inertia * mass + tol >= hx * hx + hy * hy;
  }
};

/// Stacked parameter blocks of several bodies.
class InertialParams {
 public:
  InertialParams() = default;
  explicit InertialParams(std::vector<BodyParams> bodies) {
    theta_.resize(kBodyParams * static_cast<Eigen::Index>(bodies.size()));
    for (std::size_t b = 0; b < bodies.size(); ++b) {
      theta_.segment<kBodyParams>(kBodyParams * static_cast<Eigen::Index>(b)) =
          bodies[b].to_vector();
    }
  }
  static InertialParams from_flat(const Eigen::Ref<const Vec>& theta) {
    if (theta.size() % kBodyParams != 0 || theta.size() > kMaxParams) {
      throw DimensionError("InertialParams: flat size must be a multiple of 4");
    }
    InertialParams p;
    p.theta_ = theta;
    return p;
  }
  static InertialParams single(const BodyParams& b) {
    return InertialParams(std::vector<BodyParams>{b});
  }

  int num_bodies() const { return static_cast<int>(theta_.size() / kBodyParams); }
  BodyParams body(int b) const {
    return BodyParams::from_vector(theta_.segment<kBodyParams>(kBodyParams * b));
  }
  Vec4 block(int b) const { return theta_.segment<kBodyParams>(kBodyParams * b); }
  const ParamVec& flat() const { return theta_; }

  bool is_consistent(double tol = 0.0) const {
    for (int b = 0; b < num_bodies(); ++b) {
      if (!body(b).is_consistent(tol)) return false;
    }
    return true;
  }

 private:
  ParamVec theta_;
};

struct ManipulatorModel {
  std::vector<double> link_lengths;
  Vec2 gravity = Vec2::Zero();
  InertialParams robot_params;
  std::vector<double> joint_damping;  // empty means zero

  int n_links() const { return static_cast<int>(link_lengths.size()); }
  /// Number of parameters in theta = [theta_r; theta_l].
  int n_params() const { return kBodyParams * (n_links() + 1); }

  void validate() const {
    const int n = n_links();
    if (n < 1 || n > kMaxLinks) {
      throw DimensionError("ManipulatorModel: n_links must be in [1, " +
                           std::to_string(kMaxLinks) + "]");
    }
    for (double l : link_lengths) {
      if (!(l > 0.0) || !std::isfinite(l)) {
        throw std::invalid_argument("ManipulatorModel: link lengths must be positive");
      }
    }
    require_size(robot_params.num_bodies(), n, "ManipulatorModel robot_params blocks");
    if (!joint_damping.empty()) {
      require_size(static_cast<Eigen::Index>(joint_damping.size()), n,
                   "ManipulatorModel joint_damping");
    }
  }

  double damping(int j) const {
    return joint_damping.empty() ? 0.0 : joint_damping[static_cast<std::size_t>(j)];
  }
  JointVec damping_torque(const JointVec& dq) const {
    JointVec out = JointVec::Zero(n_links());
    for (int j = 0; j < n_links(); ++j) out(j) = damping(j) * dq(j);
    return out;
  }
  double reach() const {
    double r = 0.0;
    for (double l : link_lengths) r += l;
    return r;
  }
};

struct JointState {
  JointVec q;
  JointVec dq;
};

struct DynamicsTerms {
  JointMat M;
  JointMat C;
  JointVec g;
};

namespace detail {

inline void check_joint_vec(const ManipulatorModel& model, const JointVec& v,
                            const char* what) {
  require_size(v.size(), model.n_links(), what);
  require_finite(v, what);
}

inline void check_state(const ManipulatorModel& model, const JointState& s) {
  check_joint_vec(model, s.q, "JointState.q");
  check_joint_vec(model, s.dq, "JointState.dq");
}

// Kinematics of every body frame at one configuration.
struct ChainKinematics {
  int n = 0;
  std::array<double, kMaxLinks> phi{};       // absolute link angles
  std::array<double, kMaxLinks> cos_phi{};
  std::array<double, kMaxLinks> sin_phi{};
  std::array<Vec2, kMaxLinks + 1> origin;    // joint positions, origin[n] is the tip

  ChainKinematics(const ManipulatorModel& model, const JointVec& q)
      : n(model.n_links()) {
    origin[0].setZero();
    double angle = 0.0;
    for (int k = 0; k < n; ++k) {
      angle += q(k);
      phi[k] = angle;
      cos_phi[k] = std::cos(angle);
      sin_phi[k] = std::sin(angle);
      const double l = model.link_lengths[static_cast<std::size_t>(k)];
      origin[k + 1] = origin[k] + l * Vec2(cos_phi[k], sin_phi[k]);
    }
  }

  // Translational Jacobian of the frame origin of body b (2 x n). Body b's
  // frame sits at joint b; the payload (b == n) sits at the tip.
  Eigen::Matrix<double, 2, Eigen::Dynamic, 0, 2, kMaxLinks> origin_jacobian(
      const ManipulatorModel& model, int b) const {
    Eigen::Matrix<double, 2, Eigen::Dynamic, 0, 2, kMaxLinks> J(2, n);
    J.setZero();
    Vec2 acc = Vec2::Zero();
    for (int k = b - 1; k >= 0; --k) {
      const double l = model.link_lengths[static_cast<std::size_t>(k)];
      acc += l * Vec2(-sin_phi[k], cos_phi[k]);
      J.col(k) = acc;
    }
    return J;
  }
};

// Adds weight * (mass-matrix basis of body b's 4 parameters) into M[0..3]
// and, when g is non-null, weight * gravity basis into g[0..3].
inline void accumulate_body_basis(const ManipulatorModel& model,
                                  const ChainKinematics& kin, int b,
                                  double weight, JointMat* M, JointVec* g) {
  const int n = kin.n;
  const int link = b < n ? b : n - 1;
  const auto Jp = kin.origin_jacobian(model, b);
  const double c = kin.cos_phi[link], s = kin.sin_phi[link];
  // S R e_x and S R e_y, S the planar 90 degree rotation.
  const Vec2 wx(-s, c);
  const Vec2 wy(-c, -s);
  // Only joints 0..link move body b; its angular Jacobian is a prefix of ones.
  const int active = link + 1;
  for (int i = 0; i < active; ++i) {
    const double pxi = Jp.col(i).dot(wx);
    const double pyi = Jp.col(i).dot(wy);
    for (int j = 0; j < active; ++j) {
      const double pxj = Jp.col(j).dot(wx);
      const double pyj = Jp.col(j).dot(wy);
      M[0](i, j) += weight * Jp.col(i).dot(Jp.col(j));
      M[1](i, j) += weight * (pxi + pxj);
      M[2](i, j) += weight * (pyi + pyj);
      M[3](i, j) += weight;
    }
  }
  if (g != nullptr) {
    const Vec2& gv = model.gravity;
    const double gx = wx.dot(gv), gy = wy.dot(gv);
    for (int i = 0; i < n; ++i) {
      g[0](i) -= weight * Jp.col(i).dot(gv);
      if (i < active) {
        g[1](i) -= weight * gx;
        g[2](i) -= weight * gy;
      }
    }
  }
}

// d/dq_i of body b's mass-matrix basis, written into dM[0..3] (which must be
// zeroed n x n). Only joints up to the body's own link move it.
inline void body_basis_derivative(const ManipulatorModel& model,
                                  const ChainKinematics& kin, int b, int i,
                                  JointMat* dM) {
  const int n = kin.n;
  const int link = b < n ? b : n - 1;
  if (i > link) return;
  const auto Jp = kin.origin_jacobian(model, b);
  // dJp.col(k)/dq_i = sum over m >= max(k, i), m < b of l_m (-cos, -sin)(phi_m).
  Eigen::Matrix<double, 2, Eigen::Dynamic, 0, 2, kMaxLinks> dJ(2, n);
  dJ.setZero();
  Vec2 acc = Vec2::Zero();
  for (int k = b - 1; k >= 0; --k) {
    if (k >= i) {
      const double l = model.link_lengths[static_cast<std::size_t>(k)];
      acc += l * Vec2(-kin.cos_phi[k], -kin.sin_phi[k]);
    }
    dJ.col(k) = acc;
  }
  const double c = kin.cos_phi[link], s = kin.sin_phi[link];
  const Vec2 wx(-s, c), wy(-c, -s);
  const int active = link + 1;
  for (int r = 0; r < active; ++r) {
    const double dpx_r = dJ.col(r).dot(wx) + Jp.col(r).dot(wy);
    const double dpy_r = dJ.col(r).dot(wy) - Jp.col(r).dot(wx);
    for (int k = 0; k < active; ++k) {
      const double dpx_k = dJ.col(k).dot(wx) + Jp.col(k).dot(wy);
      const double dpy_k = dJ.col(k).dot(wy) - Jp.col(k).dot(wx);
      dM[0](r, k) = dJ.col(r).dot(Jp.col(k)) + Jp.col(r).dot(dJ.col(k));
      dM[1](r, k) = dpx_r + dpx_k;
      dM[2](r, k) = dpy_r + dpy_k;
    }
  }
}

}  // namespace detail

/// Per-parameter basis of the dynamics at one configuration.
///
/// For parameter index p (body b = p / 4, coordinate p % 4) stores M_p(q),
/// dM_p/dq_i and g_p(q), so that for any theta
/// M = sum_p theta_p M_p and likewise for C and g. Computing this once per
/// state serves both the plant (true parameters) and the controller
/// (estimated parameters) as well as every regressor column.
class DynamicsBasis {
 public:
  DynamicsBasis(const ManipulatorModel& model, const JointVec& q)
      : n_(model.n_links()), np_(model.n_params()) {
    detail::check_joint_vec(model, q, "DynamicsBasis q");
    for (int p = 0; p < np_; ++p) {
      M_[p].setZero(n_, n_);
      g_[p].setZero(n_);
    }
    dM_.assign(static_cast<std::size_t>(np_ * n_ * n_ * n_), 0.0);
    detail::ChainKinematics kin(model, q);
    for (int b = 0; b <= n_; ++b) {
      detail::accumulate_body_basis(model, kin, b, 1.0, &M_[kBodyParams * b],
                                    &g_[kBodyParams * b]);
    }
    // M is invariant to a rigid rotation of the whole chain, so dM/dq_0 = 0.
    std::array<JointMat, kBodyParams> d;
    for (int i = 1; i < n_; ++i) {
      for (int b = 0; b <= n_; ++b) {
        if (std::min(b, n_ - 1) < i) continue;
        for (auto& m : d) m.setZero(n_, n_);
        detail::body_basis_derivative(model, kin, b, i, d.data());
        for (int c = 0; c < kBodyParams; ++c) dM_mut(kBodyParams * b + c, i) = d[c];
      }
    }
  }

  int n() const { return n_; }
  int n_params() const { return np_; }

  JointMat mass(const ParamVec& theta) const {
    check_theta(theta);
    JointMat M = JointMat::Zero(n_, n_);
    for (int p = 0; p < np_; ++p) M += theta(p) * M_[p];
    return M;
  }

  JointVec gravity(const ParamVec& theta) const {
    check_theta(theta);
    JointVec g = JointVec::Zero(n_);
    for (int p = 0; p < np_; ++p) g += theta(p) * g_[p];
    return g;
  }

  /// Coriolis matrix from Christoffel symbols of the first kind.
  JointMat coriolis(const ParamVec& theta, const JointVec& dq) const {
    check_theta(theta);
    const auto D = mass_derivatives(theta);
    JointMat C = JointMat::Zero(n_, n_);
    for (int k = 0; k < n_; ++k) {
      for (int j = 0; j < n_; ++j) {
        double acc = 0.0;
        for (int i = 0; i < n_; ++i) {
          acc += 0.5 * (D[i](k, j) + D[j](k, i) - D[k](i, j)) * dq(i);
        }
        C(k, j) = acc;
      }
    }
    return C;
  }

  /// dM/dq_i for the given parameters.
  std::array<JointMat, kMaxLinks> mass_derivatives(const ParamVec& theta) const {
    std::array<JointMat, kMaxLinks> D;
    for (int i = 0; i < n_; ++i) D[i].setZero(n_, n_);
    for (int p = 0; p < np_; ++p) {
      if (theta(p) == 0.0) continue;
      for (int i = 1; i < n_; ++i) D[i] += theta(p) * dM(p, i);
    }
    return D;
  }

  /// Y(q, dq, a, v): columns M_p a + C_p(q, dq) v + g_p.
  RegressorMat regressor(const JointVec& dq, const JointVec& a,
                         const JointVec& v) const {
    RegressorMat Y(n_, np_);
    for (int p = 0; p < np_; ++p) Y.col(p) = column(p, dq, a, v);
    return Y;
  }

  /// The payload block [Y_l] of the regressor (last 4 columns).
  PayloadRegressor payload_regressor(const JointVec& dq, const JointVec& a,
                                     const JointVec& v) const {
    PayloadRegressor Y(n_, kBodyParams);
    const int first = np_ - kBodyParams;
    for (int c = 0; c < kBodyParams; ++c) Y.col(c) = column(first + c, dq, a, v);
    return Y;
  }

  JointVec column(int p, const JointVec& dq, const JointVec& a,
                  const JointVec& v) const {
    JointVec out = M_[p] * a + g_[p];
    // (C_p v)_k = sum_ij 0.5 (dM_i[k,j] + dM_j[k,i] - dM_k[i,j]) dq_i v_j
    for (int i = 0; i < n_; ++i) {
      out.noalias() += (0.5 * dq(i)) * (dM(p, i) * v);
    }
    for (int j = 0; j < n_; ++j) out += 0.5 * v(j) * (dM(p, j) * dq);
    for (int k = 0; k < n_; ++k) out(k) -= 0.5 * dq.dot(dM(p, k) * v);
    return out;
  }

 private:
  Eigen::Map<const JointMat> dM(int p, int i) const {
    return {dM_.data() + static_cast<std::ptrdiff_t>((p * n_ + i) * n_ * n_), n_, n_};
  }
  Eigen::Map<JointMat> dM_mut(int p, int i) {
    return {dM_.data() + static_cast<std::ptrdiff_t>((p * n_ + i) * n_ * n_), n_, n_};
  }

  void check_theta(const ParamVec& theta) const {
    require_size(theta.size(), np_, "DynamicsBasis theta");
  }

  int n_;
  int np_;
  std::array<JointMat, kMaxParams> M_;
  std::array<JointVec, kMaxParams> g_;
  std::vector<double> dM_;
};

/// theta = [theta_r; theta_l] for the model's robot blocks and a payload.
inline ParamVec full_params(const ManipulatorModel& model,
                            const InertialParams& payload) {
  require_size(payload.num_bodies(), 1, "payload blocks");
  ParamVec theta(model.n_params());
  theta.head(model.n_params() - kBodyParams) = model.robot_params.flat();
  theta.tail<kBodyParams>() = payload.flat();
  return theta;
}

inline ParamVec full_params(const ManipulatorModel& model, const Vec4& payload) {
  ParamVec theta(model.n_params());
  theta.head(model.n_params() - kBodyParams) = model.robot_params.flat();
  theta.tail<kBodyParams>() = payload;
  return theta;
}

inline DynamicsTerms dynamics_terms(const ManipulatorModel& model,
                                    const InertialParams& payload,
                                    const JointState& state) {
  model.validate();
  detail::check_state(model, state);
  const ParamVec theta = full_params(model, payload);
  DynamicsBasis basis(model, state.q);
  return {basis.mass(theta), basis.coriolis(theta, state.dq),
          basis.gravity(theta)};
}

/// tau = M ddq + C dq + g + D dq.
inline JointVec inverse_dynamics(const ManipulatorModel& model,
                                 const InertialParams& payload,
                                 const JointState& state, const JointVec& ddq) {
  detail::check_joint_vec(model, ddq, "ddq");
  const auto t = dynamics_terms(model, payload, state);
  return t.M * ddq + t.C * state.dq + t.g + model.damping_torque(state.dq);
}

/// Solves M ddq = tau - C dq - g - D dq.
inline JointVec solve_mass(const JointMat& M, const JointVec& rhs) {
  Eigen::LLT<JointMat> llt(M);
  if (llt.info() != Eigen::Success) {
    throw NumericalError("mass matrix is not positive definite");
  }
  JointVec x = llt.solve(rhs);
  if (!x.allFinite()) throw NumericalError("mass matrix solve produced non-finite values");
  return x;
}

inline JointVec forward_dynamics(const ManipulatorModel& model,
                                 const InertialParams& payload,
                                 const JointState& state, const JointVec& tau) {
  detail::check_joint_vec(model, tau, "tau");
  const auto t = dynamics_terms(model, payload, state);
  return solve_mass(t.M, tau - t.C * state.dq - t.g - model.damping_torque(state.dq));
}

/// Y(q, dq, a, v) with Y theta = M(q) a + C(q, dq) v + g(q); n x 4(n+1).
inline RegressorMat regressor(const ManipulatorModel& model,
                              const JointState& state, const JointVec& a,
                              const JointVec& v) {
  model.validate();
  detail::check_state(model, state);
  detail::check_joint_vec(model, a, "regressor a");
  detail::check_joint_vec(model, v, "regressor v");
  return DynamicsBasis(model, state.q).regressor(state.dq, a, v);
}

inline Vec2 ee_position(const ManipulatorModel& model, const JointVec& q) {
  detail::check_joint_vec(model, q, "ee_position q");
  return detail::ChainKinematics(model, q).origin[static_cast<std::size_t>(model.n_links())];
}

/// d ee / dq (2 x n).
inline Eigen::Matrix<double, 2, Eigen::Dynamic, 0, 2, kMaxLinks> ee_jacobian(
    const ManipulatorModel& model, const JointVec& q) {
  detail::check_joint_vec(model, q, "ee_jacobian q");
  return detail::ChainKinematics(model, q).origin_jacobian(model, model.n_links());
}

/// Second derivatives of one end-effector coordinate, axis in {0, 1}.
inline JointMat ee_hessian(const ManipulatorModel& model, const JointVec& q,
                           int axis) {
  detail::check_joint_vec(model, q, "ee_hessian q");
  const int n = model.n_links();
  detail::ChainKinematics kin(model, q);
  JointMat H = JointMat::Zero(n, n);
  for (int i = 0; i < n; ++i) {
    for (int j = 0; j < n; ++j) {
      double acc = 0.0;
      for (int k = std::max(i, j); k < n; ++k) {
        const double l = model.link_lengths[static_cast<std::size_t>(k)];
        acc += axis == 0 ? -l * std::cos(kin.phi[k]) : -l * std::sin(kin.phi[k]);
      }
      H(i, j) = acc;
    }
  }
  return H;
}

inline double kinetic_energy(const ManipulatorModel& model,
                             const InertialParams& payload,
                             const JointState& state) {
  const auto t = dynamics_terms(model, payload, state);
  return 0.5 * state.dq.dot(t.M * state.dq);
}

/// Potential energy V with g = dV/dq.
inline double potential_energy(const ManipulatorModel& model,
                               const InertialParams& payload,
                               const JointVec& q) {
  detail::check_joint_vec(model, q, "potential_energy q");
  const ParamVec theta = full_params(model, payload);
  detail::ChainKinematics kin(model, q);
  const int n = model.n_links();
  double V = 0.0;
  for (int b = 0; b <= n; ++b) {
    const int link = b < n ? b : n - 1;
    const double c = std::cos(kin.phi[link]), s = std::sin(kin.phi[link]);
    const BodyParams p = BodyParams::from_vector(theta.segment<kBodyParams>(kBodyParams * b));
    const Vec2 rh(c * p.hx - s * p.hy, s * p.hx + c * p.hy);
    V -= model.gravity.dot(p.mass * kin.origin[b] + rh);
  }
  return V;
}

}  // namespace dualref
