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

// Scalar objectives over reference designs: Fisher information and its
// optimality criteria, the second-order robust expected cost, and the
// optimality-loss model with its experiment-design penalty.

#include <iomanip>
#include <limits>
#include <memory>
#include <ostream>
#include <vector>

#include "dualref/simloop.hpp"
#include "dualref/trajopt.hpp"
#include "dualref/uq.hpp"

namespace dualref {

/// An inverse-based criterion was requested for a singular information matrix.
class RankDeficientError : public NumericalError {
 public:
  using NumericalError::NumericalError;
};

struct FisherInfo {
  Mat I;
  double t0 = 0.0;
  double t1 = 0.0;
  Mat R;
};

/// I = integral of Y_l^T R^-1 Y_l dt over [t_0, min(t_end, t_last)], by the
/// trapezoid rule on the log grid.
inline FisherInfo fisher_information(const RolloutLog& log, const Mat& R,
                                     double t_end = std::numeric_limits<double>::infinity()) {
  const int S = log.samples();
  if (S == 0) throw std::invalid_argument("fisher_information: empty log");
  if (log.Yl.size() != static_cast<std::size_t>(S)) {
    throw std::invalid_argument("fisher_information: log has no regressor snapshots");
  }
  const int n = log.n_joints();
  require_size(R.rows(), n, "fisher_information R rows");
  require_size(R.cols(), n, "fisher_information R cols");
  Eigen::LLT<Mat> llt(symmetrized(R));
  if (llt.info() != Eigen::Success) throw NumericalError("fisher_information: R is singular or indefinite");
  const Mat Rinv = llt.solve(Mat::Identity(n, n));
  FisherInfo fi;
  fi.R = R;
  fi.t0 = log.t.front();
  fi.I = Mat::Zero(kBodyParams, kBodyParams);
  auto integrand = [&](int k) {
    const Mat Y = log.Yl[static_cast<std::size_t>(k)];
    return Mat(Y.transpose() * Rinv * Y);
  };
  Mat prev = integrand(0);
  fi.t1 = fi.t0;
  for (int k = 1; k < S && log.t[static_cast<std::size_t>(k)] <= t_end; ++k) {
    const Mat cur = integrand(k);
    fi.I += 0.5 * (log.t[static_cast<std::size_t>(k)] - log.t[static_cast<std::size_t>(k - 1)]) * (prev + cur);
    fi.t1 = log.t[static_cast<std::size_t>(k)];
    prev = cur;
  }
  fi.I = symmetrized(fi.I);
  return fi;
}

enum class OedKind { kA, kD, kE, kT };

inline OedKind oed_kind_from_string(const std::string& s) {
  if (s == "A") return OedKind::kA;
  if (s == "D") return OedKind::kD;
  if (s == "E") return OedKind::kE;
  if (s == "T") return OedKind::kT;
  throw std::invalid_argument("unknown OED criterion '" + s + "'");
}

/// A = tr(I^-1), D = det(I^-1), E = lambda_max(I^-1), T = tr(I).
/// A, D and E are to be minimized, T maximized.
inline double oed_criterion(const Mat& I, OedKind kind) {
  if (I.rows() != I.cols() || I.rows() == 0) throw DimensionError("oed_criterion: I must be square");
  if (kind == OedKind::kT) return I.trace();
  Eigen::SelfAdjointEigenSolver<Mat> es(symmetrized(I), Eigen::EigenvaluesOnly);
  const Vec ev = es.eigenvalues();
  if (!(ev.minCoeff() > 1e-12 * std::max(1.0, ev.maxCoeff()))) {
    throw RankDeficientError("oed_criterion: information matrix is rank deficient");
  }
  switch (kind) {
    case OedKind::kA: return ev.cwiseInverse().sum();
    case OedKind::kD: return 1.0 / ev.prod();
    case OedKind::kE: return 1.0 / ev.minCoeff();
    case OedKind::kT: break;
  }
  return I.trace();
}

inline double oed_criterion(const FisherInfo& fi, OedKind kind) { return oed_criterion(fi.I, kind); }

/// Posterior covariance (I + Q^-1)^-1, evaluated as
/// Q^1/2 (Q^1/2 I Q^1/2 + 1)^-1 Q^1/2 so that a singular Q is allowed.
inline Mat posterior_covariance(const Mat& I, const Mat& Q) {
  require_size(I.rows(), Q.rows(), "posterior_covariance");
  Eigen::SelfAdjointEigenSolver<Mat> es(symmetrized(Q));
  const Vec sq = es.eigenvalues().cwiseMax(0.0).cwiseSqrt();
  const Mat R = es.eigenvectors() * sq.asDiagonal() * es.eigenvectors().transpose();
  const auto n = Q.rows();
  const Mat inner = R * symmetrized(I) * R + Mat::Identity(n, n);
  return symmetrized(Mat(R * inner.ldlt().solve(R)));
}

// ---------------------------------------------------------------------------
// Second-order expected cost

/// Quadratic task cost over a closed loop's state xi and input u, with the
/// Hessians that the second-order expectation needs.
template <class C>
concept QuadraticTaskCost = requires(const C& c, double t, const Vec& xi, const Vec& u) {
  { c.terminal(xi) } -> std::convertible_to<double>;
  { c.running(t, xi, u) } -> std::convertible_to<double>;
  { c.terminal_hessian(xi) } -> std::convertible_to<Mat>;   // state_dim^2
  { c.running_hessian(t, xi, u) } -> std::convertible_to<Mat>;  // (state+input)^2
};

struct ExpectedCost {
  double mean_cost = 0.0;       // m(mu_x(T)) + integral of l(mu)
  double terminal_trace = 0.0;  // 1/2 tr(Sigma_xx(T) M)
  double running_trace = 0.0;   // 1/2 integral tr(Sigma_zz L)
  bool diverged = false;
  double value() const { return mean_cost + terminal_trace + running_trace; }
};

template <QuadraticTaskCost C>
ExpectedCost expected_cost(const MomentTrajectory& m, const C& cost, double horizon) {
  ExpectedCost out;
  const int S = m.samples();
  if (m.diverged || S == 0) {
    out.diverged = true;
    out.mean_cost = diverged_cost(m.fail_time, horizon);
    return out;
  }
  const int nx = m.state_dim;
  const bool inputs = m.input_dim > 0;
  auto mean_at = [&](int k) { return Vec(m.mean.row(k).transpose()); };
  auto input_at = [&](int k) { return Vec(m.input_mean.row(k).transpose()); };
  double run = 0.0, trace = 0.0;
  double prev_l = cost.running(m.t[0], mean_at(0), input_at(0));
  auto trace_at = [&](int k) {
    const Mat L = cost.running_hessian(m.t[static_cast<std::size_t>(k)], mean_at(k), input_at(k));
    const Mat& Z = m.Szz[static_cast<std::size_t>(k)];
    if (inputs) return (Z.cwiseProduct(L)).sum();
    return (Z.cwiseProduct(L.topLeftCorner(nx, nx))).sum();
  };
  double prev_tr = trace_at(0);
  for (int k = 1; k < S; ++k) {
    const double dt = m.t[static_cast<std::size_t>(k)] - m.t[static_cast<std::size_t>(k - 1)];
    const double l = cost.running(m.t[static_cast<std::size_t>(k)], mean_at(k), input_at(k));
    const double tr = trace_at(k);
    run += 0.5 * dt * (prev_l + l);
    trace += 0.5 * dt * (prev_tr + tr);
    prev_l = l;
    prev_tr = tr;
  }
  const Vec xT = mean_at(S - 1);
  out.mean_cost = cost.terminal(xT) + run;
  out.terminal_trace = 0.5 * (m.state_cov(S - 1).cwiseProduct(cost.terminal_hessian(xT))).sum();
  out.running_trace = 0.5 * trace;
  return out;
}

struct MixtureCost {
  double value = 0.0;
  std::vector<double> components;  // per-component value before weighting
};

/// Weighted sum over mixture components of the second-order expected cost,
/// each with the true parameters distributed as that component. The
/// closed loop keeps its own controller prior throughout.
template <ClosedLoopModel S, QuadraticTaskCost C>
MixtureCost j_dual1(const S& sys, const GaussianMixture& gmm, const C& cost,
                    const MomentConfig& mcfg = {}) {
  gmm.validate();
  MixtureCost out;
  const double horizon = sys.grid().duration();
  for (const auto& comp : gmm.components) {
    const MomentTrajectory m = propagate_moments(sys, comp.mean, comp.cov, mcfg);
    const double v = expected_cost(m, cost, horizon).value();
    out.components.push_back(v);
    out.value += comp.weight * v;
  }
  return out;
}

// ---------------------------------------------------------------------------
// Optimality loss

struct OptimalityLossModel {
  Mat D;
  Vec anchor_design;
  Vec anchor_params;
  double damping = 0.0;
  Mat H_dd;
  Mat H_dtheta;
  bool inner_converged = true;
  bool regularized = false;  // H + damping was indefinite and had to be clipped
  double asymmetry = 0.0;

  /// 1/2 (theta_bar - theta)^T D (theta_bar - theta)
  double predicted_loss(const Vec& theta) const {
    const Vec e = anchor_params - theta;
    return 0.5 * e.dot(D * e);
  }
};

/// D = B^T (H + lambda 1)^-1 B at the anchor (d_star, theta_bar), with H and B
/// the design-design and design-parameter Hessian blocks of J(d, theta) and
/// lambda = damping_rel * tr(H) / n_d.
template <class F>
OptimalityLossModel optimality_loss_at(F&& J, const Vec& theta_bar, const Vec& d_star,
                                       const FdPolicy& policy = {1e-4}, double damping_rel = 1e-6) {
  OptimalityLossModel olm;
  olm.anchor_design = d_star;
  olm.anchor_params = theta_bar;
  const FdHessian Hdd = fd_hessian_block(J, d_star, theta_bar, HessianBlock::kDesignDesign, policy);
  const FdHessian Hdt = fd_hessian_block(J, d_star, theta_bar, HessianBlock::kDesignParam, policy);
  if (Hdd.any_flagged() || Hdt.any_flagged()) {
    throw NumericalError("optimality_loss_model: Hessian stencil hit a non-finite objective");
  }
  olm.H_dd = Hdd.H;
  olm.H_dtheta = Hdt.H;
  olm.asymmetry = Hdd.asymmetry;
  const auto nd = d_star.size();
  const double tr = std::abs(olm.H_dd.trace());
  olm.damping = damping_rel * (tr > 0.0 ? tr / static_cast<double>(nd) : 1.0);
  Mat H = olm.H_dd + olm.damping * Mat::Identity(nd, nd);
  Eigen::LLT<Mat> llt(H);
  if (llt.info() != Eigen::Success) {
    Eigen::SelfAdjointEigenSolver<Mat> es(olm.H_dd);
    const Vec ev = es.eigenvalues().cwiseMax(olm.damping);
    H = es.eigenvectors() * ev.asDiagonal() * es.eigenvectors().transpose();
    llt.compute(H);
    olm.regularized = true;
  }
  olm.D = symmetrized(Mat(olm.H_dtheta.transpose() * llt.solve(olm.H_dtheta)));
  return olm;
}

/// Solves d*(theta_bar) from d0 first, then builds the model at that anchor.
template <class F>
OptimalityLossModel optimality_loss_model(F&& J, const Vec& theta_bar, const Vec& d0,
                                          const OptimizerConfig& opt, const FdPolicy& policy = {1e-4},
                                          double damping_rel = 1e-6) {
  const OptimizeResult inner = optimize([&](const Vec& d) { return J(d, theta_bar); }, d0, opt);
  if (!std::isfinite(inner.value)) throw NumericalError("optimality_loss_model: inner optimization failed");
  OptimalityLossModel olm = optimality_loss_at(J, theta_bar, inner.d, policy, damping_rel);
  olm.inner_converged = inner.converged;
  return olm;
}

/// 1/2 tr(D Sigma)
inline double optimality_loss_penalty(const Mat& D, const Mat& Sigma) {
  return 0.5 * (D.cwiseProduct(Sigma)).sum();
}

// ---------------------------------------------------------------------------
// The manipulator problem

/// Quadratic task cost of the manipulator loop expressed over xi = (q, dq,
/// estimator) and u = tau.
struct ManipulatorTaskCost {
  const ManipulatorModel* model = nullptr;
  CostConfig cfg;
  int state_dim = 0;

  int n() const { return model->n_links(); }
  double terminal(const Vec& xi) const {
    return terminal_cost(*model, cfg, xi.head(n()), xi.segment(n(), n()));
  }
  double running(double, const Vec& xi, const Vec& u) const {
    return running_cost(cfg, xi.head(n()), u);
  }
  Mat terminal_hessian(const Vec& xi) const {
    Mat H = Mat::Zero(state_dim, state_dim);
    H.topLeftCorner(2 * n(), 2 * n()) = dualref::terminal_hessian(*model, cfg, xi.head(n()));
    return H;
  }
  Mat running_hessian(double, const Vec& xi, const Vec&) const {
    const int nj = n();
    const Mat L = dualref::running_hessian(cfg, xi.head(nj));
    Mat H = Mat::Zero(state_dim + nj, state_dim + nj);
    H.topLeftCorner(2 * nj, 2 * nj) = L.topLeftCorner(2 * nj, 2 * nj);
    H.bottomRightCorner(nj, nj) = L.bottomRightCorner(nj, nj);
    H.block(state_dim, 0, nj, 2 * nj) = L.block(2 * nj, 0, nj, 2 * nj);
    H.block(0, state_dim, 2 * nj, nj) = L.block(0, 2 * nj, 2 * nj, nj);
    return H;
  }
};

static_assert(QuadraticTaskCost<ManipulatorTaskCost>);

/// Source of the parameter covariance in the experiment-design penalty.
enum class SigmaThetaSource {
  kPosterior,   // (I + Q^-1)^-1
  kPropagated,  // covariance of theta_hat(T) - theta from the propagated moments
};

/// Everything needed to turn a design vector into closed-loop rollouts and
/// costs: plant, boundary, spline layout, controller, cost and priors.
struct ManipulatorProblem {
  ManipulatorModel model;
  Boundary boundary;
  SplineConfig spline;
  ControllerGains gains;
  SimConfig sim;
  CostConfig cost;
  Vec4 prior_mean = Vec4::Zero();  // the controller's initial estimate
  Mat fi_noise;                    // R of the Fisher information
  MomentConfig moments;
  SigmaThetaSource sigma_source = SigmaThetaSource::kPosterior;

  int design_dim() const { return design_size(spline, model.n_links()); }

  std::shared_ptr<const BSplineTrajectory> reference(const Vec& d) const {
    return std::make_shared<const BSplineTrajectory>(make_spline(boundary, d, spline));
  }

  ManipulatorClosedLoop closed_loop(const Vec& d, bool record_regressor = false) const {
    SimConfig cfg = sim;
    cfg.record_regressor = record_regressor;
    return ManipulatorClosedLoop(model, reference(d), gains, cfg, prior_mean);
  }

  ManipulatorTaskCost task_cost_model(int state_dim) const { return {&model, cost, state_dim}; }

  RolloutLog rollout(const Vec& d, const Vec4& truth, bool record_regressor = false) const {
    return closed_loop(d, record_regressor).rollout(truth);
  }

  /// J(d; theta): task cost with the true payload theta.
  double task(const Vec& d, const Vec& truth) const {
    require_size(truth.size(), kBodyParams, "ManipulatorProblem truth");
    return task_cost(model, rollout(d, Vec4(truth)), cost);
  }

  Vec straight_line() const { return straight_line_design(boundary, spline); }
};

/// Task cost of the design when the payload is exactly the controller prior.
inline double nominal_objective(const Vec& d, const ManipulatorProblem& ctx) {
  return ctx.task(d, ctx.prior_mean);
}

/// J(d at theta_bar) - w tr(I(theta_bar; d)).
inline double j_fim(const Vec& d, const Vec4& theta_bar, double w, const ManipulatorProblem& ctx) {
  const RolloutLog log = ctx.rollout(d, theta_bar, true);
  const double J = task_cost(ctx.model, log, ctx.cost);
  if (log.diverged) return J;
  return J - w * fisher_information(log, ctx.fi_noise).I.trace();
}

inline MixtureCost j_dual1(const Vec& d, const GaussianMixture& gmm, const ManipulatorProblem& ctx) {
  const ManipulatorClosedLoop loop = ctx.closed_loop(d);
  return j_dual1(loop, gmm, ctx.task_cost_model(loop.state_dim()), ctx.moments);
}

/// Covariance of theta_hat(T) - theta under the propagated first-order moments.
inline Mat propagated_estimate_error(const ManipulatorClosedLoop& loop, const MomentTrajectory& m) {
  const int S = m.samples();
  const Mat E = loop.estimate_map();
  const Mat Sxx = m.state_cov(S - 1);
  const Mat Sxt = m.Sxt[static_cast<std::size_t>(S - 1)];
  const Mat C = E * Sxx * E.transpose() - E * Sxt - Sxt.transpose() * E.transpose() + m.Q;
  return symmetrized(C);
}

/// Sum_i c_i [ J(d; theta_i) + 1/2 tr(D Sigma_theta_i) ].
inline MixtureCost j_dual2(const Vec& d, const GaussianMixture& gmm, const OptimalityLossModel& olm,
                           const ManipulatorProblem& ctx) {
  gmm.validate();
  require_size(olm.D.rows(), kBodyParams, "j_dual2 D");
  const ManipulatorClosedLoop loop = ctx.closed_loop(d, true);
  MixtureCost out;
  for (const auto& comp : gmm.components) {
    const RolloutLog log = loop.rollout(Vec4(comp.mean));
    double v = task_cost(ctx.model, log, ctx.cost);
    if (!log.diverged) {
      Mat Sigma;
      if (ctx.sigma_source == SigmaThetaSource::kPosterior) {
        Sigma = posterior_covariance(fisher_information(log, ctx.fi_noise).I, comp.cov);
      } else {
        const MomentTrajectory m = propagate_moments(loop, comp.mean, comp.cov, ctx.moments);
        Sigma = m.diverged ? Mat(comp.cov) : propagated_estimate_error(loop, m);
      }
      v += optimality_loss_penalty(olm.D, Sigma);
    }
    out.components.push_back(v);
    out.value += comp.weight * v;
  }
  return out;
}

/// Optimality-loss model of the manipulator task at theta_bar: the anchor is
/// the nominal optimum d*(theta_bar), found from d0.
inline OptimalityLossModel optimality_loss_model(const ManipulatorProblem& ctx, const Vec4& theta_bar,
                                                 const Vec& d0, const OptimizerConfig& opt,
                                                 const FdPolicy& policy = {1e-4}) {
  return optimality_loss_model([&ctx](const Vec& d, const Vec& th) { return ctx.task(d, th); },
                               Vec(theta_bar), d0, opt, policy);
}

/// iter, value, then one column per mixture component.
inline void write_objective_trace(const std::vector<MixtureCost>& evals, std::ostream& os) {
  const std::size_t K = evals.empty() ? 0 : evals.front().components.size();
  os << "iter,value";
  for (std::size_t i = 0; i < K; ++i) os << ",component" << i;
  os << '\n' << std::setprecision(17);
  for (std::size_t it = 0; it < evals.size(); ++it) {
    os << it << ',' << evals[it].value;
    for (double c : evals[it].components) os << ',' << c;
    os << '\n';
  }
}

}  // namespace dualref
