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

// Gaussian-mixture priors over the uncertain parameters and first-order
// propagation of state covariance through a closed loop.

#include <iomanip>
#include <ostream>
#include <string>
#include <vector>

#include "dualref/system.hpp"

namespace dualref {

struct GmmComponent {
  double weight = 1.0;
  Vec mean;
  Mat cov;
};

struct GaussianMixture {
  std::vector<GmmComponent> components;

  int size() const { return static_cast<int>(components.size()); }
  int dim() const { return components.empty() ? 0 : static_cast<int>(components.front().mean.size()); }

  /// Weights positive and normalized, covariances symmetric PSD. A zero
  /// covariance is allowed so deterministic limits can be expressed.
  void validate() const {
    if (components.empty()) throw std::invalid_argument("GaussianMixture: no components");
    double total = 0.0;
    for (const auto& c : components) {
      require_size(c.mean.size(), dim(), "GaussianMixture mean");
      require_size(c.cov.rows(), dim(), "GaussianMixture covariance rows");
      require_size(c.cov.cols(), dim(), "GaussianMixture covariance cols");
      if (!(c.weight > 0.0)) throw std::invalid_argument("GaussianMixture: weights must be positive");
      if ((c.cov - c.cov.transpose()).cwiseAbs().maxCoeff() > 1e-12 * (1.0 + c.cov.cwiseAbs().maxCoeff())) {
        throw std::invalid_argument("GaussianMixture: covariance not symmetric");
      }
      if (min_eigenvalue(c.cov) < -1e-12 * (1.0 + c.cov.cwiseAbs().maxCoeff())) {
        throw std::invalid_argument("GaussianMixture: covariance not PSD");
      }
      total += c.weight;
    }
    if (std::abs(total - 1.0) > 1e-12) throw std::invalid_argument("GaussianMixture: weights must sum to 1");
  }

  Vec mean() const {
    Vec mu = Vec::Zero(dim());
    for (const auto& c : components) mu += c.weight * c.mean;
    return mu;
  }

  Mat covariance() const {
    const Vec mu = mean();
    Mat S = Mat::Zero(dim(), dim());
    for (const auto& c : components) {
      const Vec d = c.mean - mu;
      S += c.weight * (c.cov + d * d.transpose());
    }
    return S;
  }
};

enum class GmmStrategy { kSingle, kSigma };

inline GmmStrategy gmm_strategy_from_string(const std::string& s) {
  if (s == "single") return GmmStrategy::kSingle;
  if (s == "sigma") return GmmStrategy::kSigma;
  throw std::invalid_argument("unknown GMM strategy '" + s + "'");
}

inline std::string to_string(GmmStrategy s) {
  return s == GmmStrategy::kSingle ? "single" : "sigma";
}

/// "single": one component (mean, Q). "sigma": 2n+1 equally weighted
/// components at mean and mean +- sqrt(n) L e_j (L L^T = Q), each with
/// covariance Q / (2n+1). The mixture reproduces mean and Q exactly.
inline GaussianMixture build_gmm(const Vec& mean, const Mat& Q, int n_components,
                                 GmmStrategy strategy) {
  const auto n = mean.size();
  require_size(Q.rows(), n, "build_gmm Q rows");
  require_size(Q.cols(), n, "build_gmm Q cols");
  if (n_components < 1) throw std::invalid_argument("build_gmm: n_components must be >= 1");
  Eigen::LLT<Mat> llt(symmetrized(Q));
  if (llt.info() != Eigen::Success) throw NumericalError("build_gmm: Q is not positive definite");
  GaussianMixture g;
  if (strategy == GmmStrategy::kSingle || n_components == 1) {
    if (n_components != 1) throw std::invalid_argument("build_gmm: 'single' needs exactly one component");
    g.components.push_back({1.0, mean, symmetrized(Q)});
    return g;
  }
  const int K = static_cast<int>(2 * n + 1);
  if (n_components != K) {
    throw std::invalid_argument("build_gmm: 'sigma' needs 2n+1 = " + std::to_string(K) + " components");
  }
  const Mat L = llt.matrixL();
  const double w = 1.0 / K;
  const Mat Qk = symmetrized(Q) / K;
  const double scale = std::sqrt(static_cast<double>(n));
  g.components.push_back({w, mean, Qk});
  for (Eigen::Index j = 0; j < n; ++j) {
    g.components.push_back({w, mean + scale * L.col(j), Qk});
    g.components.push_back({w, mean - scale * L.col(j), Qk});
  }
  return g;
}

// ---------------------------------------------------------------------------

enum class MomentRoute {
  kSensitivity,  // S = d xi / d theta from perturbed rollouts
  kLyapunov,     // Sigma' = G Sigma + Sigma G^T along the mean
};

struct MomentConfig {
  MomentRoute route = MomentRoute::kSensitivity;
  double rel_step = 1e-6;
  bool with_input = true;
};

/// Mean and covariance of the augmented state along the time grid.
///
/// `Szz[k]` is the covariance of z = (xi, u) at sample k (u block present
/// only when inputs were propagated), `Sxt[k]` the cross covariance of xi
/// with the parameters.
struct MomentTrajectory {
  std::vector<double> t;
  Mat mean;        // samples x state_dim
  Mat input_mean;  // samples x input_dim
  std::vector<Mat> Szz;
  std::vector<Mat> Sxt;
  Mat Q;
  int state_dim = 0;
  int input_dim = 0;
  bool diverged = false;
  double fail_time = 0.0;

  int samples() const { return static_cast<int>(t.size()); }
  Mat state_cov(int k) const { return Szz[static_cast<std::size_t>(k)].topLeftCorner(state_dim, state_dim); }
  Mat input_cov(int k) const {
    return Szz[static_cast<std::size_t>(k)].bottomRightCorner(input_dim, input_dim);
  }
};

namespace detail {

inline double fd_step(double rel, double x) { return rel * std::max(1.0, std::abs(x)); }

template <ClosedLoopModel S>
MomentTrajectory moments_by_sensitivity(const S& sys, const Vec& theta, const Mat& Q,
                                        const MomentConfig& cfg) {
  const int nx = sys.state_dim();
  const int nu = cfg.with_input ? sys.input_dim() : 0;
  const int nt = sys.param_dim();
  MomentTrajectory out;
  out.Q = Q;
  out.state_dim = nx;
  out.input_dim = nu;
  const SystemTrajectory nominal = sys.simulate(theta);
  out.t = nominal.t;
  out.mean = nominal.xi;
  out.input_mean = nominal.u;
  out.diverged = nominal.diverged;
  out.fail_time = nominal.fail_time;
  const int samples = nominal.samples();

  // Columns with no prior spread carry no uncertainty and need no rollouts.
  std::vector<int> active;
  for (int j = 0; j < nt; ++j) {
    if (Q.col(j).cwiseAbs().maxCoeff() > 0.0) active.push_back(j);
  }
  const int na = static_cast<int>(active.size());
  std::vector<Mat> Sens(static_cast<std::size_t>(samples), Mat::Zero(nx + nu, na));
  int usable = samples;
  for (int a = 0; a < na && !out.diverged; ++a) {
    const int j = active[static_cast<std::size_t>(a)];
    const double h = fd_step(cfg.rel_step, theta(j));
    Vec tp = theta, tm = theta;
    tp(j) += h;
    tm(j) -= h;
    const SystemTrajectory up = sys.simulate(tp);
    const SystemTrajectory dn = sys.simulate(tm);
    if (up.diverged || dn.diverged) {
      out.diverged = true;
      out.fail_time = std::min(up.diverged ? up.fail_time : nominal.t.back(),
                               dn.diverged ? dn.fail_time : nominal.t.back());
    }
    usable = std::min({usable, up.samples(), dn.samples()});
    for (int k = 0; k < usable; ++k) {
      auto& Sk = Sens[static_cast<std::size_t>(k)];
      Sk.block(0, a, nx, 1) = (up.xi.row(k) - dn.xi.row(k)).transpose() / (2.0 * h);
      if (nu > 0) Sk.block(nx, a, nu, 1) = (up.u.row(k) - dn.u.row(k)).transpose() / (2.0 * h);
    }
  }
  Mat Qa(na, na), Qc(nt, na);
  for (int a = 0; a < na; ++a) {
    Qc.col(a) = Q.col(active[static_cast<std::size_t>(a)]);
    for (int b = 0; b < na; ++b) {
      Qa(a, b) = Q(active[static_cast<std::size_t>(a)], active[static_cast<std::size_t>(b)]);
    }
  }
  if (usable < samples) {
    out.t.resize(static_cast<std::size_t>(usable));
    out.mean.conservativeResize(usable, Eigen::NoChange);
    out.input_mean.conservativeResize(usable, Eigen::NoChange);
  }
  out.Szz.reserve(static_cast<std::size_t>(usable));
  out.Sxt.reserve(static_cast<std::size_t>(usable));
  for (int k = 0; k < usable; ++k) {
    const Mat& Sk = Sens[static_cast<std::size_t>(k)];
    out.Szz.push_back(symmetrized(Mat(Sk * Qa * Sk.transpose())));
    out.Sxt.push_back(Sk.topRows(nx) * Qc.transpose());
  }
  return out;
}

template <ClosedLoopModel S>
Mat state_jacobian(const S& sys, double t, const Vec& xi, const Vec& theta, double rel) {
  const int nx = sys.state_dim();
  Mat A(nx, nx);
  for (int j = 0; j < nx; ++j) {
    const double h = fd_step(rel, xi(j));
    Vec p = xi, m = xi;
    p(j) += h;
    m(j) -= h;
    A.col(j) = (sys.derivative(t, p, theta) - sys.derivative(t, m, theta)) / (2.0 * h);
  }
  return A;
}

template <ClosedLoopModel S>
Mat param_jacobian(const S& sys, double t, const Vec& xi, const Vec& theta, double rel) {
  Mat B(sys.state_dim(), sys.param_dim());
  for (int j = 0; j < sys.param_dim(); ++j) {
    const double h = fd_step(rel, theta(j));
    Vec p = theta, m = theta;
    p(j) += h;
    m(j) -= h;
    B.col(j) = (sys.derivative(t, xi, p) - sys.derivative(t, xi, m)) / (2.0 * h);
  }
  return B;
}

template <ClosedLoopModel S>
Mat input_jacobian(const S& sys, double t, const Vec& xi, const Vec& theta, double rel) {
  const int nx = sys.state_dim(), nt = sys.param_dim();
  Mat U(sys.input_dim(), nx + nt);
  for (int j = 0; j < nx; ++j) {
    const double h = fd_step(rel, xi(j));
    Vec p = xi, m = xi;
    p(j) += h;
    m(j) -= h;
    U.col(j) = (sys.input(t, p, theta) - sys.input(t, m, theta)) / (2.0 * h);
  }
  for (int j = 0; j < nt; ++j) {
    const double h = fd_step(rel, theta(j));
    Vec p = theta, m = theta;
    p(j) += h;
    m(j) -= h;
    U.col(nx + j) = (sys.input(t, xi, p) - sys.input(t, xi, m)) / (2.0 * h);
  }
  return U;
}

template <ClosedLoopModel S>
MomentTrajectory moments_by_lyapunov(const S& sys, const Vec& theta, const Mat& Q,
                                     const MomentConfig& cfg) {
  if (!sys.is_continuous()) {
    throw std::invalid_argument("propagate_moments: the Lyapunov route needs a continuous closed loop");
  }
  const int nx = sys.state_dim(), nt = sys.param_dim();
  const int nu = cfg.with_input ? sys.input_dim() : 0;
  const int na = nx + nt;
  const TimeGrid grid = sys.grid();
  const double h = grid.step;
  MomentTrajectory out;
  out.Q = Q;
  out.state_dim = nx;
  out.input_dim = nu;
  out.mean.resize(grid.samples(), nx);
  out.input_mean.resize(grid.samples(), sys.input_dim());

  Vec mu = sys.initial_state();
  Mat P = Mat::Zero(na, na);  // joint covariance of (xi, theta)
  P.bottomRightCorner(nt, nt) = Q;

  // Rates of (mu, P) at one stage.
  auto rates = [&](double t, const Vec& m, const Mat& Pm, Vec& dm, Mat& dP) {
    dm = sys.derivative(t, m, theta);
    Mat G = Mat::Zero(na, na);
    G.topLeftCorner(nx, nx) = state_jacobian(sys, t, m, theta, cfg.rel_step);
    G.topRightCorner(nx, nt) = param_jacobian(sys, t, m, theta, cfg.rel_step);
    dP = G * Pm + Pm * G.transpose();
  };

  int recorded = 0;
  try {
    for (int k = 0;; ++k) {
      const double t = grid.time(k);
      out.t.push_back(t);
      out.mean.row(k) = mu.transpose();
      out.input_mean.row(k) = sys.input(t, mu, theta).transpose();
      Mat Szz = Mat::Zero(nx + nu, nx + nu);
      Szz.topLeftCorner(nx, nx) = P.topLeftCorner(nx, nx);
      if (nu > 0) {
        const Mat U = input_jacobian(sys, t, mu, theta, cfg.rel_step);
        Szz.bottomRightCorner(nu, nu) = U * P * U.transpose();
        Szz.block(nx, 0, nu, nx) = U * P.leftCols(nx);
        Szz.block(0, nx, nx, nu) = Szz.block(nx, 0, nu, nx).transpose();
      }
      out.Szz.push_back(symmetrized(Szz));
      out.Sxt.push_back(P.topRightCorner(nx, nt));
      recorded = k + 1;
      if (k == grid.n_steps) break;

      Vec d1, d2, d3, d4;
      Mat P1, P2, P3, P4;
      rates(t, mu, P, d1, P1);
      rates(t + 0.5 * h, mu + 0.5 * h * d1, P + 0.5 * h * P1, d2, P2);
      rates(t + 0.5 * h, mu + 0.5 * h * d2, P + 0.5 * h * P2, d3, P3);
      rates(t + h, mu + h * d3, P + h * P3, d4, P4);
      mu += (h / 6.0) * (d1 + 2.0 * d2 + 2.0 * d3 + d4);
      P += (h / 6.0) * (P1 + 2.0 * P2 + 2.0 * P3 + P4);
      P = symmetrized(P);
      P.bottomRightCorner(nt, nt) = Q;
      if (!mu.allFinite() || !P.allFinite() || mu.cwiseAbs().maxCoeff() > kDivergenceLimit) {
        throw NumericalError("propagate_moments: mean diverged");
      }
    }
  } catch (const NumericalError&) {
    out.diverged = true;
    out.fail_time = grid.time(recorded);
    out.t.resize(static_cast<std::size_t>(recorded));
    out.Szz.resize(static_cast<std::size_t>(recorded));
    out.Sxt.resize(static_cast<std::size_t>(recorded));
    out.mean.conservativeResize(recorded, Eigen::NoChange);
    out.input_mean.conservativeResize(recorded, Eigen::NoChange);
  }
  return out;
}

}  // namespace detail

/// First-order moments of the closed loop when the true parameters are
/// distributed as N(theta, Q). The controller's own prior is part of `sys`.
template <ClosedLoopModel S>
MomentTrajectory propagate_moments(const S& sys, const Vec& theta, const Mat& Q,
                                   const MomentConfig& cfg = {}) {
  require_size(theta.size(), sys.param_dim(), "propagate_moments theta");
  require_size(Q.rows(), sys.param_dim(), "propagate_moments Q rows");
  require_size(Q.cols(), sys.param_dim(), "propagate_moments Q cols");
  if (min_eigenvalue(Q) < -1e-12 * (1.0 + Q.cwiseAbs().maxCoeff())) {
    throw std::invalid_argument("propagate_moments: Q must be PSD");
  }
  if (!(cfg.rel_step > 0.0)) throw std::invalid_argument("propagate_moments: rel_step must be positive");
  return cfg.route == MomentRoute::kLyapunov ? detail::moments_by_lyapunov(sys, theta, Q, cfg)
                                             : detail::moments_by_sensitivity(sys, theta, Q, cfg);
}

/// t, mean of every state and input coordinate, then their variances.
inline void write_moments_csv(const MomentTrajectory& m, std::ostream& os) {
  const int nz = m.state_dim + m.input_dim;
  os << "t";
  for (int i = 0; i < m.state_dim; ++i) os << ",xi" << i;
  for (int i = 0; i < m.input_dim; ++i) os << ",u" << i;
  for (int i = 0; i < m.state_dim; ++i) os << ",var_xi" << i;
  for (int i = 0; i < m.input_dim; ++i) os << ",var_u" << i;
  os << '\n' << std::setprecision(17);
  for (int k = 0; k < m.samples(); ++k) {
    os << m.t[static_cast<std::size_t>(k)];
    for (int i = 0; i < m.state_dim; ++i) os << ',' << m.mean(k, i);
    for (int i = 0; i < m.input_dim; ++i) os << ',' << m.input_mean(k, i);
    const Mat& S = m.Szz[static_cast<std::size_t>(k)];
    for (int i = 0; i < nz; ++i) os << ',' << S(i, i);
    os << '\n';
  }
}

}  // namespace dualref
