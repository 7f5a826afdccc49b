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

// Finite-difference derivatives and a small box-constrained optimizer over
// design vectors. Objectives are arbitrary callables Vec -> double.

#include <chrono>
#include <cstring>
#include <functional>
#include <iomanip>
#include <limits>
#include <numeric>
#include <ostream>
#include <random>
#include <string>
#include <unordered_map>
#include <vector>

#include "dualref/common.hpp"

namespace dualref {

/// Per-coordinate step h_i = rel * (1 + |x_i|).
struct FdPolicy {
  double rel = 1e-6;
  double step(double x) const { return rel * (1.0 + std::abs(x)); }
};

struct FdGradient {
  Vec g;
  std::vector<bool> one_sided;  // coordinates that fell back to a one-sided stencil
  bool fallback() const {
    return std::any_of(one_sided.begin(), one_sided.end(), [](bool b) { return b; });
  }
};

/// Central-difference gradient. When a neighbour evaluates to a non-finite
/// value the coordinate falls back to a one-sided difference and is flagged.
template <class F>
FdGradient fd_gradient(F&& f, const Vec& d, const FdPolicy& policy = {},
                       double f0 = std::numeric_limits<double>::quiet_NaN()) {
  FdGradient out;
  out.g.resize(d.size());
  out.one_sided.assign(static_cast<std::size_t>(d.size()), false);
  for (Eigen::Index i = 0; i < d.size(); ++i) {
    const double h = policy.step(d(i));
    Vec p = d, m = d;
    p(i) += h;
    m(i) -= h;
    const double fp = f(p), fm = f(m);
    if (std::isfinite(fp) && std::isfinite(fm)) {
      out.g(i) = (fp - fm) / (2.0 * h);
      continue;
    }
    if (!std::isfinite(f0)) f0 = f(d);
    out.one_sided[static_cast<std::size_t>(i)] = true;
    if (std::isfinite(fp) && std::isfinite(f0)) {
      out.g(i) = (fp - f0) / h;
    } else if (std::isfinite(fm) && std::isfinite(f0)) {
      out.g(i) = (f0 - fm) / h;
    } else {
      throw NumericalError("fd_gradient: objective non-finite on both sides of coordinate " +
                           std::to_string(i));
    }
  }
  return out;
}

enum class HessianBlock { kDesignDesign, kDesignParam };

struct FdHessian {
  Mat H;
  Eigen::Matrix<bool, Eigen::Dynamic, Eigen::Dynamic> flagged;  // stencil hit a non-finite value
  double asymmetry = 0.0;  // max |H - H^T| / max |H| before symmetrization (dd only)
  bool any_flagged() const { return flagged.any(); }
};

/// Second-order central stencils of f(d, theta) at (d0, theta0).
///
/// kDesignDesign: d^2 f / dd^2 (n_d x n_d, symmetrized).
/// kDesignParam:  d^2 f / dd dtheta (n_d x n_theta).
template <class F>
FdHessian fd_hessian_block(F&& f, const Vec& d0, const Vec& theta0, HessianBlock which,
                           const FdPolicy& policy = {1e-4}) {
  const auto nd = d0.size();
  FdHessian out;
  auto eval = [&](const Vec& d, const Vec& th, bool& bad) {
    const double v = f(d, th);
    if (!std::isfinite(v)) {
      bad = true;
      return 0.0;
    }
    return v;
  };
  if (which == HessianBlock::kDesignDesign) {
    out.H.resize(nd, nd);
    out.flagged.setConstant(nd, nd, false);
    bool bad0 = false;
    const double f0 = eval(d0, theta0, bad0);
    for (Eigen::Index i = 0; i < nd; ++i) {
      const double hi = policy.step(d0(i));
      for (Eigen::Index j = i; j < nd; ++j) {
        const double hj = policy.step(d0(j));
        bool bad = bad0;
        double v;
        if (i == j) {
          Vec p = d0, m = d0;
          p(i) += hi;
          m(i) -= hi;
          v = (eval(p, theta0, bad) - 2.0 * f0 + eval(m, theta0, bad)) / (hi * hi);
        } else {
          Vec pp = d0, pm = d0, mp = d0, mm = d0;
          pp(i) += hi; pp(j) += hj;
          pm(i) += hi; pm(j) -= hj;
          mp(i) -= hi; mp(j) += hj;
          mm(i) -= hi; mm(j) -= hj;
          v = (eval(pp, theta0, bad) - eval(pm, theta0, bad) - eval(mp, theta0, bad) +
               eval(mm, theta0, bad)) / (4.0 * hi * hj);
        }
        if (bad) v = 0.0;
        out.H(i, j) = out.H(j, i) = v;
        out.flagged(i, j) = out.flagged(j, i) = bad;
      }
    }
    const double scale = out.H.cwiseAbs().maxCoeff();
    out.asymmetry = scale > 0.0 ? (out.H - out.H.transpose()).cwiseAbs().maxCoeff() / scale : 0.0;
    out.H = symmetrized(out.H);
    return out;
  }
  const auto nt = theta0.size();
  out.H.resize(nd, nt);
  out.flagged.setConstant(nd, nt, false);
  for (Eigen::Index i = 0; i < nd; ++i) {
    const double hi = policy.step(d0(i));
    Vec dp = d0, dm = d0;
    dp(i) += hi;
    dm(i) -= hi;
    for (Eigen::Index j = 0; j < nt; ++j) {
      const double kj = policy.step(theta0(j));
      Vec tp = theta0, tm = theta0;
      tp(j) += kj;
      tm(j) -= kj;
      bool bad = false;
      double v = (eval(dp, tp, bad) - eval(dp, tm, bad) - eval(dm, tp, bad) + eval(dm, tm, bad)) /
                 (4.0 * hi * kj);
      if (bad) v = 0.0;
      out.H(i, j) = v;
      out.flagged(i, j) = bad;
    }
  }
  return out;
}

// ---------------------------------------------------------------------------

enum class OptMethod { kGradientDescent, kBfgs, kEvolutionary };

inline OptMethod opt_method_from_string(const std::string& s) {
  if (s == "gd" || s == "gradient-descent") return OptMethod::kGradientDescent;
  if (s == "bfgs" || s == "quasi-newton") return OptMethod::kBfgs;
  if (s == "es" || s == "evolutionary") return OptMethod::kEvolutionary;
  throw std::invalid_argument("unknown optimizer method '" + s + "'");
}

inline std::string to_string(OptMethod m) {
  switch (m) {
    case OptMethod::kGradientDescent: return "gd";
    case OptMethod::kBfgs: return "bfgs";
    case OptMethod::kEvolutionary: return "es";
  }
  return "?";
}

struct OptimizerConfig {
  OptMethod method = OptMethod::kBfgs;
  int max_iters = 200;
  double rel_tol = 1e-12;    // stop when the relative decrease falls below this
  double grad_tol = 1e-9;    // stop when the projected gradient's inf-norm does
  FdPolicy fd{1e-6};
  std::uint64_t seed = 0;
  Vec lower;                 // empty = unbounded
  Vec upper;
  double initial_step = 1.0;
  int max_line_search = 40;
  int population = 16;       // evolutionary mode
  double sigma0 = 0.1;       // evolutionary mode, relative to 1 + |d|
  bool cache = true;

  void validate(Eigen::Index n) const {
    if (max_iters < 1) throw std::invalid_argument("OptimizerConfig: max_iters must be >= 1");
    if (!(rel_tol > 0.0) || !(grad_tol > 0.0) || !(fd.rel > 0.0)) {
      throw std::invalid_argument("OptimizerConfig: tolerances must be positive");
    }
    if (lower.size() != upper.size()) throw DimensionError("OptimizerConfig: bounds size mismatch");
    if (lower.size() > 0) {
      require_size(lower.size(), n, "OptimizerConfig bounds");
      if ((lower.array() > upper.array()).any()) {
        throw std::invalid_argument("OptimizerConfig: lower bound above upper bound");
      }
    }
    if (method == OptMethod::kEvolutionary && population < 4) {
      throw std::invalid_argument("OptimizerConfig: population must be >= 4");
    }
  }
};

struct TraceRow {
  int iter = 0;
  double objective = 0.0;  // best so far
  double step_norm = 0.0;
  double wall_time = 0.0;  // seconds since start
};

struct OptimizeResult {
  Vec d;
  double value = 0.0;
  bool converged = false;
  int iterations = 0;
  int evaluations = 0;
  std::vector<TraceRow> trace;
};

inline void write_trace_csv(const std::vector<TraceRow>& trace, std::ostream& os) {
  os << "iter,objective,step_norm,wall_time\n" << std::setprecision(17);
  for (const auto& r : trace) {
    os << r.iter << ',' << r.objective << ',' << r.step_norm << ',' << r.wall_time << '\n';
  }
}

namespace detail {

struct VecHash {
  std::size_t operator()(const std::vector<double>& v) const {
    std::size_t h = 1469598103934665603ull;
    for (double x : v) {
      std::uint64_t bits;
      std::memcpy(&bits, &x, sizeof bits);
      h ^= bits + 0x9e3779b97f4a7c15ull + (h << 6) + (h >> 2);
    }
    return h;
  }
};

/// Objective wrapper with an evaluation cache keyed on the exact bits.
class CachedObjective {
 public:
  CachedObjective(std::function<double(const Vec&)> f, bool enabled)
      : f_(std::move(f)), enabled_(enabled) {}

  double operator()(const Vec& d) {
    if (!enabled_) {
      ++evaluations_;
      return f_(d);
    }
    std::vector<double> key(d.data(), d.data() + d.size());
    auto it = cache_.find(key);
    if (it != cache_.end()) return it->second;
    ++evaluations_;
    const double v = f_(d);
    cache_.emplace(std::move(key), v);
    return v;
  }

  int evaluations() const { return evaluations_; }

 private:
  std::function<double(const Vec&)> f_;
  bool enabled_;
  int evaluations_ = 0;
  std::unordered_map<std::vector<double>, double, VecHash> cache_;
};

inline Vec project(const Vec& d, const OptimizerConfig& cfg) {
  if (cfg.lower.size() == 0) return d;
  return d.cwiseMax(cfg.lower).cwiseMin(cfg.upper);
}

// Gradient with components pushing out of an active bound removed.
inline Vec projected_gradient(const Vec& d, const Vec& g, const OptimizerConfig& cfg) {
  if (cfg.lower.size() == 0) return g;
  Vec pg = g;
  for (Eigen::Index i = 0; i < d.size(); ++i) {
    if ((d(i) <= cfg.lower(i) && g(i) > 0.0) || (d(i) >= cfg.upper(i) && g(i) < 0.0)) pg(i) = 0.0;
  }
  return pg;
}

inline OptimizeResult optimize_gradient(CachedObjective& f, const Vec& d0,
                                        const OptimizerConfig& cfg, bool quasi_newton) {
  using clock = std::chrono::steady_clock;
  const auto start = clock::now();
  const auto n = d0.size();
  OptimizeResult res;
  Vec x = project(d0, cfg);
  double fx = f(x);
  if (!std::isfinite(fx)) throw NumericalError("optimize: objective not finite at d0");
  res.trace.push_back({0, fx, 0.0, 0.0});
  Mat Hinv = Mat::Identity(n, n);
  Vec g = fd_gradient(f, x, cfg.fd, fx).g;
  double alpha0 = cfg.initial_step;
  for (int it = 1; it <= cfg.max_iters; ++it) {
    res.iterations = it;
    const Vec pg = projected_gradient(x, g, cfg);
    if (pg.lpNorm<Eigen::Infinity>() <= cfg.grad_tol) {
      res.converged = true;
      break;
    }
    Vec dir = quasi_newton ? Vec(-(Hinv * pg)) : Vec(-pg);
    if (dir.dot(pg) >= 0.0) {
      Hinv.setIdentity();
      dir = -pg;
    }
    // Backtracking (Armijo) along the projected path.
    double alpha = quasi_newton ? 1.0 : alpha0;
    Vec xn = x;
    double fn = fx;
    bool accepted = false;
    for (int ls = 0; ls < cfg.max_line_search; ++ls) {
      xn = project(x + alpha * dir, cfg);
      fn = f(xn);
      if (std::isfinite(fn) && fn <= fx + 1e-4 * pg.dot(xn - x)) {
        accepted = true;
        break;
      }
      alpha *= 0.5;
    }
    if (!accepted || (xn - x).norm() == 0.0) {
      if (quasi_newton && !Hinv.isIdentity()) {
        Hinv.setIdentity();  // retry once along the steepest descent
        continue;
      }
      break;  // no acceptable step: stuck, not converged
    }
    const Vec s = xn - x;
    const double decrease = fx - fn;
    const Vec gn = fd_gradient(f, xn, cfg.fd, fn).g;
    if (quasi_newton) {
      const Vec y = gn - g;
      const double sy = s.dot(y);
      if (sy > 1e-12 * s.norm() * y.norm()) {
        const double rho = 1.0 / sy;
        const Mat I = Mat::Identity(n, n);
        Hinv = (I - rho * s * y.transpose()) * Hinv * (I - rho * y * s.transpose()) +
               rho * s * s.transpose();
      }
    } else {
      alpha0 = std::min(4.0 * alpha, 1e6);
    }
    x = xn;
    fx = fn;
    g = gn;
    const double wall = std::chrono::duration<double>(clock::now() - start).count();
    res.trace.push_back({it, fx, s.norm(), wall});
    if (decrease <= cfg.rel_tol * std::abs(fx)) {
      res.converged = true;
      break;
    }
  }
  res.d = x;
  res.value = fx;
  return res;
}

inline OptimizeResult optimize_evolutionary(CachedObjective& f, const Vec& d0,
                                            const OptimizerConfig& cfg) {
  using clock = std::chrono::steady_clock;
  const auto start = clock::now();
  const auto n = d0.size();
  std::mt19937_64 rng(cfg.seed);
  std::normal_distribution<double> normal(0.0, 1.0);
  OptimizeResult res;
  Vec mean = project(d0, cfg);
  Vec best = mean;
  double fbest = f(best);
  if (!std::isfinite(fbest)) throw NumericalError("optimize: objective not finite at d0");
  res.trace.push_back({0, fbest, 0.0, 0.0});
  const Vec scale = (1.0 + mean.array().abs()).matrix();
  double sigma = cfg.sigma0;
  const int lambda = cfg.population;
  const int mu = std::max(2, lambda / 4);
  // Log-linear recombination weights.
  Vec w(mu);
  for (int i = 0; i < mu; ++i) w(i) = std::log(mu + 0.5) - std::log(i + 1.0);
  w /= w.sum();
  std::vector<Vec> pop(static_cast<std::size_t>(lambda));
  std::vector<double> fit(static_cast<std::size_t>(lambda));
  std::vector<int> order(static_cast<std::size_t>(lambda));
  for (int it = 1; it <= cfg.max_iters; ++it) {
    res.iterations = it;
    for (int k = 0; k < lambda; ++k) {
      Vec z(n);
      for (Eigen::Index i = 0; i < n; ++i) z(i) = normal(rng);
      pop[static_cast<std::size_t>(k)] = project(mean + sigma * scale.cwiseProduct(z), cfg);
      const double v = f(pop[static_cast<std::size_t>(k)]);
      fit[static_cast<std::size_t>(k)] = std::isfinite(v) ? v : std::numeric_limits<double>::infinity();
    }
    std::iota(order.begin(), order.end(), 0);
    std::stable_sort(order.begin(), order.end(), [&](int a, int b) {
      return fit[static_cast<std::size_t>(a)] < fit[static_cast<std::size_t>(b)];
    });
    Vec next = Vec::Zero(n);
    for (int i = 0; i < mu; ++i) next += w(i) * pop[static_cast<std::size_t>(order[static_cast<std::size_t>(i)])];
    next = project(next, cfg);
    const double fnext = f(next);
    const double prev_best = fbest;
    int successes = 0;
    for (int k = 0; k < lambda; ++k) successes += fit[static_cast<std::size_t>(k)] < prev_best;
    Vec cand = next;
    double fcand = fnext;
    const auto top = static_cast<std::size_t>(order.front());
    if (fit[top] < fcand) {
      cand = pop[top];
      fcand = fit[top];
    }
    double step = 0.0;
    if (fcand < fbest) {
      step = (cand - best).norm();
      best = cand;
      fbest = fcand;
    }
    // One-fifth success rule.
    sigma *= std::exp((static_cast<double>(successes) / lambda - 0.2) / 0.6);
    mean = next;
    const double wall = std::chrono::duration<double>(clock::now() - start).count();
    res.trace.push_back({it, fbest, step, wall});
    if (sigma < 1e-12 || (prev_best - fbest < cfg.rel_tol * std::max(1.0, std::abs(fbest)) &&
                          sigma < cfg.fd.rel)) {
      res.converged = true;
      break;
    }
  }
  res.d = best;
  res.value = fbest;
  return res;
}

}  // namespace detail

/// Minimize f over d within the configured box. The returned design is the
/// best iterate seen; the trace's objective column is the best-so-far value.
template <class F>
OptimizeResult optimize(F&& f, const Vec& d0, const OptimizerConfig& cfg = {}) {
  cfg.validate(d0.size());
  detail::CachedObjective obj(std::function<double(const Vec&)>(std::forward<F>(f)), cfg.cache);
  OptimizeResult res = cfg.method == OptMethod::kEvolutionary
                           ? detail::optimize_evolutionary(obj, d0, cfg)
                           : detail::optimize_gradient(obj, d0, cfg, cfg.method == OptMethod::kBfgs);
  res.evaluations = obj.evaluations();
  return res;
}

}  // namespace dualref
