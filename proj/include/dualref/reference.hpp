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

// Clamped B-spline references q_d(t) = sum_i B_i(s(t)) C_i driven through a
// quintic time scaling s(t) whose first and second derivatives vanish at both
// ends. The first and last control points are the boundary configurations,
// so q_d(0) = q_0, q_d(T) = q_T and the reference starts and stops at rest
// for every choice of the interior control points.

#include <algorithm>
#include <fstream>
#include <iomanip>
#include <sstream>
#include <string>
#include <vector>

#include "dualref/common.hpp"

namespace dualref {

inline constexpr int kMaxSplineDegree = 9;

struct SplineConfig {
  int degree = 5;
  int n_control = 10;  // per joint, including the two fixed end points
  double duration = 2.0;
  bool optimize_knots = false;

  void validate() const {
    if (degree < 3 || degree > kMaxSplineDegree) {
      throw std::invalid_argument("SplineConfig: degree must be in [3, 9]");
    }
    if (n_control < degree + 1) {
      throw std::invalid_argument("SplineConfig: need n_control >= degree + 1");
    }
    if (!(duration > 0.0)) throw std::invalid_argument("SplineConfig: duration must be > 0");
  }
  int n_interior_knots() const { return n_control - degree - 1; }
};

/// Boundary configurations; end velocities and accelerations are zero.
struct Boundary {
  Vec q0;
  Vec qT;
};

struct ReferenceSample {
  JointVec q;
  JointVec dq;
  JointVec ddq;
};


/// Quintic time scaling s(t) on [0, T] with s' = s'' = 0 at both ends.
struct TimeScaling {
  double duration = 1.0;

  double s(double t) const {
    const double x = t / duration;
    return x * x * x * (10.0 + x * (-15.0 + 6.0 * x));
  }
  double ds(double t) const {
    const double x = t / duration;
    return 30.0 * x * x * (1.0 - x) * (1.0 - x) / duration;
  }
  double dds(double t) const {
    const double x = t / duration;
    return 60.0 * x * (1.0 - x) * (1.0 - 2.0 * x) / (duration * duration);
  }
};

namespace detail {

// Clamped knot vector with uniformly spaced interior knots.
inline std::vector<double> clamped_uniform_knots(int n_control, int degree) {
  const int m = n_control + degree + 1;
  std::vector<double> knots(static_cast<std::size_t>(m), 0.0);
  const int interior = n_control - degree - 1;
  for (int i = 0; i < interior; ++i) {
    knots[static_cast<std::size_t>(degree + 1 + i)] =
        static_cast<double>(i + 1) / static_cast<double>(interior + 1);
  }
  for (int i = m - degree - 1; i < m; ++i) knots[static_cast<std::size_t>(i)] = 1.0;
  return knots;
}

inline void check_clamped(const std::vector<double>& knots, int n_control,
                          int degree) {
  const auto m = static_cast<std::size_t>(n_control + degree + 1);
  if (knots.size() != m) throw DimensionError("B-spline: knot vector has wrong length");
  for (std::size_t i = 0; i + 1 < m; ++i) {
    if (!(knots[i] <= knots[i + 1]) || !std::isfinite(knots[i])) {
      throw std::invalid_argument("B-spline: knots must be nondecreasing");
    }
  }
  for (int i = 0; i <= degree; ++i) {
    if (knots[static_cast<std::size_t>(i)] != 0.0 || knots[m - 1 - static_cast<std::size_t>(i)] != 1.0) {
      throw std::invalid_argument("B-spline: knots must be clamped to [0, 1]");
    }
  }
  for (std::size_t i = static_cast<std::size_t>(degree) + 1; i + degree + 1 < m; ++i) {
    if (!(knots[i] > 0.0 && knots[i] < 1.0)) {
      throw std::invalid_argument("B-spline: interior knots must lie in (0, 1)");
    }
  }
}

// A plain B-spline curve in s in [0, 1] (no time scaling).
struct SplineCurve {
  int degree = 0;
  std::vector<double> knots;
  Mat points;  // rows are control points

  int span(double x) const {
    const int n = static_cast<int>(points.rows());
    if (x >= knots[static_cast<std::size_t>(n)]) {
      // Last non-degenerate span.
      int k = n - 1;
      while (k > degree && knots[static_cast<std::size_t>(k)] == knots[static_cast<std::size_t>(k + 1)]) --k;
      return k;
    }
    auto it = std::upper_bound(knots.begin() + degree, knots.begin() + n, x);
    return static_cast<int>(it - knots.begin()) - 1;
  }

  // de Boor recursion.
  JointVec eval(double x) const {
    if (points.rows() == 0) return JointVec();
    if (degree == 0) return points.row(span(x)).transpose();
    const int k = span(x);
    const int p = degree;
    Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor,
                  kMaxSplineDegree + 1, kMaxLinks>
        d(p + 1, points.cols());
    for (int j = 0; j <= p; ++j) d.row(j) = points.row(j + k - p);
    for (int r = 1; r <= p; ++r) {
      for (int j = p; j >= r; --j) {
        const double lo = knots[static_cast<std::size_t>(j + k - p)];
        const double hi = knots[static_cast<std::size_t>(j + 1 + k - r)];
        const double alpha = hi > lo ? (x - lo) / (hi - lo) : 0.0;
        d.row(j) = (1.0 - alpha) * d.row(j - 1) + alpha * d.row(j);
      }
    }
    return d.row(p).transpose();
  }

  SplineCurve derivative() const {
    SplineCurve out;
    out.degree = degree - 1;
    out.knots.assign(knots.begin() + 1, knots.end() - 1);
    const Eigen::Index n = points.rows();
    out.points.resize(n - 1, points.cols());
    for (Eigen::Index i = 0; i + 1 < n; ++i) {
      const double den = knots[static_cast<std::size_t>(i + degree + 1)] -
                         knots[static_cast<std::size_t>(i + 1)];
      out.points.row(i) = den > 0.0 ? Eigen::RowVectorXd(degree * (points.row(i + 1) - points.row(i)) / den)
                                    : Eigen::RowVectorXd::Zero(points.cols());
    }
    return out;
  }
};

}  // namespace detail

/// Immutable clamped B-spline reference with quintic time scaling.
class BSplineTrajectory {
 public:
  BSplineTrajectory(int degree, std::vector<double> knots, Mat control_points,
                    double duration)
      : scaling_{duration} {
    if (degree < 3 || degree > kMaxSplineDegree) {
      throw std::invalid_argument("BSplineTrajectory: degree must be in [3, 9]");
    }
    if (control_points.cols() < 1 || control_points.cols() > kMaxLinks) {
      throw DimensionError("BSplineTrajectory: joint count must be in [1, 6]");
    }
    if (!(duration > 0.0)) throw std::invalid_argument("BSplineTrajectory: duration must be > 0");
    if (control_points.rows() < degree + 1) {
      throw DimensionError("BSplineTrajectory: need at least degree + 1 control points");
    }
    require_finite(control_points, "BSplineTrajectory control points");
    detail::check_clamped(knots, static_cast<int>(control_points.rows()), degree);
    curve_.degree = degree;
    curve_.knots = std::move(knots);
    curve_.points = std::move(control_points);
    d1_ = curve_.derivative();
    d2_ = d1_.derivative();
  }

  int degree() const { return curve_.degree; }
  const std::vector<double>& knots() const { return curve_.knots; }
  const Mat& control_points() const { return curve_.points; }
  double duration() const { return scaling_.duration; }
  int n_joints() const { return static_cast<int>(curve_.points.cols()); }
  int n_control() const { return static_cast<int>(curve_.points.rows()); }
  const TimeScaling& time_scaling() const { return scaling_; }

  /// Position and first/second derivatives with respect to the path
  /// parameter s.
  Vec curve(double s) const { return curve_.eval(s); }
  Vec curve_ds(double s) const { return d1_.eval(s); }
  Vec curve_dds(double s) const { return d2_.eval(s); }

  ReferenceSample eval(double t) const {
    const double T = scaling_.duration;
    if (!(t >= 0.0 && t <= T)) {
      // Tolerate accumulated round-off on the time grid.
      if (t < -1e-9 * T || t > T * (1.0 + 1e-9) || !std::isfinite(t)) {
        throw std::out_of_range("eval_reference: t outside [0, T]");
      }
      t = std::clamp(t, 0.0, T);
    }
    const double s = scaling_.s(t), ds = scaling_.ds(t), dds = scaling_.dds(t);
    const JointVec c1 = d1_.eval(s);
    return {curve_.eval(s), c1 * ds, d2_.eval(s) * ds * ds + c1 * dds};
  }

  bool operator==(const BSplineTrajectory& o) const {
    return curve_.degree == o.curve_.degree && curve_.knots == o.curve_.knots &&
           curve_.points == o.curve_.points && scaling_.duration == o.scaling_.duration;
  }

 private:
  TimeScaling scaling_;
  detail::SplineCurve curve_;
  detail::SplineCurve d1_;
  detail::SplineCurve d2_;
};

inline ReferenceSample eval_reference(const BSplineTrajectory& traj, double t) {
  return traj.eval(t);
}

/// Flat design vector: interior control points (row by row) followed by the
/// interior knots when knot optimisation is enabled.
inline int design_size(const SplineConfig& cfg, int n_joints) {
  return (cfg.n_control - 2) * n_joints +
         (cfg.optimize_knots ? cfg.n_interior_knots() : 0);
}

inline BSplineTrajectory make_spline(const Boundary& boundary, const Vec& d,
                                     const SplineConfig& cfg) {
  cfg.validate();
  const auto n = boundary.q0.size();
  require_size(boundary.qT.size(), n, "Boundary qT");
  if (n < 1) throw DimensionError("make_spline: empty boundary configuration");
  require_size(d.size(), design_size(cfg, static_cast<int>(n)), "make_spline design vector");
  const int N = cfg.n_control;
  Mat C(N, n);
  C.row(0) = boundary.q0.transpose();
  C.row(N - 1) = boundary.qT.transpose();
  for (int i = 1; i < N - 1; ++i) {
    C.row(i) = d.segment((i - 1) * n, n).transpose();
  }
  std::vector<double> knots = detail::clamped_uniform_knots(N, cfg.degree);
  if (cfg.optimize_knots) {
    const Eigen::Index off = (N - 2) * n;
    for (int i = 0; i < cfg.n_interior_knots(); ++i) {
      knots[static_cast<std::size_t>(cfg.degree + 1 + i)] = d(off + i);
    }
  }
  return BSplineTrajectory(cfg.degree, std::move(knots), std::move(C), cfg.duration);
}

/// Inverse of make_spline for the free part of a trajectory.
inline Vec pack_design(const BSplineTrajectory& traj, bool include_knots) {
  const int N = traj.n_control();
  const int n = traj.n_joints();
  const int nk = N - traj.degree() - 1;
  Vec d((N - 2) * n + (include_knots ? nk : 0));
  for (int i = 1; i < N - 1; ++i) {
    d.segment((i - 1) * n, n) = traj.control_points().row(i).transpose();
  }
  if (include_knots) {
    for (int i = 0; i < nk; ++i) {
      d((N - 2) * n + i) = traj.knots()[static_cast<std::size_t>(traj.degree() + 1 + i)];
    }
  }
  return d;
}

inline Boundary boundary_of(const BSplineTrajectory& traj) {
  return {traj.control_points().row(0).transpose(),
          traj.control_points().row(traj.n_control() - 1).transpose()};
}

inline SplineConfig config_of(const BSplineTrajectory& traj, bool include_knots) {
  SplineConfig cfg;
  cfg.degree = traj.degree();
  cfg.n_control = traj.n_control();
  cfg.duration = traj.duration();
  cfg.optimize_knots = include_knots;
  return cfg;
}

/// Control points on the straight line between the boundary configurations
/// (and uniform knots).
inline Vec straight_line_design(const Boundary& boundary, const SplineConfig& cfg) {
  cfg.validate();
  const auto n = boundary.q0.size();
  const int N = cfg.n_control;
  Vec d(design_size(cfg, static_cast<int>(n)));
  for (int i = 1; i < N - 1; ++i) {
    const double a = static_cast<double>(i) / static_cast<double>(N - 1);
    d.segment((i - 1) * n, n) = (1.0 - a) * boundary.q0 + a * boundary.qT;
  }
  if (cfg.optimize_knots) {
    const auto knots = detail::clamped_uniform_knots(N, cfg.degree);
    for (int i = 0; i < cfg.n_interior_knots(); ++i) {
      d((N - 2) * n + i) = knots[static_cast<std::size_t>(cfg.degree + 1 + i)];
    }
  }
  return d;
}

// ---------------------------------------------------------------------------
// CSV

/// Samples t, q_d, dq_d, ddq_d on a uniform grid with `n_samples` rows.
inline void write_reference_csv(const BSplineTrajectory& traj, std::ostream& os,
                                int n_samples = 501) {
  const int n = traj.n_joints();
  os << "t";
  for (int j = 0; j < n; ++j) os << ",q" << j;
  for (int j = 0; j < n; ++j) os << ",dq" << j;
  for (int j = 0; j < n; ++j) os << ",ddq" << j;
  os << '\n' << std::setprecision(17);
  for (int k = 0; k < n_samples; ++k) {
    const double t = traj.duration() * k / std::max(1, n_samples - 1);
    const auto r = traj.eval(t);
    os << t;
    for (int j = 0; j < n; ++j) os << ',' << r.q(j);
    for (int j = 0; j < n; ++j) os << ',' << r.dq(j);
    for (int j = 0; j < n; ++j) os << ',' << r.ddq(j);
    os << '\n';
  }
}

struct SampledReference {
  std::vector<double> t;
  std::vector<ReferenceSample> samples;
};

inline SampledReference read_reference_csv(std::istream& is) {
  SampledReference out;
  std::string line;
  if (!std::getline(is, line)) throw std::runtime_error("reference CSV: empty input");
  const auto cols = std::count(line.begin(), line.end(), ',') + 1;
  if ((cols - 1) % 3 != 0 || cols < 4) throw std::runtime_error("reference CSV: bad header");
  const auto n = (cols - 1) / 3;
  while (std::getline(is, line)) {
    if (line.empty()) continue;
    std::stringstream ss(line);
    std::string cell;
    std::vector<double> v;
    while (std::getline(ss, cell, ',')) v.push_back(std::stod(cell));
    if (static_cast<long>(v.size()) != cols) throw std::runtime_error("reference CSV: ragged row");
    ReferenceSample r{Vec(n), Vec(n), Vec(n)};
    for (long j = 0; j < n; ++j) {
      r.q(j) = v[static_cast<std::size_t>(1 + j)];
      r.dq(j) = v[static_cast<std::size_t>(1 + n + j)];
      r.ddq(j) = v[static_cast<std::size_t>(1 + 2 * n + j)];
    }
    out.t.push_back(v[0]);
    out.samples.push_back(std::move(r));
  }
  return out;
}

/// Full spline definition: "degree,duration,n_control,n_joints", knots, then
/// one control point per row.
inline void write_spline(const BSplineTrajectory& traj, std::ostream& os) {
  os << std::setprecision(17);
  os << traj.degree() << ',' << traj.duration() << ',' << traj.n_control() << ','
     << traj.n_joints() << '\n';
  for (std::size_t i = 0; i < traj.knots().size(); ++i) {
    os << (i ? "," : "") << traj.knots()[i];
  }
  os << '\n';
  for (int i = 0; i < traj.n_control(); ++i) {
    for (int j = 0; j < traj.n_joints(); ++j) {
      os << (j ? "," : "") << traj.control_points()(i, j);
    }
    os << '\n';
  }
}

inline BSplineTrajectory read_spline(std::istream& is) {
  auto split = [](const std::string& line) {
    std::vector<double> v;
    std::stringstream ss(line);
    std::string cell;
    while (std::getline(ss, cell, ',')) v.push_back(std::stod(cell));
    return v;
  };
  std::string line;
  if (!std::getline(is, line)) throw std::runtime_error("spline file: empty input");
  const auto head = split(line);
  if (head.size() != 4) throw std::runtime_error("spline file: bad header");
  const int degree = static_cast<int>(head[0]);
  const double duration = head[1];
  const int N = static_cast<int>(head[2]);
  const int n = static_cast<int>(head[3]);
  if (!std::getline(is, line)) throw std::runtime_error("spline file: missing knots");
  std::vector<double> knots = split(line);
  Mat C(N, n);
  for (int i = 0; i < N; ++i) {
    if (!std::getline(is, line)) throw std::runtime_error("spline file: missing control points");
    const auto row = split(line);
    if (static_cast<int>(row.size()) != n) throw std::runtime_error("spline file: ragged row");
    for (int j = 0; j < n; ++j) C(i, j) = row[static_cast<std::size_t>(j)];
  }
  return BSplineTrajectory(degree, std::move(knots), std::move(C), duration);
}

}  // namespace dualref
