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

// Command-line front end: optimize, simulate, bench, fim.

#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <string>

#include <CLI11.hpp>

#include "dualref/bench.hpp"

namespace fs = std::filesystem;
using namespace dualref;

namespace {

struct Options {
  std::string config;
  std::optional<std::uint64_t> seed;
  std::string out = "out";
  std::string method;
  std::string controller = "nac";
  std::string trajectory;
  int sample = -1;
};

ExperimentConfig load(const Options& o) {
  ExperimentConfig c = o.config.empty() ? ExperimentConfig{} : load_config(o.config);
  if (o.seed) c.seed = *o.seed;
  c.out_dir = o.out;
  c.validate();
  return c;
}

std::ofstream open_out(const std::string& dir, const std::string& name) {
  fs::create_directories(dir);
  std::ofstream os(fs::path(dir) / name);
  if (!os) throw std::runtime_error("cannot write " + (fs::path(dir) / name).string());
  return os;
}

// The reference to run: an explicit spline file, the file a previous
// `optimize` wrote for --method, or the straight line.
std::shared_ptr<const BSplineTrajectory> resolve_reference(const Options& o, const ManipulatorProblem& p) {
  std::string path = o.trajectory;
  if (path.empty() && !o.method.empty()) {
    const Method m = method_from_string(o.method);
    const bool shared = m == Method::kNominal || m == Method::kFim;
    path = (fs::path(o.out) / ("trajectory_" + o.method + (shared ? "" : "_" + o.controller) + ".spline")).string();
  }
  if (path.empty()) return p.reference(p.straight_line());
  std::ifstream is(path);
  if (!is) throw std::runtime_error("cannot open trajectory " + path);
  auto traj = std::make_shared<const BSplineTrajectory>(read_spline(is));
  require_size(traj->n_joints(), p.model.n_links(), "trajectory joints");
  return traj;
}

int cmd_optimize(const Options& o) {
  const ExperimentConfig c = load(o);
  const Method m = method_from_string(o.method);
  const ControllerKind k = controller_from_string(o.controller);
  std::optional<Vec> nominal;
  if (m == Method::kOl) nominal = generate_trajectory(c, Method::kNominal, ControllerKind::kCtcFixed).design;
  const GeneratedTrajectory g = generate_trajectory(c, m, k, nominal ? &*nominal : nullptr);
  const ManipulatorProblem p = make_problem(c, k);
  const BSplineTrajectory traj = make_spline(p.boundary, g.design, p.spline);
  const std::string stem = trajectory_stem(g);
  {
    auto os = open_out(o.out, "trajectory_" + stem + ".spline");
    write_spline(traj, os);
  }
  {
    auto os = open_out(o.out, "trajectory_" + stem + ".csv");
    write_reference_csv(traj, os);
  }
  {
    auto os = open_out(o.out, "trace_" + stem + ".csv");
    write_trace_csv(g.trace, os);
  }
  {
    auto os = open_out(o.out, "design_" + stem + ".csv");
    write_designs_csv({g}, os);
  }
  std::cout << "method=" << to_string(m) << " controller=" << g.controller << " objective=" << g.objective
            << " trace_fi=" << g.trace_fi << " converged=" << g.converged << " iterations=" << g.iterations
            << '\n';
  return 0;
}

int cmd_simulate(const Options& o) {
  const ExperimentConfig c = load(o);
  const ControllerKind k = controller_from_string(o.controller);
  const ManipulatorProblem p = make_problem(c, k);
  Vec4 truth = p.prior_mean;
  if (o.sample >= 0) {
    truth = sample_payloads(p.prior_mean, payload_prior_covariance(c), o.sample + 1, c.seed).back();
  }
  SimConfig sim = p.sim;
  const int n = c.n_links();
  if (c.torque_noise_std > 0.0) sim.torque_noise_cov = c.torque_noise_std * c.torque_noise_std * Mat::Identity(n, n);
  sim.seed = c.seed;
  const ManipulatorClosedLoop loop(p.model, resolve_reference(o, p), p.gains, sim, p.prior_mean);
  const RolloutLog log = loop.rollout(truth);
  {
    auto os = open_out(o.out, "rollout_" + o.controller + ".csv");
    write_rollout_csv(log, os);
  }
  std::cout << "controller=" << o.controller << " diverged=" << log.diverged
            << " final_pose_error=" << final_pose_error(p.model, log, p.cost.target_position)
            << " task_cost=" << task_cost(p.model, log, p.cost) << '\n';
  return 0;
}

int cmd_bench(const Options& o) {
  ExperimentConfig c = load(o);
  if (!o.method.empty()) c.methods = {method_from_string(o.method)};
  if (!o.controller.empty() && o.controller != "all") c.controllers = {controller_from_string(o.controller)};
  const ExperimentResult res = run_experiment(c);
  write_results(res, o.out);
  for (const auto& s : summarize(res.rows)) {
    std::cout << to_string(s.method) << ' ' << to_string(s.controller) << " median_pose_error=" << s.pose_median
              << " diverged=" << s.n_diverged << '/' << s.n << '\n';
  }
  return 0;
}

int cmd_fim(const Options& o) {
  const ExperimentConfig c = load(o);
  const ManipulatorProblem p = make_problem(c, ControllerKind::kCtcFixed);
  const ManipulatorClosedLoop loop(p.model, resolve_reference(o, p), p.gains,
                                   [&] { SimConfig s = p.sim; s.record_regressor = true; return s; }(),
                                   p.prior_mean);
  const RolloutLog log = loop.rollout(p.prior_mean);
  if (log.diverged) throw NumericalError("fim: nominal rollout diverged");
  const FisherInfo fi = fisher_information(log, p.fi_noise);
  auto os = open_out(o.out, "fim.csv");
  os << "row,c0,c1,c2,c3\n" << std::setprecision(17);
  for (int i = 0; i < 4; ++i) {
    os << i;
    for (int j = 0; j < 4; ++j) os << ',' << fi.I(i, j);
    os << '\n';
  }
  auto crit = open_out(o.out, "fim_criteria.csv");
  crit << "criterion,value\n" << std::setprecision(17);
  for (auto [name, kind] : {std::pair{"A", OedKind::kA}, {"D", OedKind::kD}, {"E", OedKind::kE}, {"T", OedKind::kT}}) {
    try {
      crit << name << ',' << oed_criterion(fi, kind) << '\n';
    } catch (const RankDeficientError&) {
      crit << name << ",inf\n";
    }
  }
  std::cout << "trace_fi=" << fi.I.trace() << '\n';
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Dual-control reference trajectories for a manipulator with an uncertain payload"};
  app.require_subcommand(1);
  Options o;
  auto common = [&](CLI::App* sub) {
    sub->add_option("--config", o.config, "INI configuration file");
    sub->add_option("--seed", o.seed, "Master seed (overrides the config)");
    sub->add_option("--out", o.out, "Output directory");
    sub->add_option("--method", o.method, "nominal | fim | ro | ol");
    sub->add_option("--controller", o.controller, "nac | ctc-rls | ctc-fixed | sl-gradient");
  };
  auto* opt = app.add_subcommand("optimize", "Generate one reference trajectory");
  common(opt);
  opt->get_option("--method")->required();
  auto* sim = app.add_subcommand("simulate", "One closed-loop rollout of a saved reference");
  common(sim);
  sim->add_option("--trajectory", o.trajectory, "Spline file (default: the --method output in --out, else straight line)");
  sim->add_option("--sample", o.sample, "Payload sample index (default: nominal payload)");
  auto* bench = app.add_subcommand("bench", "Full method x controller x payload grid");
  common(bench);
  auto* fim = app.add_subcommand("fim", "Fisher information and OED criteria of a reference");
  common(fim);
  fim->add_option("--trajectory", o.trajectory, "Spline file (default: the --method output in --out, else straight line)");

  CLI11_PARSE(app, argc, argv);
  if (bench->parsed() && bench->get_option("--controller")->count() == 0) o.controller = "all";
  try {
    if (opt->parsed()) return cmd_optimize(o);
    if (sim->parsed()) return cmd_simulate(o);
    if (bench->parsed()) return cmd_bench(o);
    if (fim->parsed()) return cmd_fim(o);
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 1;
  }
  return 0;
}
