// Copyright 2026 The Ensemble Dispatch Authors
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

// Batch front-end: coordinated runs, MDP-only runs and ensemble statistics.
//
//   dispatch run   --case C --scenario S [--variant std2|hybrid] --out DIR
//   dispatch mdp   --case C --scenario S --bus B --out DIR
//   dispatch stats [--case C] --scenario S --bus B --t T --n N
//                  --replicates R --out DIR
//   dispatch verify DIR
//
// Exit codes: 0 success, 2 input error, 3 infeasible, 4 not converged,
// 1 anything else.

#include <chrono>
#include <cstdint>
#include <ctime>
#include <iostream>
#include <map>
#include <optional>
#include <string>

#include "CLI11.hpp"
#include "ensdispatch/bundle.h"
#include "ensdispatch/coordinator.h"
#include "ensdispatch/ensemble_stats.h"
#include "ensdispatch/errors.h"
#include "ensdispatch/grid_model.h"
#include "ensdispatch/mdp.h"
#include "ensdispatch/scenario.h"

namespace {

using namespace ensdispatch;

constexpr int kExitOk = 0;
constexpr int kExitOther = 1;
constexpr int kExitInput = 2;
constexpr int kExitInfeasible = 3;
constexpr int kExitNotConverged = 4;

struct CommonArgs {
  std::string case_path;
  std::string scenario_path;
  std::string out_dir;
  std::optional<std::uint64_t> seed;
  int threads = 1;
  bool reproducible = false;
};

struct Inputs {
  GridModel model;
  ScenarioSpec scenario;
  RunManifest manifest;
};

Inputs LoadInputs(const CommonArgs& args, const std::string& command) {
  Inputs in;
  auto read = [](const std::string& path) {
    try {
      return ReadFile(path);
    } catch (const Error& e) {
      throw ParseError(e.what(), 0);
    }
  };
  const std::string case_text = read(args.case_path);
  const std::string scenario_text = read(args.scenario_path);
  in.model = ParseMatpower(case_text);
  in.scenario = LoadScenario(scenario_text, in.model, args.seed);
  in.manifest.command = command;
  in.manifest.inputs["case"] = {args.case_path, GitBlobHash(case_text)};
  in.manifest.inputs["scenario"] = {args.scenario_path,
                                    GitBlobHash(scenario_text)};
  if (in.scenario.seed) {
    in.manifest.parameters["seed"] = std::to_string(*in.scenario.seed);
  }
  if (!args.reproducible) {
    std::time_t now = std::time(nullptr);
    char buf[32];
    std::strftime(buf, sizeof(buf), "%Y-%m-%dT%H:%M:%SZ", std::gmtime(&now));
    in.manifest.started_at = buf;
  }
  return in;
}

int EnsembleIndex(const ScenarioSpec& scenario, int bus) {
  int index = 0;
  for (const auto& [id, spec] : scenario.ensembles) {
    if (id == bus) return index;
    ++index;
  }
  throw ScenarioError("bus " + std::to_string(bus) + " hosts no ensemble");
}

// Solves the MDP of one ensemble with zero multipliers.
MdpTrajectory SolveUncoupled(const EnsembleSpec& spec) {
  const int T = spec.horizon();
  std::vector<double> zero(T, 0.0);
  return SolveMdp(spec, EffectiveUtility(spec.cost, zero, zero, spec.p_mw,
                                         spec.q_mvar));
}

int RunCommand(const CommonArgs& args, const std::string& variant_flag) {
  using Clock = std::chrono::steady_clock;
  const Clock::time_point start = Clock::now();
  Inputs in = LoadInputs(args, "run");
  if (!variant_flag.empty()) {
    in.scenario.algorithm.variant = ParseVariant(variant_flag);
  }
  const AlgorithmOptions& algo = in.scenario.algorithm;
  CoordinatedProblem problem = BuildProblem(in.model, in.scenario);

  ExecutionOptions exec;
  exec.threads = args.threads;
  Solution sol = Run(problem, exec);

  RunManifest& m = in.manifest;
  m.parameters["variant"] = VariantName(algo.variant);
  m.parameters["tol_primal"] = FormatDouble(algo.tol_primal);
  m.parameters["tol_dual"] = FormatDouble(algo.tol_dual);
  m.parameters["max_iter"] = std::to_string(algo.max_iter);
  m.results["converged"] = sol.converged ? "true" : "false";
  m.results["iterations"] = std::to_string(sol.iterations);
  m.results["reported_iteration"] = std::to_string(sol.reported_iteration);
  m.results["objective"] = FormatDouble(sol.objective);
  m.results["loss_term"] = FormatDouble(sol.loss_term);
  m.results["mdp_term"] = FormatDouble(sol.mdp_term);
  const ResidualMetrics res = Residuals(sol.state);
  m.results["primal_max"] = FormatDouble(res.primal_max);
  m.results["dual_change"] = FormatDouble(res.dual_change);
  if (!args.reproducible) {
    m.timing_ms["step1"] = sol.step1_ms;
    m.timing_ms["step2"] = sol.step2_ms;
    m.timing_ms["total"] =
        std::chrono::duration<double, std::milli>(Clock::now() - start)
            .count();
  }

  const CoordinatorState& s = sol.state;
  std::map<std::string, std::string> files = {
      {"rho.csv", RhoCsv(problem.bus_ids, s.trajectories)},
      {"transitions.csv", TransitionsCsv(problem.bus_ids, s.trajectories)},
      {"dispatch.csv", DispatchCsv(problem, s.dispatch)},
      {"flows.csv", FlowsCsv(problem, s.dispatch)},
      {"losses.csv", LossesCsv(problem, s.dispatch)},
      {"duals.csv", DualsCsv(problem, s.dual)},
      {"ensemble_dispatch.csv", EnsembleDispatchCsv(problem, s)},
      {"iterations.csv", IterationsCsv(sol.history, !args.reproducible)},
  };
  WriteBundle(args.out_dir, files, m);

  std::cerr << VariantName(algo.variant) << ": "
            << (sol.converged ? "converged" : "NOT converged") << " after "
            << sol.iterations << " iterations, primal residual "
            << res.primal_max << ", objective " << sol.objective << "\n";
  return sol.converged ? kExitOk : kExitNotConverged;
}

int MdpCommand(const CommonArgs& args, int bus) {
  Inputs in = LoadInputs(args, "mdp");
  EnsembleIndex(in.scenario, bus);
  const EnsembleSpec& spec = in.scenario.ensembles.at(bus);
  // Energy costs only: the network prices are zero outside coordination.
  MdpTrajectory traj = SolveUncoupled(spec);
  in.manifest.parameters["bus"] = std::to_string(bus);
  in.manifest.results["objective"] = FormatDouble(traj.objective);
  in.manifest.results["mean_spread"] = FormatDouble(MeanSpread(traj));
  std::map<std::string, std::string> files = {
      {"rho.csv", RhoCsv({bus}, {traj})},
      {"transitions.csv", TransitionsCsv({bus}, {traj})},
      {"mdp_summary.csv", MdpSummaryCsv({bus}, {traj})},
  };
  WriteBundle(args.out_dir, files, in.manifest);
  std::cerr << "bus " << bus << ": objective " << traj.objective
            << ", mean spread " << MeanSpread(traj) << "\n";
  return kExitOk;
}

int StatsCommand(const CommonArgs& args, int bus, int t, int n,
                 int replicates) {
  Inputs in = LoadInputs(args, "stats");
  EnsembleIndex(in.scenario, bus);
  const EnsembleSpec& spec = in.scenario.ensembles.at(bus);
  if (t < 0 || t > spec.horizon()) {
    throw ScenarioError("step " + std::to_string(t) + " outside 0.." +
                        std::to_string(spec.horizon()));
  }
  if (n < 1) throw ScenarioError("--n must be at least 1");
  if (replicates < 1) throw ScenarioError("--replicates must be at least 1");
  MdpTrajectory traj = SolveUncoupled(spec);
  const double base = in.model.base_mva;
  const Eigen::VectorXd s =
      spec.s_mva.size() > 0 ? Eigen::VectorXd(spec.s_mva / base)
                            : ApparentPower(spec.p_mw / base, spec.q_mvar / base);
  const std::uint64_t seed = in.scenario.seed.value_or(0);
  StatsReport report =
      RunReplicates(traj.rho[t], s, n, replicates, seed, args.threads);
  RunManifest& m = in.manifest;
  m.parameters["bus"] = std::to_string(bus);
  m.parameters["t"] = std::to_string(t);
  m.parameters["n"] = std::to_string(n);
  m.parameters["replicates"] = std::to_string(replicates);
  m.parameters["seed"] = std::to_string(seed);
  WriteBundle(args.out_dir, {{"stats.csv", StatsCsv(report)}}, m);
  std::cerr << "analytic variance " << report.analytic.variance
            << ", empirical " << report.empirical_variance << ", KS "
            << report.ks_distance << "\n";
  return kExitOk;
}

int VerifyCommand(const std::string& dir) {
  std::vector<std::string> problems = VerifyBundle(dir);
  for (const std::string& p : problems) std::cerr << p << "\n";
  if (problems.empty()) std::cerr << "bundle verified\n";
  return problems.empty() ? kExitOk : kExitInput;
}

void AddCommon(CLI::App* cmd, CommonArgs* args, bool case_required) {
  auto* c = cmd->add_option("--case", args->case_path, "Matpower case file")
                ->envname("DISPATCH_CASE");
  if (case_required) {
    c->required();
  } else {
    args->case_path = ENSDISPATCH_DEFAULT_CASE;
  }
  cmd->add_option("--scenario", args->scenario_path, "scenario file")
      ->envname("DISPATCH_SCENARIO")
      ->required();
  cmd->add_option("--out", args->out_dir, "output directory")
      ->envname("DISPATCH_OUT")
      ->required();
  cmd->add_option("--seed", args->seed, "overrides the scenario [seed]")
      ->envname("DISPATCH_SEED");
  cmd->add_option("--threads", args->threads, "worker threads")
      ->envname("DISPATCH_THREADS")
      ->check(CLI::PositiveNumber);
  cmd->add_flag("--reproducible", args->reproducible,
                "omit timestamps and wall-clock figures")
      ->envname("DISPATCH_REPRODUCIBLE");
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Network-constrained ensemble dispatch"};
  app.require_subcommand(1);

  CommonArgs run_args;
  std::string variant;
  CLI::App* run = app.add_subcommand("run", "coordinated ST-D2 / hybrid run");
  AddCommon(run, &run_args, true);
  run->add_option("--variant", variant, "std2 or hybrid (default: scenario)")
      ->envname("DISPATCH_VARIANT")
      ->check(CLI::IsMember({"std2", "hybrid"}));

  CommonArgs mdp_args;
  int mdp_bus = 0;
  CLI::App* mdp = app.add_subcommand("mdp", "single-ensemble MDP, no network");
  AddCommon(mdp, &mdp_args, true);
  mdp->add_option("--bus", mdp_bus, "ensemble bus id")->required();

  CommonArgs stats_args;
  int stats_bus = 0, stats_t = 0, stats_n = 0, stats_replicates = 0;
  CLI::App* stats =
      app.add_subcommand("stats", "finite-ensemble aggregate statistics");
  AddCommon(stats, &stats_args, false);
  stats->add_option("--bus", stats_bus, "ensemble bus id")->required();
  stats->add_option("--t", stats_t, "step of rho(t)")->required();
  stats->add_option("--n", stats_n, "devices per sample")->required();
  stats->add_option("--replicates", stats_replicates, "number of samples")
      ->required();

  std::string verify_dir;
  CLI::App* verify =
      app.add_subcommand("verify", "recheck the hashes of a bundle");
  verify->add_option("dir", verify_dir, "bundle directory")->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? kExitOk : kExitInput;
  }

  try {
    if (*run) return RunCommand(run_args, variant);
    if (*mdp) return MdpCommand(mdp_args, mdp_bus);
    if (*stats) {
      return StatsCommand(stats_args, stats_bus, stats_t, stats_n,
                          stats_replicates);
    }
    if (*verify) return VerifyCommand(verify_dir);
  } catch (const InfeasibleError& e) {
    std::cerr << "infeasible: " << e.what() << "\n";
    return kExitInfeasible;
  } catch (const DivergenceError& e) {
    std::cerr << "diverged: " << e.what() << "\n";
    return kExitNotConverged;
  } catch (const ParseError& e) {
    std::cerr << "parse error: " << e.what() << "\n";
    return kExitInput;
  } catch (const ModelError& e) {
    std::cerr << "model error: " << e.what() << "\n";
    return kExitInput;
  } catch (const ScenarioError& e) {
    std::cerr << "scenario error: " << e.what() << "\n";
    return kExitInput;
  } catch (const DimensionError& e) {
    std::cerr << "input error: " << e.what() << "\n";
    return kExitInput;
  } catch (const Error& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitOther;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitOther;
  }
  return kExitOther;
}
