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

#include "ensdispatch/coordinator.h"

#include <algorithm>
#include <atomic>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <exception>
#include <limits>
#include <mutex>
#include <numeric>
#include <thread>

#include "ensdispatch/errors.h"

namespace ensdispatch {
namespace {

using Clock = std::chrono::steady_clock;

double MillisecondsSince(Clock::time_point start) {
  return std::chrono::duration<double, std::milli>(Clock::now() - start)
      .count();
}

std::vector<int> VisitOrder(const std::vector<int>& requested, int n) {
  if (requested.empty()) {
    std::vector<int> order(n);
    std::iota(order.begin(), order.end(), 0);
    return order;
  }
  std::vector<int> sorted = requested;
  std::sort(sorted.begin(), sorted.end());
  for (int k = 0; k < n; ++k) {
    if (static_cast<int>(sorted.size()) != n || sorted[k] != k) {
      throw DimensionError("visiting order is not a permutation of 0.." +
                           std::to_string(n - 1));
    }
  }
  return requested;
}

// Runs body(k) for every k in `order`. Each k writes only its own slot, so the
// outcome is independent of the schedule. The exception of the smallest
// failing k is rethrown.
template <typename Body>
void ForEach(const std::vector<int>& order, int threads, Body body) {
  const int n = static_cast<int>(order.size());
  std::vector<std::exception_ptr> errors(n);
  auto guarded = [&](int slot) {
    try {
      body(order[slot]);
    } catch (...) {
      errors[slot] = std::current_exception();
    }
  };
  const int workers = std::clamp(threads, 1, std::max(n, 1));
  if (workers == 1) {
    for (int slot = 0; slot < n; ++slot) guarded(slot);
  } else {
    std::atomic<int> next{0};
    std::vector<std::thread> pool;
    pool.reserve(workers);
    for (int w = 0; w < workers; ++w) {
      pool.emplace_back([&] {
        for (int slot = next++; slot < n; slot = next++) guarded(slot);
      });
    }
    for (std::thread& th : pool) th.join();
  }
  int first = -1;
  for (int slot = 0; slot < n; ++slot) {
    if (errors[slot] && (first < 0 || order[slot] < order[first])) first = slot;
  }
  if (first >= 0) std::rethrow_exception(errors[first]);
}

// Step 1, shared by both schemes.
void SolveEnsembles(const CoordinatedProblem& problem, CoordinatorState* state,
                    const ExecutionOptions& options) {
  const int n = problem.n_ensembles();
  const int T = problem.horizon();
  state->trajectories.resize(n);
  ForEach(VisitOrder(options.ensemble_order, n), options.threads, [&](int i) {
    const Eigen::VectorXd lp = state->dual.lambda_p.row(i).transpose();
    const Eigen::VectorXd lq = state->dual.lambda_q.row(i).transpose();
    EffectiveCost cost = EffectiveUtility(
        problem.ensembles[i].cost, std::span<const double>(lp.data(), T),
        std::span<const double>(lq.data(), T), problem.p_pu[i],
        problem.q_pu[i]);
    state->trajectories[i] =
        SolveMdp(problem.ensembles[i], cost, options.row);
  });
  for (int i = 0; i < n; ++i) {
    const MdpTrajectory& traj = state->trajectories[i];
    for (int t = 1; t <= T; ++t) {
      state->expected_p(i, t - 1) = problem.p_pu[i].dot(traj.rho[t]);
      state->expected_q(i, t - 1) = problem.q_pu[i].dot(traj.rho[t]);
    }
  }
}

double StepAt(const CoordinatedProblem& problem, int i, int t, int iteration) {
  double step = problem.base_step(i, t - 1);
  if (problem.algorithm.schedule == StepSchedule::kInverseSqrt) {
    step /= std::sqrt(static_cast<double>(iteration));
  }
  return step;
}

void Record(CoordinatorState* state, const Eigen::MatrixXd& old_p,
            const Eigen::MatrixXd& old_q, double step1_ms, double step2_ms) {
  DualState& dual = state->dual;
  IterationRecord rec;
  rec.iteration = dual.iteration;
  rec.primal_max = 0.0;
  if (state->residual_p.size() > 0) {
    rec.primal_max = std::max(state->residual_p.cwiseAbs().maxCoeff(),
                              state->residual_q.cwiseAbs().maxCoeff());
  }
  rec.primal_l2 = std::sqrt(state->residual_p.squaredNorm() +
                            state->residual_q.squaredNorm());
  rec.dual_change = 0.0;
  if (old_p.size() > 0) {
    rec.dual_change = std::max((dual.lambda_p - old_p).cwiseAbs().maxCoeff(),
                               (dual.lambda_q - old_q).cwiseAbs().maxCoeff());
  }
  rec.step1_ms = step1_ms;
  rec.step2_ms = step2_ms;
  dual.history.push_back(rec);
}

std::string FormatResidual(double r) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%.3g", r);
  return buf;
}

bool AllFinite(const CoordinatorState& state) {
  return state.dual.lambda_p.allFinite() && state.dual.lambda_q.allFinite() &&
         state.residual_p.allFinite() && state.residual_q.allFinite();
}

}  // namespace

CoordinatedProblem BuildProblem(const GridModel& model,
                                const ScenarioSpec& scenario) {
  CoordinatedProblem problem;
  const int T = scenario.horizon;
  if (T < 1) throw ScenarioError("horizon must be at least one step");
  if (static_cast<int>(scenario.loss_weight.size()) != T) {
    throw DimensionError("loss weights do not span the horizon");
  }
  const double base = model.base_mva;
  NetworkSetup& net = problem.network;
  net.model = model;
  net.tree = ValidateRadial(model);
  net.fixed_load = RatedLoads(model);
  net.control_limits.assign(model.buses.size(), InjectionLimits{});
  for (const auto& [bus, bounds] : scenario.controls) {
    net.control_limits[model.IndexOf(bus)] = {
        bounds.p_min / base, bounds.p_max / base, bounds.q_min / base,
        bounds.q_max / base};
  }
  for (const auto& [bus, spec] : scenario.ensembles) {
    if (spec.horizon() != T) {
      throw DimensionError("ensemble at bus " + std::to_string(bus) +
                           " does not span the horizon");
    }
    spec.Validate();
    const int pos = model.IndexOf(bus);
    if (scenario.replaced_loads.count(bus)) net.fixed_load[pos] = {};
    problem.bus_ids.push_back(bus);
    problem.ensembles.push_back(spec);
    problem.p_pu.push_back(spec.p_mw / base);
    problem.q_pu.push_back(spec.q_mvar / base);
    net.ensemble_buses.push_back(pos);
    net.ensemble_limits.push_back(
        {problem.p_pu.back().minCoeff(), problem.p_pu.back().maxCoeff(),
         problem.q_pu.back().minCoeff(), problem.q_pu.back().maxCoeff()});
  }
  PrepareNetwork(&net);

  problem.loss_weight = scenario.loss_weight;
  problem.algorithm = scenario.algorithm;
  const int n = problem.n_ensembles();
  problem.base_step.resize(n, T);
  for (int i = 0; i < n; ++i) {
    auto it = scenario.algorithm.bus_step.find(problem.bus_ids[i]);
    const double step = it != scenario.algorithm.bus_step.end()
                            ? it->second
                            : scenario.algorithm.step;
    const int pos = net.ensemble_buses[i];
    const double v0 = model.v0();
    for (int t = 0; t < T; ++t) {
      double scale = 1.0;
      switch (scenario.algorithm.step_units) {
        case StepUnits::kAbsolute:
          break;
        case StepUnits::kLossWeight:
          scale = problem.loss_weight[t];
          break;
        case StepUnits::kCurvature:
          scale = 2.0 * problem.loss_weight[t] * net.shared_r(pos, pos) /
                  (v0 * v0);
          break;
      }
      problem.base_step(i, t) = step * scale;
    }
  }
  return problem;
}

CoordinatorState InitialState(const CoordinatedProblem& problem) {
  const int n = problem.n_ensembles();
  const int T = problem.horizon();
  CoordinatorState state;
  state.dual.lambda_p = Eigen::MatrixXd::Zero(n, T);
  state.dual.lambda_q = Eigen::MatrixXd::Zero(n, T);
  state.dual.step = Eigen::MatrixXd::Zero(n, T);
  for (Eigen::MatrixXd* m :
       {&state.expected_p, &state.expected_q, &state.network_p,
        &state.network_q, &state.residual_p, &state.residual_q}) {
    *m = Eigen::MatrixXd::Zero(n, T);
  }
  return state;
}

void Std2Iterate(const CoordinatedProblem& problem, CoordinatorState* state,
                 const ExecutionOptions& options) {
  const int n = problem.n_ensembles();
  const int T = problem.horizon();
  DualState& dual = state->dual;
  ++dual.iteration;

  Clock::time_point start = Clock::now();
  SolveEnsembles(problem, state, options);
  const double step1_ms = MillisecondsSince(start);

  start = Clock::now();
  state->dispatch.resize(T);
  ForEach(VisitOrder(options.time_order, T), options.threads, [&](int k) {
    const Eigen::VectorXd lp = dual.lambda_p.col(k);
    const Eigen::VectorXd lq = dual.lambda_q.col(k);
    state->dispatch[k] = DispatchStepDual(
        problem.network, problem.loss_weight[k],
        std::span<const double>(lp.data(), n),
        std::span<const double>(lq.data(), n), options.qp);
  });
  const double step2_ms = MillisecondsSince(start);

  const Eigen::MatrixXd old_p = dual.lambda_p;
  const Eigen::MatrixXd old_q = dual.lambda_q;
  for (int t = 1; t <= T; ++t) {
    const DispatchStep& d = state->dispatch[t - 1];
    for (int i = 0; i < n; ++i) {
      const Injection& inj = d.ensemble[problem.network.ensemble_buses[i]];
      state->network_p(i, t - 1) = inj.p;
      state->network_q(i, t - 1) = inj.q;
      const double rp = state->expected_p(i, t - 1) - inj.p;
      const double rq = state->expected_q(i, t - 1) - inj.q;
      state->residual_p(i, t - 1) = rp;
      state->residual_q(i, t - 1) = rq;
      const double step = StepAt(problem, i, t, dual.iteration);
      dual.step(i, t - 1) = step;
      dual.lambda_p(i, t - 1) += step * rp;
      dual.lambda_q(i, t - 1) += step * rq;
    }
  }
  Record(state, old_p, old_q, step1_ms, step2_ms);
}

void HybridIterate(const CoordinatedProblem& problem, CoordinatorState* state,
                   const ExecutionOptions& options) {
  const int n = problem.n_ensembles();
  const int T = problem.horizon();
  DualState& dual = state->dual;
  ++dual.iteration;

  Clock::time_point start = Clock::now();
  SolveEnsembles(problem, state, options);
  const double step1_ms = MillisecondsSince(start);

  start = Clock::now();
  state->dispatch.resize(T);
  std::vector<PinnedDispatch> pinned(T);
  ForEach(VisitOrder(options.time_order, T), options.threads, [&](int k) {
    std::vector<Injection> injections(n);
    for (int i = 0; i < n; ++i) {
      injections[i] = {state->expected_p(i, k), state->expected_q(i, k)};
    }
    pinned[k] = DispatchStepPinned(problem.network, problem.loss_weight[k],
                                   injections, options.qp);
  });
  const double step2_ms = MillisecondsSince(start);

  const Eigen::MatrixXd old_p = dual.lambda_p;
  const Eigen::MatrixXd old_q = dual.lambda_q;
  for (int k = 0; k < T; ++k) {
    for (int i = 0; i < n; ++i) {
      state->residual_p(i, k) = state->expected_p(i, k) - state->network_p(i, k);
      state->residual_q(i, k) = state->expected_q(i, k) - state->network_q(i, k);
      state->network_p(i, k) = state->expected_p(i, k);
      state->network_q(i, k) = state->expected_q(i, k);
      dual.lambda_p(i, k) = pinned[k].lambda_p[i];
      dual.lambda_q(i, k) = pinned[k].lambda_q[i];
    }
    state->dispatch[k] = std::move(pinned[k].dispatch);
  }
  dual.step.setZero();
  Record(state, old_p, old_q, step1_ms, step2_ms);
}

ResidualMetrics Residuals(const CoordinatorState& state) {
  if (state.dual.history.empty()) throw Error("no iterations");
  const IterationRecord& rec = state.dual.history.back();
  return {rec.primal_max, rec.primal_l2, rec.dual_change};
}

double IntegratedObjective(const CoordinatedProblem& problem,
                           const std::vector<MdpTrajectory>& trajectories,
                           const std::vector<DispatchStep>& dispatch,
                           double* loss_term, double* mdp_term) {
  const NetworkSetup& net = problem.network;
  const int n = problem.n_ensembles();
  const int T = problem.horizon();
  if (static_cast<int>(trajectories.size()) != n ||
      static_cast<int>(dispatch.size()) != T) {
    throw DimensionError("solution does not match the problem");
  }
  double loss = 0.0;
  for (int t = 1; t <= T; ++t) {
    std::vector<Injection> injections = net.fixed_load;
    const DispatchStep& d = dispatch[t - 1];
    for (size_t b = 0; b < injections.size(); ++b) {
      injections[b].p += d.control[b].p;
      injections[b].q += d.control[b].q;
    }
    for (int i = 0; i < n; ++i) {
      Injection& inj = injections[net.ensemble_buses[i]];
      inj.p += problem.p_pu[i].dot(trajectories[i].rho[t]);
      inj.q += problem.q_pu[i].dot(trajectories[i].rho[t]);
    }
    loss += problem.loss_weight[t - 1] *
            Losses(net.model, TreeFlows(net.model, net.tree, injections));
  }
  double mdp = 0.0;
  for (int i = 0; i < n; ++i) {
    mdp += TrajectoryObjective(problem.ensembles[i], trajectories[i],
                               problem.ensembles[i].cost);
  }
  if (loss_term) *loss_term = loss;
  if (mdp_term) *mdp_term = mdp;
  return loss + mdp;
}

bool ResidualDiverging(const std::vector<IterationRecord>& history,
                       int window) {
  const int k = static_cast<int>(history.size());
  if (window <= 0 || k <= window) return false;
  double before = std::numeric_limits<double>::infinity();
  for (int j = 0; j < k - window; ++j) {
    before = std::min(before, history[j].primal_max);
  }
  for (int j = k - window; j < k; ++j) {
    if (!(history[j].primal_max > 100.0 * before)) return false;
  }
  return true;
}

Solution Run(const CoordinatedProblem& problem,
             const ExecutionOptions& options) {
  const AlgorithmOptions& algo = problem.algorithm;
  Solution solution;
  solution.variant = algo.variant;
  CoordinatorState state = InitialState(problem);
  CoordinatorState best;
  double best_residual = std::numeric_limits<double>::infinity();
  for (int k = 1; k <= algo.max_iter; ++k) {
    if (algo.variant == Variant::kStd2) {
      Std2Iterate(problem, &state, options);
    } else {
      HybridIterate(problem, &state, options);
    }
    const IterationRecord& rec = state.dual.history.back();
    solution.step1_ms += rec.step1_ms;
    solution.step2_ms += rec.step2_ms;
    if (!AllFinite(state)) {
      throw DivergenceError("non-finite multipliers or residuals at iteration " +
                            std::to_string(k));
    }
    if (rec.primal_max <= algo.tol_primal && rec.dual_change <= algo.tol_dual) {
      solution.converged = true;
      best = state;
      break;
    }
    if (rec.primal_max < best_residual) {
      best_residual = rec.primal_max;
      best = state;
    }
    if (ResidualDiverging(state.dual.history, algo.divergence_window)) {
      throw DivergenceError(
          "primal residual stayed above 100x its earlier minimum for " +
          std::to_string(algo.divergence_window) +
          " iterations (iteration " + std::to_string(k) + ", residual " +
          FormatResidual(rec.primal_max) + ")");
    }
  }

  solution.history = state.dual.history;
  solution.iterations = state.dual.iteration;
  solution.state = std::move(best);
  solution.reported_iteration = solution.state.dual.iteration;
  solution.objective =
      IntegratedObjective(problem, solution.state.trajectories,
                          solution.state.dispatch, &solution.loss_term,
                          &solution.mdp_term);
  return solution;
}

}  // namespace ensdispatch
