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

#ifndef ENSDISPATCH_COORDINATOR_H_
#define ENSDISPATCH_COORDINATOR_H_

#include <vector>

#include <Eigen/Dense>

#include "ensdispatch/box_qp.h"
#include "ensdispatch/grid_flow.h"
#include "ensdispatch/grid_model.h"
#include "ensdispatch/mdp.h"
#include "ensdispatch/scenario.h"

namespace ensdispatch {

// Everything the iterations need, in per-unit. Matrices indexed (i, t - 1)
// refer to ensemble i (ascending bus id) at step t = 1..T; step t couples
// rho(t) to the network solve of step t.
struct CoordinatedProblem {
  NetworkSetup network;
  std::vector<int> bus_ids;             // ensemble buses, ascending
  std::vector<EnsembleSpec> ensembles;  // as configured (MW / MVAr)
  std::vector<Eigen::VectorXd> p_pu;    // per-state powers, per-unit
  std::vector<Eigen::VectorXd> q_pu;
  std::vector<double> loss_weight;      // mu_t
  Eigen::MatrixXd base_step;            // delta(i, t) before the schedule
  AlgorithmOptions algorithm;

  int horizon() const { return static_cast<int>(loss_weight.size()); }
  int n_ensembles() const { return static_cast<int>(bus_ids.size()); }
};

// Builds the per-unit problem. Ensemble buses lose their case load unless the
// scenario keeps it, and their free Step-2 injections are boxed by the hull of
// the per-state powers. Throws ModelError / ScenarioError.
CoordinatedProblem BuildProblem(const GridModel& model,
                                const ScenarioSpec& scenario);

struct IterationRecord {
  int iteration = 0;
  double primal_max = 0.0;  // per-unit
  double primal_l2 = 0.0;
  double dual_change = 0.0;  // max |lambda_k - lambda_{k-1}|
  double step1_ms = 0.0;
  double step2_ms = 0.0;
};

struct DualState {
  Eigen::MatrixXd lambda_p;  // (i, t - 1), currency per per-unit power
  Eigen::MatrixXd lambda_q;
  Eigen::MatrixXd step;      // delta(i, t) of the latest update
  int iteration = 0;
  std::vector<IterationRecord> history;
};

struct CoordinatorState {
  DualState dual;
  std::vector<MdpTrajectory> trajectories;  // per ensemble
  std::vector<DispatchStep> dispatch;       // per step t = 1..T
  // sum_a p^a rho^a(t) and the network-side injection it is compared with.
  // For the hybrid scheme the network side is the previous pinned value.
  Eigen::MatrixXd expected_p, expected_q;
  Eigen::MatrixXd network_p, network_q;
  Eigen::MatrixXd residual_p, residual_q;
};

// All multipliers zero, no iterations.
CoordinatorState InitialState(const CoordinatedProblem& problem);

struct ExecutionOptions {
  int threads = 1;
  // Sequential visiting order of ensembles in Step 1 and of steps in Step 2
  // (empty = natural order). Results do not depend on it.
  std::vector<int> ensemble_order;
  std::vector<int> time_order;
  RowSolverOptions row;
  QpOptions qp;
};

// One ST-D2 sweep: MDPs under the current multipliers, free-injection network
// solves, then lambda += delta * (expected - network).
void Std2Iterate(const CoordinatedProblem& problem, CoordinatorState* state,
                 const ExecutionOptions& options = {});

// One hybrid sweep: MDPs under the current multipliers, network solves with
// the ensemble injections pinned to their expectations, then lambda := the
// pinning-constraint multipliers.
void HybridIterate(const CoordinatedProblem& problem, CoordinatorState* state,
                   const ExecutionOptions& options = {});

struct ResidualMetrics {
  double primal_max = 0.0;
  double primal_l2 = 0.0;
  double dual_change = 0.0;
};

// Metrics of the latest iteration. Throws Error("no iterations") on a fresh
// state.
ResidualMetrics Residuals(const CoordinatorState& state);

// True when every primal residual of the last `window` iterations exceeds 100
// times the smallest one recorded before the window.
bool ResidualDiverging(const std::vector<IterationRecord>& history,
                       int window);

struct Solution {
  Variant variant = Variant::kStd2;
  CoordinatorState state;  // the reported iterate
  std::vector<IterationRecord> history;  // every iteration that ran
  bool converged = false;
  int iterations = 0;
  int reported_iteration = 0;  // differs from `iterations` if not converged
  double objective = 0.0;      // loss term + MDP term
  double loss_term = 0.0;
  double mdp_term = 0.0;
  double step1_ms = 0.0;
  double step2_ms = 0.0;
};

// Iterates until primal_max <= tol_primal and dual_change <= tol_dual or
// max_iter. Without convergence the iterate with the smallest primal residual
// is reported. Throws DivergenceError when the residual blows up over the
// configured window, InfeasibleError from pinned solves.
Solution Run(const CoordinatedProblem& problem,
             const ExecutionOptions& options = {});

// sum_t mu_t loss(t) + sum_i MDP objective under the energy costs U, with
// ensemble injections set to their expectations and the controls of
// `dispatch`. Fills the two parts when requested.
double IntegratedObjective(const CoordinatedProblem& problem,
                           const std::vector<MdpTrajectory>& trajectories,
                           const std::vector<DispatchStep>& dispatch,
                           double* loss_term = nullptr,
                           double* mdp_term = nullptr);

}  // namespace ensdispatch

#endif  // ENSDISPATCH_COORDINATOR_H_
