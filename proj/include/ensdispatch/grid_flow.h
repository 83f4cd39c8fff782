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

#ifndef ENSDISPATCH_GRID_FLOW_H_
#define ENSDISPATCH_GRID_FLOW_H_

#include <span>
#include <vector>

#include <Eigen/Dense>

#include "ensdispatch/box_qp.h"
#include "ensdispatch/grid_model.h"

namespace ensdispatch {

// Bus power, per-unit, consumption positive.
struct Injection {
  double p = 0.0;
  double q = 0.0;
};

// Flow on a branch from the parent bus towards the child, per-unit.
struct BranchFlow {
  double p = 0.0;
  double q = 0.0;
};

// LinDistFlow primitives. Vectors indexed by bus position use
// GridModel::buses order; flows use GridModel::branches order.

// Parent-branch flow of bus j = total injection of the subtree rooted at j.
std::vector<BranchFlow> TreeFlows(const GridModel& model,
                                  const TreeOrder& tree,
                                  std::span<const Injection> injections);

// Squared voltages: v0^2 at the slack, v_j^2 = v_i^2 - 2 (r p_ij + x q_ij).
std::vector<double> Voltages(const GridModel& model, const TreeOrder& tree,
                             std::span<const BranchFlow> flows);

// sum r (p^2 + q^2) / v0^2 (squared voltages frozen at the slack value).
double Losses(const GridModel& model, std::span<const BranchFlow> flows);

// Rated loads of the case in per-unit.
std::vector<Injection> RatedLoads(const GridModel& model);

// Lower/upper limits on one bus quantity pair, per-unit.
struct InjectionLimits {
  double p_min = 0.0;
  double p_max = 0.0;
  double q_min = 0.0;
  double q_max = 0.0;
};

// Static data of the per-step network problem.
struct NetworkSetup {
  GridModel model;
  TreeOrder tree;
  std::vector<int> ensemble_buses;              // bus positions
  std::vector<InjectionLimits> ensemble_limits;  // one per ensemble bus
  std::vector<Injection> fixed_load;            // per bus position
  std::vector<InjectionLimits> control_limits;  // per bus position

  // Filled by PrepareNetwork.
  Eigen::MatrixXd shared_r;
  Eigen::MatrixXd shared_x;
};

// Checks sizes and limits and caches the shared-path matrices. Throws
// ModelError.
void PrepareNetwork(NetworkSetup* setup);

// Network solution of one time step.
struct DispatchStep {
  std::vector<double> v2;            // per bus
  std::vector<Injection> ensemble;   // per bus, zero away from ensembles
  std::vector<Injection> control;    // per bus
  std::vector<BranchFlow> flows;     // per branch
  double loss = 0.0;                 // unweighted, per-unit
  double objective = 0.0;            // value of the step's own objective
  double kkt_residual = 0.0;
  double max_violation = 0.0;
  bool polished = false;
};

struct PinnedDispatch {
  DispatchStep dispatch;
  // Multipliers of the pinning constraints, one per ensemble bus: the
  // sensitivity of the optimal weighted loss to the pinned injections.
  std::vector<double> lambda_p;
  std::vector<double> lambda_q;
};

// Loss minus the dualized ensemble terms; ensemble injections are free inside
// their limits. lambda_* hold one entry per ensemble bus.
DispatchStep DispatchStepDual(const NetworkSetup& setup, double loss_weight,
                              std::span<const double> lambda_p,
                              std::span<const double> lambda_q,
                              const QpOptions& options = {});

// Loss with ensemble injections fixed to `pinned` (one per ensemble bus).
PinnedDispatch DispatchStepPinned(const NetworkSetup& setup,
                                  double loss_weight,
                                  std::span<const Injection> pinned,
                                  const QpOptions& options = {});

// Shared path resistance (or reactance) between every pair of buses:
// entry (j, k) sums the impedance of branches lying on both root paths.
Eigen::MatrixXd SharedPathMatrix(const GridModel& model, const TreeOrder& tree,
                                 bool reactance);

}  // namespace ensdispatch

#endif  // ENSDISPATCH_GRID_FLOW_H_
