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

#include "ensdispatch/grid_flow.h"

#include <algorithm>
#include <cmath>
#include <string>

#include "ensdispatch/errors.h"

namespace ensdispatch {
namespace {

constexpr double kInfeasibleTolerance = 1e-7;

struct Variable {
  int bus = 0;
  bool reactive = false;
  int ensemble = -1;  // index into setup.ensemble_buses, -1 for controls
  double lower = 0.0;
  double upper = 0.0;
};

struct StepProblem {
  BoxQp qp;
  std::vector<Variable> vars;
  std::vector<int> rows;          // bus position of each constraint row
  Eigen::VectorXd fixed_p;        // per bus, everything not optimized
  Eigen::VectorXd fixed_q;
  std::vector<Injection> ensemble;  // per bus, fixed ensemble part
  std::vector<Injection> control;   // per bus, fixed control part
};

void AddQuantity(StepProblem* sp, int bus, bool reactive, int ensemble,
                 double lower, double upper) {
  if (upper > lower) {
    sp->vars.push_back({bus, reactive, ensemble, lower, upper});
    return;
  }
  Injection& target = ensemble >= 0 ? sp->ensemble[bus] : sp->control[bus];
  (reactive ? target.q : target.p) = lower;
  (reactive ? sp->fixed_q[bus] : sp->fixed_p[bus]) += lower;
}

// Builds the reduced QP in the free injection variables. `pinned` is null for
// the dualized step.
StepProblem BuildStep(const NetworkSetup& setup, double loss_weight,
                      std::span<const double> lambda_p,
                      std::span<const double> lambda_q,
                      const std::span<const Injection>* pinned) {
  const GridModel& model = setup.model;
  const int n = static_cast<int>(model.buses.size());
  const double v0sq = model.v0() * model.v0();
  StepProblem sp;
  sp.fixed_p = Eigen::VectorXd::Zero(n);
  sp.fixed_q = Eigen::VectorXd::Zero(n);
  sp.ensemble.assign(n, {});
  sp.control.assign(n, {});
  for (int i = 0; i < n; ++i) {
    sp.fixed_p[i] = setup.fixed_load[i].p;
    sp.fixed_q[i] = setup.fixed_load[i].q;
  }
  for (size_t e = 0; e < setup.ensemble_buses.size(); ++e) {
    const int bus = setup.ensemble_buses[e];
    const int idx = static_cast<int>(e);
    if (pinned) {
      const Injection& pin = (*pinned)[e];
      AddQuantity(&sp, bus, false, idx, pin.p, pin.p);
      AddQuantity(&sp, bus, true, idx, pin.q, pin.q);
    } else {
      const InjectionLimits& lim = setup.ensemble_limits[e];
      AddQuantity(&sp, bus, false, idx, lim.p_min, lim.p_max);
      AddQuantity(&sp, bus, true, idx, lim.q_min, lim.q_max);
    }
  }
  for (int i = 0; i < n; ++i) {
    const InjectionLimits& lim = setup.control_limits[i];
    AddQuantity(&sp, i, false, -1, lim.p_min, lim.p_max);
    AddQuantity(&sp, i, true, -1, lim.q_min, lim.q_max);
  }

  const Eigen::Index m = static_cast<Eigen::Index>(sp.vars.size());
  const double curvature = 2.0 * loss_weight / v0sq;
  const Eigen::VectorXd rp = setup.shared_r * sp.fixed_p;
  const Eigen::VectorXd rq = setup.shared_r * sp.fixed_q;
  BoxQp& qp = sp.qp;
  qp.hessian = Eigen::MatrixXd::Zero(m, m);
  qp.linear.resize(m);
  qp.lower.resize(m);
  qp.upper.resize(m);
  for (Eigen::Index a = 0; a < m; ++a) {
    const Variable& va = sp.vars[a];
    for (Eigen::Index b = 0; b < m; ++b) {
      const Variable& vb = sp.vars[b];
      if (va.reactive == vb.reactive) {
        qp.hessian(a, b) = curvature * setup.shared_r(va.bus, vb.bus);
      }
    }
    qp.linear[a] = curvature * (va.reactive ? rq[va.bus] : rp[va.bus]);
    if (va.ensemble >= 0) {
      qp.linear[a] -= va.reactive ? lambda_q[va.ensemble]
                                  : lambda_p[va.ensemble];
    }
    qp.lower[a] = va.lower;
    qp.upper[a] = va.upper;
  }

  const Eigen::VectorXd v2_fixed =
      Eigen::VectorXd::Constant(n, v0sq) -
      2.0 * (setup.shared_r * sp.fixed_p + setup.shared_x * sp.fixed_q);
  const int slack = model.slack_index();
  for (int j = 0; j < n; ++j) {
    if (j != slack) sp.rows.push_back(j);
  }
  const Eigen::Index k = static_cast<Eigen::Index>(sp.rows.size());
  qp.constraints.resize(k, m);
  qp.constraint_lower.resize(k);
  qp.constraint_upper.resize(k);
  for (Eigen::Index r = 0; r < k; ++r) {
    const int j = sp.rows[r];
    const Bus& bus = model.buses[j];
    for (Eigen::Index a = 0; a < m; ++a) {
      const Variable& va = sp.vars[a];
      const Eigen::MatrixXd& shared =
          va.reactive ? setup.shared_x : setup.shared_r;
      qp.constraints(r, a) = -2.0 * shared(j, va.bus);
    }
    qp.constraint_lower[r] = bus.v_min * bus.v_min - v2_fixed[j];
    qp.constraint_upper[r] = bus.v_max * bus.v_max - v2_fixed[j];
  }
  return sp;
}

// Rows that no point of the box can satisfy.
void CheckBoxReachability(const NetworkSetup& setup, const StepProblem& sp) {
  const BoxQp& qp = sp.qp;
  for (Eigen::Index r = 0; r < qp.constraints.rows(); ++r) {
    double lo = 0.0, hi = 0.0;
    for (Eigen::Index a = 0; a < qp.constraints.cols(); ++a) {
      const double c = qp.constraints(r, a);
      lo += std::min(c * qp.lower[a], c * qp.upper[a]);
      hi += std::max(c * qp.lower[a], c * qp.upper[a]);
    }
    const int bus_id = setup.model.buses[sp.rows[r]].id;
    if (hi < qp.constraint_lower[r] - kInfeasibleTolerance) {
      throw InfeasibleError("voltage at bus " + std::to_string(bus_id) +
                                " stays below its minimum with all controls "
                                "saturated",
                            bus_id);
    }
    if (lo > qp.constraint_upper[r] + kInfeasibleTolerance) {
      throw InfeasibleError("voltage at bus " + std::to_string(bus_id) +
                                " stays above its maximum with all controls "
                                "saturated",
                            bus_id);
    }
  }
}

DispatchStep Assemble(const NetworkSetup& setup, const StepProblem& sp,
                      const QpResult& result, double loss_weight,
                      std::span<const double> lambda_p,
                      std::span<const double> lambda_q) {
  const GridModel& model = setup.model;
  const int n = static_cast<int>(model.buses.size());
  if (result.max_violation > kInfeasibleTolerance) {
    Eigen::VectorXd cx = sp.qp.constraints * result.x;
    Eigen::Index worst = 0;
    double worst_violation = -1.0;
    for (Eigen::Index r = 0; r < cx.size(); ++r) {
      double v = std::max(sp.qp.constraint_lower[r] - cx[r],
                          cx[r] - sp.qp.constraint_upper[r]);
      if (v > worst_violation) {
        worst_violation = v;
        worst = r;
      }
    }
    const int bus_id = model.buses[sp.rows[worst]].id;
    throw InfeasibleError("voltage limits at bus " + std::to_string(bus_id) +
                              " cannot be met",
                          bus_id);
  }
  DispatchStep step;
  step.ensemble = sp.ensemble;
  step.control = sp.control;
  for (size_t a = 0; a < sp.vars.size(); ++a) {
    const Variable& v = sp.vars[a];
    Injection& target =
        v.ensemble >= 0 ? step.ensemble[v.bus] : step.control[v.bus];
    (v.reactive ? target.q : target.p) = result.x[static_cast<Eigen::Index>(a)];
  }
  std::vector<Injection> total(n);
  for (int i = 0; i < n; ++i) {
    total[i].p = setup.fixed_load[i].p + step.ensemble[i].p + step.control[i].p;
    total[i].q = setup.fixed_load[i].q + step.ensemble[i].q + step.control[i].q;
  }
  step.flows = TreeFlows(model, setup.tree, total);
  step.v2 = Voltages(model, setup.tree, step.flows);
  step.loss = Losses(model, step.flows);
  step.objective = loss_weight * step.loss;
  if (!lambda_p.empty()) {
    for (size_t e = 0; e < setup.ensemble_buses.size(); ++e) {
      const Injection& inj = step.ensemble[setup.ensemble_buses[e]];
      step.objective -= lambda_p[e] * inj.p + lambda_q[e] * inj.q;
    }
  }
  step.kkt_residual = result.kkt_residual;
  step.max_violation = result.max_violation;
  step.polished = result.polished;
  return step;
}

void RequirePrepared(const NetworkSetup& setup) {
  const Eigen::Index n = static_cast<Eigen::Index>(setup.model.buses.size());
  if (setup.shared_r.rows() != n || setup.shared_x.rows() != n) {
    throw ModelError("network setup was not prepared");
  }
}

}  // namespace

std::vector<BranchFlow> TreeFlows(const GridModel& model,
                                  const TreeOrder& tree,
                                  std::span<const Injection> injections) {
  if (injections.size() != model.buses.size()) {
    throw DimensionError("one injection per bus expected");
  }
  std::vector<Injection> subtree(injections.begin(), injections.end());
  std::vector<BranchFlow> flows(model.branches.size());
  for (auto it = tree.order.rbegin(); it != tree.order.rend(); ++it) {
    const int bus = *it;
    const int parent = tree.parent[bus];
    if (parent < 0) continue;
    flows[tree.parent_branch[bus]] = {subtree[bus].p, subtree[bus].q};
    subtree[parent].p += subtree[bus].p;
    subtree[parent].q += subtree[bus].q;
  }
  return flows;
}

std::vector<double> Voltages(const GridModel& model, const TreeOrder& tree,
                             std::span<const BranchFlow> flows) {
  if (flows.size() != model.branches.size()) {
    throw DimensionError("one flow per branch expected");
  }
  std::vector<double> v2(model.buses.size(), 0.0);
  const double v0 = model.v0();
  for (int bus : tree.order) {
    const int parent = tree.parent[bus];
    if (parent < 0) {
      v2[bus] = v0 * v0;
      continue;
    }
    const int k = tree.parent_branch[bus];
    const Branch& br = model.branches[k];
    v2[bus] = v2[parent] - 2.0 * (br.r * flows[k].p + br.x * flows[k].q);
  }
  return v2;
}

double Losses(const GridModel& model, std::span<const BranchFlow> flows) {
  if (flows.size() != model.branches.size()) {
    throw DimensionError("one flow per branch expected");
  }
  const double v0 = model.v0();
  double total = 0.0;
  for (size_t k = 0; k < flows.size(); ++k) {
    total += model.branches[k].r *
             (flows[k].p * flows[k].p + flows[k].q * flows[k].q);
  }
  return total / (v0 * v0);
}

std::vector<Injection> RatedLoads(const GridModel& model) {
  std::vector<Injection> out;
  out.reserve(model.buses.size());
  for (const Bus& b : model.buses) {
    out.push_back({b.p_mw / model.base_mva, b.q_mvar / model.base_mva});
  }
  return out;
}

Eigen::MatrixXd SharedPathMatrix(const GridModel& model, const TreeOrder& tree,
                                 bool reactance) {
  const int n = static_cast<int>(model.buses.size());
  std::vector<double> cumulative(n, 0.0);
  std::vector<int> depth(n, 0);
  for (int bus : tree.order) {
    const int parent = tree.parent[bus];
    if (parent < 0) continue;
    const Branch& br = model.branches[tree.parent_branch[bus]];
    cumulative[bus] = cumulative[parent] + (reactance ? br.x : br.r);
    depth[bus] = depth[parent] + 1;
  }
  Eigen::MatrixXd shared(n, n);
  for (int j = 0; j < n; ++j) {
    for (int k = j; k < n; ++k) {
      int a = j, b = k;
      while (depth[a] > depth[b]) a = tree.parent[a];
      while (depth[b] > depth[a]) b = tree.parent[b];
      while (a != b) {
        a = tree.parent[a];
        b = tree.parent[b];
      }
      shared(j, k) = shared(k, j) = cumulative[a];
    }
  }
  return shared;
}

void PrepareNetwork(NetworkSetup* setup) {
  const size_t n = setup->model.buses.size();
  if (setup->tree.order.size() != n) {
    throw ModelError("tree order does not cover the model");
  }
  if (setup->fixed_load.size() != n || setup->control_limits.size() != n) {
    throw ModelError("fixed loads and control limits need one entry per bus");
  }
  if (setup->ensemble_limits.size() != setup->ensemble_buses.size()) {
    throw ModelError("one limit box per ensemble bus expected");
  }
  auto check = [](const InjectionLimits& l, const char* what) {
    if (l.p_min > l.p_max || l.q_min > l.q_max) {
      throw ModelError(std::string(what) + " lower limit exceeds upper limit");
    }
  };
  for (const auto& l : setup->ensemble_limits) check(l, "ensemble");
  for (const auto& l : setup->control_limits) check(l, "control");
  for (int bus : setup->ensemble_buses) {
    if (bus < 0 || static_cast<size_t>(bus) >= n) {
      throw ModelError("ensemble bus position out of range");
    }
  }
  setup->shared_r = SharedPathMatrix(setup->model, setup->tree, false);
  setup->shared_x = SharedPathMatrix(setup->model, setup->tree, true);
}

DispatchStep DispatchStepDual(const NetworkSetup& setup, double loss_weight,
                              std::span<const double> lambda_p,
                              std::span<const double> lambda_q,
                              const QpOptions& options) {
  RequirePrepared(setup);
  if (lambda_p.size() != setup.ensemble_buses.size() ||
      lambda_q.size() != setup.ensemble_buses.size()) {
    throw DimensionError("one multiplier per ensemble bus expected");
  }
  StepProblem sp = BuildStep(setup, loss_weight, lambda_p, lambda_q, nullptr);
  CheckBoxReachability(setup, sp);
  QpResult result = SolveBoxQp(sp.qp, options);
  return Assemble(setup, sp, result, loss_weight, lambda_p, lambda_q);
}

PinnedDispatch DispatchStepPinned(const NetworkSetup& setup,
                                  double loss_weight,
                                  std::span<const Injection> pinned,
                                  const QpOptions& options) {
  RequirePrepared(setup);
  if (pinned.size() != setup.ensemble_buses.size()) {
    throw DimensionError("one pinned injection per ensemble bus expected");
  }
  StepProblem sp = BuildStep(setup, loss_weight, {}, {}, &pinned);
  CheckBoxReachability(setup, sp);
  QpResult result = SolveBoxQp(sp.qp, options);
  PinnedDispatch out;
  out.dispatch = Assemble(setup, sp, result, loss_weight, {}, {});

  // Envelope theorem: d(optimal value)/d(pinned) = partial of the weighted
  // loss plus the voltage multipliers times d(v^2)/d(pinned).
  const GridModel& model = setup.model;
  const int n = static_cast<int>(model.buses.size());
  const double v0sq = model.v0() * model.v0();
  Eigen::VectorXd total_p(n), total_q(n);
  for (int i = 0; i < n; ++i) {
    total_p[i] = setup.fixed_load[i].p + out.dispatch.ensemble[i].p +
                 out.dispatch.control[i].p;
    total_q[i] = setup.fixed_load[i].q + out.dispatch.ensemble[i].q +
                 out.dispatch.control[i].q;
  }
  const double curvature = 2.0 * loss_weight / v0sq;
  for (int bus : setup.ensemble_buses) {
    double dp = curvature * setup.shared_r.row(bus).dot(total_p);
    double dq = curvature * setup.shared_r.row(bus).dot(total_q);
    for (size_t r = 0; r < sp.rows.size(); ++r) {
      const double y = result.multipliers[static_cast<Eigen::Index>(r)];
      dp -= 2.0 * y * setup.shared_r(sp.rows[r], bus);
      dq -= 2.0 * y * setup.shared_x(sp.rows[r], bus);
    }
    out.lambda_p.push_back(dp);
    out.lambda_q.push_back(dq);
  }
  return out;
}

}  // namespace ensdispatch
