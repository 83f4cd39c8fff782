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

#include "ensdispatch/mdp.h"

#include <algorithm>
#include <cmath>
#include <limits>
#include <string>

#include "ensdispatch/errors.h"

namespace ensdispatch {
namespace {

constexpr double kStochasticTolerance = 1e-9;

void RequireSize(Eigen::Index actual, Eigen::Index expected,
                 const char* what) {
  if (actual != expected) {
    throw DimensionError(std::string(what) + ": expected size " +
                         std::to_string(expected) + ", got " +
                         std::to_string(actual));
  }
}

// Unnormalized dual row P^a(eta) = Pbar^a exp(-(c^a - shift + eta)/gamma^a - 1)
// on the support, written into `row`; returns its sum and the sum of
// P^a / gamma^a (minus the derivative).
struct DualRow {
  double sum;
  double slope;
};

DualRow EvaluateDualRow(const std::vector<int>& support,
                        const Eigen::VectorXd& shifted_cost,
                        const Eigen::VectorXd& gamma,
                        const Eigen::VectorXd& target, double eta,
                        Eigen::VectorXd* row) {
  DualRow out{0.0, 0.0};
  for (int a : support) {
    double value =
        target[a] * std::exp(-(shifted_cost[a] + eta) / gamma[a] - 1.0);
    (*row)[a] = value;
    out.sum += value;
    out.slope += value / gamma[a];
  }
  return out;
}

}  // namespace

void EnsembleSpec::Validate() const {
  const int n = n_states();
  if (n < 1) throw ScenarioError("ensemble has no states");
  if (target.cols() != n) throw ScenarioError("target matrix is not square");
  if (p_mw.size() != n || q_mvar.size() != n) {
    throw ScenarioError("per-state powers do not match the state count");
  }
  if (rho_in.size() != n) {
    throw ScenarioError("initial distribution does not match the state count");
  }
  if (cost.rows() != n) {
    throw ScenarioError("cost table does not match the state count");
  }
  for (int b = 0; b < n; ++b) {
    if ((target.col(b).array() < 0.0).any()) {
      throw ScenarioError("target matrix has a negative entry");
    }
    if (std::abs(target.col(b).sum() - 1.0) > kStochasticTolerance) {
      throw ScenarioError("target column " + std::to_string(b + 1) +
                          " does not sum to 1");
    }
  }
  if ((rho_in.array() < 0.0).any() ||
      std::abs(rho_in.sum() - 1.0) > kStochasticTolerance) {
    throw ScenarioError("initial distribution is not a probability vector");
  }
  if (gamma.size() != 1 && static_cast<int>(gamma.size()) != horizon()) {
    throw ScenarioError("gamma must be time-constant or given for every step");
  }
  for (const Eigen::MatrixXd& g : gamma) {
    if (g.rows() != n || g.cols() != n) {
      throw ScenarioError("gamma matrix does not match the state count");
    }
    for (int b = 0; b < n; ++b) {
      for (int a = 0; a < n; ++a) {
        if (target(a, b) > 0.0 && !(g(a, b) > 0.0 && std::isfinite(g(a, b)))) {
          throw ScenarioError("gamma must be positive on every allowed "
                              "transition");
        }
      }
    }
  }
  if (!cost.allFinite()) throw ScenarioError("cost table is not finite");
}

Eigen::VectorXd Propagate(const Eigen::VectorXd& rho,
                          const Eigen::MatrixXd& transitions) {
  if (transitions.rows() != transitions.cols()) {
    throw DimensionError("transition matrix is not square");
  }
  RequireSize(rho.size(), transitions.cols(), "distribution");
  Eigen::VectorXd next = transitions * rho;
  double total = next.sum();
  if (total > 0.0) next /= total;
  return next;
}

EffectiveCost EffectiveUtility(const Eigen::MatrixXd& cost,
                               std::span<const double> lambda_p,
                               std::span<const double> lambda_q,
                               const Eigen::VectorXd& p_alpha,
                               const Eigen::VectorXd& q_alpha) {
  RequireSize(static_cast<Eigen::Index>(lambda_p.size()), cost.cols(),
              "lambda_p");
  RequireSize(static_cast<Eigen::Index>(lambda_q.size()), cost.cols(),
              "lambda_q");
  RequireSize(p_alpha.size(), cost.rows(), "p_alpha");
  RequireSize(q_alpha.size(), cost.rows(), "q_alpha");
  EffectiveCost out{cost};
  for (Eigen::Index t = 0; t < cost.cols(); ++t) {
    out.values.col(t) += lambda_p[t] * p_alpha + lambda_q[t] * q_alpha;
  }
  return out;
}

double KlStageCost(const Eigen::MatrixXd& transitions,
                   const Eigen::MatrixXd& target, const Eigen::MatrixXd& gamma,
                   const Eigen::VectorXd& next_cost,
                   const Eigen::VectorXd& rho) {
  const Eigen::Index n = target.rows();
  RequireSize(transitions.rows(), n, "transitions");
  RequireSize(transitions.cols(), n, "transitions");
  RequireSize(gamma.rows(), n, "gamma");
  RequireSize(next_cost.size(), n, "cost");
  RequireSize(rho.size(), n, "rho");
  double total = 0.0;
  for (Eigen::Index b = 0; b < n; ++b) {
    double column = 0.0;
    for (Eigen::Index a = 0; a < n; ++a) {
      const double p = transitions(a, b);
      if (p <= 0.0) continue;
      if (target(a, b) <= 0.0) {
        throw SupportError("transition " + std::to_string(b + 1) + "->" +
                           std::to_string(a + 1) +
                           " is outside the target support");
      }
      column += p * (next_cost[a] + gamma(a, b) * std::log(p / target(a, b)));
    }
    total += column * rho[b];
  }
  return total;
}

RowSolution BackwardStepRow(const Eigen::VectorXd& continuation,
                            const Eigen::VectorXd& gamma,
                            const Eigen::VectorXd& target,
                            const RowSolverOptions& options) {
  const Eigen::Index n = target.size();
  RequireSize(continuation.size(), n, "continuation costs");
  RequireSize(gamma.size(), n, "gamma row");

  std::vector<int> support;
  double shift = std::numeric_limits<double>::infinity();
  bool uniform = true;
  for (Eigen::Index a = 0; a < n; ++a) {
    if (target[a] <= 0.0) continue;
    if (!(gamma[a] > 0.0)) {
      throw SolverError("gamma must be positive on the target support");
    }
    if (!std::isfinite(continuation[a])) {
      throw SolverError("continuation cost is not finite on the support");
    }
    if (!support.empty() && gamma[a] != gamma[support.front()]) {
      uniform = false;
    }
    support.push_back(static_cast<int>(a));
    shift = std::min(shift, continuation[a]);
  }
  if (support.empty()) throw SolverError("target row has an empty support");

  RowSolution out{Eigen::VectorXd::Zero(n), 0.0};
  Eigen::VectorXd shifted = continuation.array() - shift;

  if (uniform) {
    const double g = gamma[support.front()];
    double partition = 0.0;
    for (int a : support) {
      out.transitions[a] = target[a] * std::exp(-shifted[a] / g);
      partition += out.transitions[a];
    }
    out.transitions /= partition;
    out.value = shift - g * std::log(partition);
    return out;
  }

  // sum(eta) is strictly decreasing and convex: bracket, then Newton with a
  // bisection fallback.
  Eigen::VectorXd row = Eigen::VectorXd::Zero(n);
  double lo = -std::numeric_limits<double>::infinity();
  double hi = std::numeric_limits<double>::infinity();
  double eta = 0.0;
  const double scale = gamma.maxCoeff();
  int iteration = 0;
  for (;; ++iteration) {
    if (iteration >= options.max_iterations) {
      throw SolverError("row multiplier did not converge; costs are likely "
                        "ill-scaled");
    }
    DualRow f = EvaluateDualRow(support, shifted, gamma, target, eta, &row);
    const double residual = f.sum - 1.0;
    if (std::abs(residual) <= options.tolerance) break;
    if (residual > 0.0) {
      lo = eta;
    } else {
      hi = eta;
    }
    double next = eta + residual / f.slope;
    if (!std::isfinite(next) || next <= lo || next >= hi) {
      if (std::isinf(hi)) {
        next = lo + std::max(scale, std::abs(lo));
      } else if (std::isinf(lo)) {
        next = hi - std::max(scale, std::abs(hi));
      } else {
        next = 0.5 * (lo + hi);
      }
    }
    eta = next;
  }
  out.transitions = row / row.sum();
  for (int a : support) {
    const double p = out.transitions[a];
    if (p > 0.0) {
      out.value += p * (continuation[a] + gamma[a] * std::log(p / target[a]));
    }
  }
  return out;
}

double RowDualMass(const Eigen::VectorXd& continuation,
                   const Eigen::VectorXd& gamma, const Eigen::VectorXd& target,
                   double eta) {
  RequireSize(continuation.size(), target.size(), "continuation costs");
  RequireSize(gamma.size(), target.size(), "gamma row");
  std::vector<int> support;
  for (Eigen::Index a = 0; a < target.size(); ++a) {
    if (target[a] > 0.0) support.push_back(static_cast<int>(a));
  }
  Eigen::VectorXd row = Eigen::VectorXd::Zero(target.size());
  return EvaluateDualRow(support, continuation, gamma, target, eta, &row).sum;
}

MdpTrajectory SolveMdp(const EnsembleSpec& spec, const EffectiveCost& cost,
                       const RowSolverOptions& options) {
  const int n = spec.n_states();
  const int horizon = cost.horizon();
  RequireSize(cost.values.rows(), n, "effective cost");
  if (spec.gamma.size() != 1 &&
      static_cast<int>(spec.gamma.size()) != horizon) {
    throw DimensionError("gamma horizon does not match the cost horizon");
  }

  MdpTrajectory traj;
  traj.transitions.assign(horizon, Eigen::MatrixXd::Zero(n, n));
  traj.value.assign(horizon + 1, Eigen::VectorXd::Zero(n));
  for (int t = horizon - 1; t >= 0; --t) {
    const Eigen::VectorXd continuation = cost.values.col(t) + traj.value[t + 1];
    const Eigen::MatrixXd& gamma = spec.GammaAt(t);
    for (int b = 0; b < n; ++b) {
      RowSolution row = BackwardStepRow(continuation, gamma.col(b),
                                        spec.target.col(b), options);
      traj.transitions[t].col(b) = row.transitions;
      traj.value[t][b] = row.value;
    }
  }
  traj.rho.reserve(horizon + 1);
  traj.rho.push_back(spec.rho_in);
  for (int t = 0; t < horizon; ++t) {
    traj.rho.push_back(Propagate(traj.rho.back(), traj.transitions[t]));
  }
  traj.objective = TrajectoryObjective(spec, traj, cost.values);
  return traj;
}

double TrajectoryObjective(const EnsembleSpec& spec, const MdpTrajectory& traj,
                           const Eigen::MatrixXd& cost) {
  double total = 0.0;
  for (size_t t = 0; t < traj.transitions.size(); ++t) {
    total += KlStageCost(traj.transitions[t], spec.target,
                         spec.GammaAt(static_cast<int>(t)),
                         cost.col(static_cast<Eigen::Index>(t)), traj.rho[t]);
  }
  return total;
}

double MeanSpread(const MdpTrajectory& traj) {
  if (traj.rho.empty()) return 0.0;
  double total = 0.0;
  for (const Eigen::VectorXd& rho : traj.rho) {
    total += rho.maxCoeff() - rho.minCoeff();
  }
  return total / static_cast<double>(traj.rho.size());
}

std::vector<double> ExpectedPower(const MdpTrajectory& traj,
                                  const Eigen::VectorXd& per_state) {
  std::vector<double> out;
  out.reserve(traj.rho.size());
  for (const Eigen::VectorXd& rho : traj.rho) out.push_back(per_state.dot(rho));
  return out;
}

}  // namespace ensdispatch
