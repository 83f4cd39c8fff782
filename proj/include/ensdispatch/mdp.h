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

#ifndef ENSDISPATCH_MDP_H_
#define ENSDISPATCH_MDP_H_

#include <span>
#include <vector>

#include <Eigen/Dense>

namespace ensdispatch {

// Transition matrices are column-stochastic: entry (a, b) is the probability
// of moving from state b to state a in one step, so rho(t+1) = P(t) rho(t).

// One bus-located load ensemble.
struct EnsembleSpec {
  Eigen::VectorXd p_mw;    // rated active power per state
  Eigen::VectorXd q_mvar;  // rated reactive power per state
  Eigen::VectorXd s_mva;   // optional apparent power per state
  Eigen::MatrixXd target;  // "normal" transitions, columns sum to 1
  // KL weights per step (size T) or a single time-constant matrix (size 1).
  // Only entries on the support of `target` are read.
  std::vector<Eigen::MatrixXd> gamma;
  Eigen::MatrixXd cost;    // cost(a, t - 1) = U^a(t) for t = 1..T
  Eigen::VectorXd rho_in;

  int n_states() const { return static_cast<int>(target.rows()); }
  int horizon() const { return static_cast<int>(cost.cols()); }
  // Weights for the step from t to t + 1, t = 0..T-1.
  const Eigen::MatrixXd& GammaAt(int t) const {
    return gamma.size() == 1 ? gamma.front() : gamma[t];
  }
  // Throws ScenarioError on any broken invariant.
  void Validate() const;
};

// U~^a(t) = U^a(t) + lambda_p(t) p^a + lambda_q(t) q^a, laid out like
// EnsembleSpec::cost (column t - 1 holds step t).
struct EffectiveCost {
  Eigen::MatrixXd values;
  int horizon() const { return static_cast<int>(values.cols()); }
};

struct MdpTrajectory {
  std::vector<Eigen::MatrixXd> transitions;  // P(t), t = 0..T-1
  std::vector<Eigen::VectorXd> rho;          // rho(t), t = 0..T
  std::vector<Eigen::VectorXd> value;        // V(t), t = 0..T; V(T) = 0
  double objective = 0.0;
};

// Optimal outgoing distribution of one origin state and its attained cost.
struct RowSolution {
  Eigen::VectorXd transitions;
  double value = 0.0;
};

struct RowSolverOptions {
  double tolerance = 1e-10;  // on |sum - 1| of the unnormalized row
  int max_iterations = 200;
};

// rho(t+1) = P(t) rho(t), renormalized to sum exactly to one.
Eigen::VectorXd Propagate(const Eigen::VectorXd& rho,
                          const Eigen::MatrixXd& transitions);

EffectiveCost EffectiveUtility(const Eigen::MatrixXd& cost,
                               std::span<const double> lambda_p,
                               std::span<const double> lambda_q,
                               const Eigen::VectorXd& p_alpha,
                               const Eigen::VectorXd& q_alpha);

// sum_{a,b} P(a,b) (U~^a(t+1) + gamma(a,b) log(P(a,b)/Pbar(a,b))) rho^b(t),
// with 0 log 0 = 0. Throws SupportError if P leaves the support of Pbar.
double KlStageCost(const Eigen::MatrixXd& transitions,
                   const Eigen::MatrixXd& target, const Eigen::MatrixXd& gamma,
                   const Eigen::VectorXd& next_cost, const Eigen::VectorXd& rho);

// Minimizes sum_a P^a (c^a + gamma^a log(P^a / Pbar^a)) over the simplex
// restricted to the support of Pbar. Equal weights on the support take the
// closed-form softmin; otherwise the scalar multiplier of sum P = 1 is found
// by safeguarded Newton. Throws SolverError on an empty support or when the
// root-find exceeds its cap.
RowSolution BackwardStepRow(const Eigen::VectorXd& continuation,
                            const Eigen::VectorXd& gamma,
                            const Eigen::VectorXd& target,
                            const RowSolverOptions& options = {});

// sum_a Pbar^a exp(-(c^a + eta) / gamma^a - 1) over the support of Pbar: the
// mass of the dual row whose root eta BackwardStepRow looks for.
double RowDualMass(const Eigen::VectorXd& continuation,
                   const Eigen::VectorXd& gamma, const Eigen::VectorXd& target,
                   double eta);

// Backward recursion from V(T) = 0, then forward propagation from rho_in.
// The objective is evaluated with the effective costs.
MdpTrajectory SolveMdp(const EnsembleSpec& spec, const EffectiveCost& cost,
                       const RowSolverOptions& options = {});

// sum_t KlStageCost along a trajectory, using `cost` for the energy term.
double TrajectoryObjective(const EnsembleSpec& spec, const MdpTrajectory& traj,
                           const Eigen::MatrixXd& cost);

// Time average over t = 0..T of max_a rho^a(t) - min_a rho^a(t).
double MeanSpread(const MdpTrajectory& traj);

// sum_a x^a rho^a(t) for t = 0..T.
std::vector<double> ExpectedPower(const MdpTrajectory& traj,
                                  const Eigen::VectorXd& per_state);

}  // namespace ensdispatch

#endif  // ENSDISPATCH_MDP_H_
