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

#ifndef ENSDISPATCH_BOX_QP_H_
#define ENSDISPATCH_BOX_QP_H_

#include <Eigen/Dense>

namespace ensdispatch {

// minimize 1/2 x'Hx + g'x
// s.t.     lower <= x <= upper
//          constraint_lower <= C x <= constraint_upper
struct BoxQp {
  Eigen::MatrixXd hessian;
  Eigen::VectorXd linear;
  Eigen::VectorXd lower;
  Eigen::VectorXd upper;
  Eigen::MatrixXd constraints;
  Eigen::VectorXd constraint_lower;
  Eigen::VectorXd constraint_upper;
};

struct QpOptions {
  double kkt_tolerance = 1e-7;
  double feasibility_tolerance = 1e-8;
  int max_inner_iterations = 20000;
  int max_outer_iterations = 80;
  // Re-solve the KKT system on the detected active set after the first-order
  // phase. Accepted only if it passes every optimality check.
  bool polish = true;
};

struct QpResult {
  Eigen::VectorXd x;
  // One per row of C: positive when the upper side binds, negative when the
  // lower side binds.
  Eigen::VectorXd multipliers;
  double objective = 0.0;
  double kkt_residual = 0.0;   // inf-norm of the projected Lagrangian gradient
  double max_violation = 0.0;  // of the general constraints
  int iterations = 0;          // inner gradient steps
  bool polished = false;
  bool converged = false;
};

// Accelerated projected gradient (FISTA with adaptive restart) on the box,
// wrapped in an augmented-Lagrangian loop for the general constraints. The
// step size comes from a power-iteration bound on the largest eigenvalue.
QpResult SolveBoxQp(const BoxQp& problem, const QpOptions& options = {});

// Largest eigenvalue of a symmetric PSD matrix by power iteration (slightly
// inflated so it is safe as a Lipschitz bound).
double LargestEigenvalueBound(const Eigen::MatrixXd& matrix);

// Inf-norm of x - proj_box(x - (Hx + g + C'y)).
double ProjectedGradientResidual(const BoxQp& problem, const Eigen::VectorXd& x,
                                 const Eigen::VectorXd& multipliers);

}  // namespace ensdispatch

#endif  // ENSDISPATCH_BOX_QP_H_
