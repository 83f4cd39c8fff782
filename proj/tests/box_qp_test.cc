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

#include "ensdispatch/box_qp.h"

#include <cmath>
#include <limits>
#include <random>

#include <gtest/gtest.h>

namespace ensdispatch {
namespace {

double Objective(const BoxQp& qp, const Eigen::VectorXd& x) {
  return 0.5 * x.dot(qp.hessian * x) + qp.linear.dot(x);
}

// Reference minimum by active-set enumeration: every variable is free, at its
// lower or at its upper bound, every general row is inactive, at its lower or
// at its upper side. Each guess is an equality-constrained QP solved through
// its KKT system; the best feasible stationary point is the global minimum
// of the convex problem.
double EnumerateActiveSets(const BoxQp& qp, Eigen::VectorXd* best_x) {
  const int n = static_cast<int>(qp.linear.size());
  const int m = static_cast<int>(qp.constraints.rows());
  int total = 1;
  for (int k = 0; k < n + m; ++k) total *= 3;
  double best = std::numeric_limits<double>::infinity();
  for (int code = 0; code < total; ++code) {
    std::vector<Eigen::VectorXd> rows;
    std::vector<double> rhs;
    int c = code;
    for (int k = 0; k < n + m; ++k, c /= 3) {
      const int state = c % 3;
      if (state == 0) continue;
      if (k < n) {
        rows.push_back(Eigen::VectorXd::Unit(n, k));
        rhs.push_back(state == 1 ? qp.lower[k] : qp.upper[k]);
      } else {
        rows.push_back(qp.constraints.row(k - n).transpose());
        rhs.push_back(state == 1 ? qp.constraint_lower[k - n]
                                 : qp.constraint_upper[k - n]);
      }
    }
    const int a = static_cast<int>(rows.size());
    Eigen::MatrixXd kkt = Eigen::MatrixXd::Zero(n + a, n + a);
    Eigen::VectorXd b(n + a);
    kkt.topLeftCorner(n, n) = qp.hessian;
    b.head(n) = -qp.linear;
    for (int r = 0; r < a; ++r) {
      kkt.block(0, n + r, n, 1) = rows[r];
      kkt.block(n + r, 0, 1, n) = rows[r].transpose();
      b[n + r] = rhs[r];
    }
    Eigen::FullPivLU<Eigen::MatrixXd> lu(kkt);
    if (lu.rank() < n + a) continue;
    const Eigen::VectorXd x = lu.solve(b).head(n);
    bool feasible = true;
    for (int k = 0; k < n; ++k) {
      feasible &= x[k] >= qp.lower[k] - 1e-9 && x[k] <= qp.upper[k] + 1e-9;
    }
    for (int r = 0; r < m; ++r) {
      const double v = qp.constraints.row(r).dot(x);
      feasible &= v >= qp.constraint_lower[r] - 1e-9 &&
                  v <= qp.constraint_upper[r] + 1e-9;
    }
    if (feasible && Objective(qp, x) < best) {
      best = Objective(qp, x);
      if (best_x) *best_x = x;
    }
  }
  return best;
}

BoxQp RandomQp(std::mt19937_64& rng, int n, int m, bool singular) {
  std::normal_distribution<double> normal;
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  BoxQp qp;
  Eigen::MatrixXd A(n, n);
  for (int i = 0; i < n; ++i) {
    for (int j = 0; j < n; ++j) A(i, j) = normal(rng);
  }
  if (singular) A.col(0).setZero();
  qp.hessian = A.transpose() * A;
  qp.linear.resize(n);
  qp.lower.resize(n);
  qp.upper.resize(n);
  for (int k = 0; k < n; ++k) {
    qp.linear[k] = 2.0 * normal(rng);
    qp.lower[k] = -unit(rng) - 0.1;
    qp.upper[k] = unit(rng) + 0.1;
  }
  qp.constraints.resize(m, n);
  qp.constraint_lower.resize(m);
  qp.constraint_upper.resize(m);
  for (int r = 0; r < m; ++r) {
    for (int k = 0; k < n; ++k) qp.constraints(r, k) = normal(rng);
    // The origin is always feasible.
    qp.constraint_lower[r] = -0.3 * unit(rng) - 0.01;
    qp.constraint_upper[r] = 0.3 * unit(rng) + 0.01;
  }
  return qp;
}

TEST(SolveBoxQpTest, MatchesActiveSetEnumeration) {
  std::mt19937_64 rng(17);
  for (int trial = 0; trial < 60; ++trial) {
    const int n = 1 + trial % 3;
    const int m = trial % 3;
    BoxQp qp = RandomQp(rng, n, m, trial % 5 == 4);
    Eigen::VectorXd reference;
    const double best = EnumerateActiveSets(qp, &reference);
    QpResult result = SolveBoxQp(qp);
    ASSERT_TRUE(result.converged) << "trial " << trial;
    EXPECT_NEAR(result.objective, best, 1e-7) << "trial " << trial;
    EXPECT_LE(result.kkt_residual, 1e-7);
    EXPECT_LE(result.max_violation, 1e-8);
    for (int k = 0; k < n; ++k) {
      EXPECT_GE(result.x[k], qp.lower[k]);
      EXPECT_LE(result.x[k], qp.upper[k]);
    }
  }
}

TEST(SolveBoxQpTest, MultiplierSigns) {
  // min (x - 2)^2 / 2 s.t. x <= 1 as a general row: multiplier +1.
  BoxQp qp;
  qp.hessian = Eigen::MatrixXd::Identity(1, 1);
  qp.linear = Eigen::VectorXd::Constant(1, -2.0);
  qp.lower = Eigen::VectorXd::Constant(1, -10.0);
  qp.upper = Eigen::VectorXd::Constant(1, 10.0);
  qp.constraints = Eigen::MatrixXd::Identity(1, 1);
  qp.constraint_lower = Eigen::VectorXd::Constant(1, -1.0);
  qp.constraint_upper = Eigen::VectorXd::Constant(1, 1.0);
  QpResult up = SolveBoxQp(qp);
  EXPECT_NEAR(up.x[0], 1.0, 1e-9);
  EXPECT_NEAR(up.multipliers[0], 1.0, 1e-7);
  qp.linear[0] = 2.0;
  QpResult down = SolveBoxQp(qp);
  EXPECT_NEAR(down.x[0], -1.0, 1e-9);
  EXPECT_NEAR(down.multipliers[0], -1.0, 1e-7);
}

TEST(SolveBoxQpTest, FirstOrderPhaseAloneReachesTolerance) {
  std::mt19937_64 rng(23);
  QpOptions options;
  options.polish = false;
  for (int trial = 0; trial < 20; ++trial) {
    BoxQp qp = RandomQp(rng, 3, trial % 3, false);
    const double best = EnumerateActiveSets(qp, nullptr);
    QpResult result = SolveBoxQp(qp, options);
    EXPECT_FALSE(result.polished);
    EXPECT_NEAR(result.objective, best, 1e-5) << "trial " << trial;
  }
}

TEST(SolveBoxQpTest, FixedVariables) {
  BoxQp qp;
  qp.hessian = Eigen::MatrixXd::Identity(2, 2);
  qp.linear = Eigen::VectorXd::Constant(2, -1.0);
  qp.lower = Eigen::VectorXd::Constant(2, 0.25);
  qp.upper = Eigen::VectorXd::Constant(2, 0.25);
  qp.upper[1] = 2.0;
  qp.constraints.resize(0, 2);
  QpResult r = SolveBoxQp(qp);
  EXPECT_EQ(r.x[0], 0.25);
  EXPECT_NEAR(r.x[1], 1.0, 1e-9);
}

TEST(LargestEigenvalueBoundTest, BoundsTheSpectrum) {
  std::mt19937_64 rng(4);
  std::normal_distribution<double> normal;
  for (int trial = 0; trial < 10; ++trial) {
    Eigen::MatrixXd A(6, 6);
    for (int i = 0; i < 36; ++i) A.data()[i] = normal(rng);
    Eigen::MatrixXd H = A.transpose() * A;
    const double exact =
        Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd>(H).eigenvalues().maxCoeff();
    const double bound = LargestEigenvalueBound(H);
    EXPECT_GE(bound, exact);
    EXPECT_LE(bound, 1.2 * exact);
  }
}

}  // namespace
}  // namespace ensdispatch
