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

#include <cmath>
#include <random>
#include <vector>

#include <gtest/gtest.h>

#include "ensdispatch/errors.h"
#include "ensdispatch/scenario.h"
#include "mdp_oracle.h"
#include "test_util.h"

namespace ensdispatch {
namespace {

using testing::BruteForceMdp;
using testing::ColumnObjective;
using testing::ForEachSimplexPoint;
using testing::RandomEnsemble;

Eigen::VectorXd Vec(std::initializer_list<double> v) {
  Eigen::VectorXd out(v.size());
  int k = 0;
  for (double x : v) out[k++] = x;
  return out;
}

EffectiveCost ZeroLambda(const EnsembleSpec& spec) {
  std::vector<double> zero(spec.horizon(), 0.0);
  return EffectiveUtility(spec.cost, zero, zero, spec.p_mw, spec.q_mvar);
}

TEST(PropagateTest, Examples) {
  const Eigen::VectorXd rho = Vec({0.2, 0.3, 0.5});
  EXPECT_TRUE(Propagate(rho, Eigen::MatrixXd::Identity(3, 3)).isApprox(rho));
  const Eigen::VectorXd uniform =
      Propagate(rho, Eigen::MatrixXd::Constant(3, 3, 1.0 / 3));
  for (int a = 0; a < 3; ++a) EXPECT_NEAR(uniform[a], 1.0 / 3, 1e-15);
  Eigen::MatrixXd P(2, 2);
  P << 0.9, 0.4, 0.1, 0.6;
  const Eigen::VectorXd out = Propagate(Vec({1, 0}), P);
  EXPECT_DOUBLE_EQ(out[0], 0.9);
  EXPECT_DOUBLE_EQ(out[1], 0.1);
  EXPECT_THROW(Propagate(Vec({1, 0, 0}), P), DimensionError);
}

TEST(EffectiveUtilityTest, Examples) {
  Eigen::MatrixXd U = Eigen::MatrixXd::Random(2, 4);
  std::vector<double> zero(4, 0.0), one(4, 1.0);
  EXPECT_EQ(EffectiveUtility(U, zero, zero, Vec({1, 2}), Vec({3, 4})).values,
            U);
  const Eigen::MatrixXd from_price =
      EffectiveUtility(Eigen::MatrixXd::Zero(2, 4), one, zero, Vec({1, 2}),
                       Vec({0, 0}))
          .values;
  for (int t = 0; t < 4; ++t) {
    EXPECT_EQ(from_price(0, t), 1.0);
    EXPECT_EQ(from_price(1, t), 2.0);
  }
  // U(3) = 5, lambda_p(3) = 2, p = 0.5, lambda_q(3) = -1, q = 1.
  Eigen::MatrixXd U3 = Eigen::MatrixXd::Zero(1, 3);
  U3(0, 2) = 5.0;
  std::vector<double> lp{0, 0, 2}, lq{0, 0, -1};
  EXPECT_DOUBLE_EQ(
      EffectiveUtility(U3, lp, lq, Vec({0.5}), Vec({1})).values(0, 2), 5.0);
  EXPECT_THROW(EffectiveUtility(U, one, std::vector<double>(3, 0.0),
                                Vec({1, 2}), Vec({3, 4})),
               DimensionError);
}

TEST(KlStageCostTest, Examples) {
  Eigen::MatrixXd Pbar(2, 2);
  Pbar << 0.5, 0.3, 0.5, 0.7;
  const Eigen::MatrixXd gamma = Eigen::MatrixXd::Ones(2, 2);
  const Eigen::VectorXd rho = Vec({0.4, 0.6});
  EXPECT_EQ(KlStageCost(Pbar, Pbar, gamma, Vec({0, 0}), rho), 0.0);
  const Eigen::VectorXd U = Vec({1.5, -2.0});
  EXPECT_NEAR(KlStageCost(Pbar, Pbar, gamma, U, rho), U.dot(Pbar * rho),
              1e-15);

  Eigen::MatrixXd P = Pbar;
  P.col(0) = Vec({0.8, 0.2});
  EXPECT_NEAR(KlStageCost(P, Pbar, gamma, Vec({0, 0}), Vec({1, 0})),
              0.8 * std::log(1.6) + 0.2 * std::log(0.4), 1e-15);

  Eigen::MatrixXd sparse = Pbar;
  sparse.col(0) = Vec({1, 0});
  Eigen::MatrixXd leaving = Pbar;
  EXPECT_NO_THROW(KlStageCost(sparse, Pbar, gamma, U, rho));  // 0 log 0
  EXPECT_THROW(KlStageCost(leaving, sparse, gamma, U, rho), SupportError);
}

TEST(BackwardStepRowTest, ZeroCostReturnsTarget) {
  const Eigen::VectorXd pbar = Vec({0.2, 0.5, 0.3});
  RowSolution row = BackwardStepRow(Vec({0, 0, 0}), Vec({3, 3, 3}), pbar);
  EXPECT_TRUE(row.transitions.isApprox(pbar, 1e-15));
  EXPECT_NEAR(row.value, 0.0, 1e-15);
}

TEST(BackwardStepRowTest, ClosedFormSoftmin) {
  RowSolution row =
      BackwardStepRow(Vec({0, std::log(4.0)}), Vec({1, 1}), Vec({0.5, 0.5}));
  EXPECT_NEAR(row.transitions[0], 0.8, 1e-15);
  EXPECT_NEAR(row.transitions[1], 0.2, 1e-15);
  EXPECT_NEAR(row.value, -std::log((1 + 0.25) / 2), 1e-15);
}

TEST(BackwardStepRowTest, NonUniformMatchesSimplexGrid) {
  std::mt19937_64 rng(11);
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  for (int trial = 0; trial < 5; ++trial) {
    Eigen::VectorXd c(3), gamma(3), pbar(3);
    for (int a = 0; a < 3; ++a) {
      c[a] = 2.0 * unit(rng);
      gamma[a] = 0.5 + 2.0 * unit(rng);
      pbar[a] = 0.2 + unit(rng);
    }
    pbar /= pbar.sum();
    RowSolution row = BackwardStepRow(c, gamma, pbar);
    double best = std::numeric_limits<double>::infinity();
    ForEachSimplexPoint(3, {0, 1, 2}, 1000, [&](const Eigen::VectorXd& p) {
      best = std::min(best, ColumnObjective(p, c, gamma, pbar));
    });
    EXPECT_NEAR(row.value, best, 1e-4);
    EXPECT_LE(row.value, best + 1e-12);
    EXPECT_NEAR(row.value, ColumnObjective(row.transitions, c, gamma, pbar),
                1e-12);
    EXPECT_NEAR(row.transitions.sum(), 1.0, 1e-10);
  }
}

TEST(BackwardStepRowTest, RespectsSupport) {
  const Eigen::VectorXd pbar = Vec({0.6, 0.0, 0.4});
  RowSolution row = BackwardStepRow(Vec({1, -50, 0}), Vec({1, 2, 4}), pbar);
  EXPECT_EQ(row.transitions[1], 0.0);
  EXPECT_GT(row.transitions[0], 0.0);
  EXPECT_THROW(BackwardStepRow(Vec({0, 0}), Vec({1, 1}), Vec({0, 0})),
               SolverError);
}

TEST(BackwardStepRowTest, HugeCostsStayFinite) {
  RowSolution row = BackwardStepRow(Vec({1e6, 1e6 + 1.0, 1e6 + 3.0}),
                                    Vec({1, 2, 0.5}), Vec({0.3, 0.3, 0.4}));
  EXPECT_TRUE(row.transitions.allFinite());
  EXPECT_NEAR(row.transitions.sum(), 1.0, 1e-12);
  EXPECT_GT(row.value, 1e6 - 10);
}

TEST(RowDualMassTest, StrictlyDecreasingInEta) {
  std::mt19937_64 rng(3);
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  for (int trial = 0; trial < 50; ++trial) {
    const int n = 2 + trial % 6;
    Eigen::VectorXd c(n), gamma(n), pbar(n);
    for (int a = 0; a < n; ++a) {
      c[a] = 4.0 * unit(rng) - 2.0;
      gamma[a] = 0.1 + 5.0 * unit(rng);
      pbar[a] = unit(rng) < 0.2 ? 0.0 : unit(rng) + 0.05;
    }
    pbar[0] = 0.5;
    pbar /= pbar.sum();
    double previous = std::numeric_limits<double>::infinity();
    for (double eta = -10.0; eta <= 10.0; eta += 0.25) {
      const double mass = RowDualMass(c, gamma, pbar, eta);
      EXPECT_LT(mass, previous);
      previous = mass;
    }
  }
}

TEST(SolveMdpTest, ZeroCostKeepsTarget) {
  std::mt19937_64 rng(5);
  EnsembleSpec spec = RandomEnsemble(rng, 3, 4, false, true);
  spec.cost.setZero();
  // Weights may differ between origins but not within one origin's row.
  for (int b = 0; b < 3; ++b) spec.gamma[0].col(b).setConstant(0.5 + b);
  MdpTrajectory traj = SolveMdp(spec, ZeroLambda(spec));
  for (const Eigen::MatrixXd& P : traj.transitions) {
    EXPECT_LE((P - spec.target).cwiseAbs().maxCoeff(), 1e-10);
  }
  EXPECT_EQ(traj.objective, 0.0);
  EXPECT_EQ(traj.value.back(), Eigen::VectorXd::Zero(3));
}

TEST(SolveMdpTest, UnequalWeightsWithinARowMoveAwayFromTarget) {
  // With zero cost the row objective sum_a gamma^a P^a log(P^a / Pbar^a) has
  // gradient gamma^a at P = Pbar, which is not a multiple of the all-ones
  // vector: the target is not optimal and the optimum is negative.
  EnsembleSpec spec;
  spec.target = Eigen::MatrixXd::Constant(2, 2, 0.5);
  Eigen::MatrixXd gamma(2, 2);
  gamma << 1, 1, 10, 10;
  spec.gamma = {gamma};
  spec.cost = Eigen::MatrixXd::Zero(2, 1);
  spec.rho_in = Vec({0.5, 0.5});
  spec.p_mw = spec.q_mvar = Vec({0, 0});
  MdpTrajectory traj = SolveMdp(spec, ZeroLambda(spec));
  EXPECT_LT(traj.objective, 0.0);
  EXPECT_LT(traj.transitions[0](1, 0), 0.5);
  EXPECT_NEAR(traj.objective, testing::BruteForceMdp(spec, spec.cost, 1000),
              1e-4);
}

TEST(SolveMdpTest, MatchesBruteForceOnSmallInstances) {
  std::mt19937_64 rng(21);
  for (int trial = 0; trial < 12; ++trial) {
    const int n = 2 + trial % 2;
    const int T = 1 + (trial / 2) % 2;
    EnsembleSpec spec = RandomEnsemble(rng, n, T, trial % 3 == 0, trial % 4 == 1);
    MdpTrajectory traj = SolveMdp(spec, ZeroLambda(spec));
    const double oracle = BruteForceMdp(spec, spec.cost, n == 2 ? 1000 : 400);
    EXPECT_NEAR(traj.objective, oracle, 1e-3) << "trial " << trial;
    EXPECT_LE(traj.objective, oracle + 1e-9) << "trial " << trial;
  }
}

TEST(SolveMdpTest, TrajectoryInvariants) {
  std::mt19937_64 rng(8);
  for (int trial = 0; trial < 20; ++trial) {
    const int n = 2 + trial % 7;
    EnsembleSpec spec =
        RandomEnsemble(rng, n, 1 + trial % 6, trial % 2 == 0, true);
    spec.cost *= 5.0;
    MdpTrajectory traj = SolveMdp(spec, ZeroLambda(spec));
    ASSERT_EQ(traj.rho.size(), traj.transitions.size() + 1);
    for (size_t t = 0; t < traj.transitions.size(); ++t) {
      const Eigen::MatrixXd& P = traj.transitions[t];
      for (int b = 0; b < n; ++b) {
        EXPECT_NEAR(P.col(b).sum(), 1.0, 1e-10);
        for (int a = 0; a < n; ++a) {
          EXPECT_GE(P(a, b), 0.0);
          EXPECT_LE(P(a, b), 1.0);
          EXPECT_EQ(P(a, b) == 0.0, spec.target(a, b) == 0.0);
        }
      }
      EXPECT_TRUE(traj.rho[t + 1].isApprox(P * traj.rho[t], 1e-12));
    }
    for (const Eigen::VectorXd& rho : traj.rho) {
      EXPECT_NEAR(rho.sum(), 1.0, 1e-12);
      EXPECT_GE(rho.minCoeff(), 0.0);
    }
    double recomputed = 0.0;
    for (size_t t = 0; t < traj.transitions.size(); ++t) {
      recomputed += KlStageCost(traj.transitions[t], spec.target,
                                spec.GammaAt(static_cast<int>(t)),
                                spec.cost.col(t), traj.rho[t]);
    }
    EXPECT_NEAR(traj.objective, recomputed, 1e-8);
    // The objective also equals the value function weighted by rho_in.
    EXPECT_NEAR(traj.objective, spec.rho_in.dot(traj.value[0]), 1e-8);
  }
}

TEST(SolveMdpTest, TransitionsDoNotDependOnInitialDistribution) {
  std::mt19937_64 rng(9);
  EnsembleSpec spec = RandomEnsemble(rng, 4, 5, false, true);
  MdpTrajectory a = SolveMdp(spec, ZeroLambda(spec));
  spec.rho_in = Vec({1, 0, 0, 0});
  MdpTrajectory b = SolveMdp(spec, ZeroLambda(spec));
  for (size_t t = 0; t < a.transitions.size(); ++t) {
    EXPECT_EQ(a.transitions[t], b.transitions[t]);
  }
}

TEST(SolveMdpTest, ScalingGammaAndCostKeepsTransitions) {
  std::mt19937_64 rng(10);
  for (int trial = 0; trial < 10; ++trial) {
    EnsembleSpec spec = RandomEnsemble(rng, 3 + trial % 3, 4, trial % 2, true);
    MdpTrajectory a = SolveMdp(spec, ZeroLambda(spec));
    const double k = 0.3 + 3.0 * trial;
    spec.gamma[0] *= k;
    spec.cost *= k;
    MdpTrajectory b = SolveMdp(spec, ZeroLambda(spec));
    for (size_t t = 0; t < a.transitions.size(); ++t) {
      EXPECT_LE((a.transitions[t] - b.transitions[t]).cwiseAbs().maxCoeff(),
                1e-9);
    }
    EXPECT_NEAR(b.objective, k * a.objective, 1e-9 * std::max(1.0, k));
  }
}

TEST(SolveMdpTest, TimeVaryingGamma) {
  std::mt19937_64 rng(12);
  EnsembleSpec spec = RandomEnsemble(rng, 2, 2, false, false);
  Eigen::MatrixXd g1 = spec.gamma[0] * 3.0;
  spec.gamma = {spec.gamma[0], g1};
  MdpTrajectory traj = SolveMdp(spec, ZeroLambda(spec));
  EXPECT_NEAR(traj.objective, BruteForceMdp(spec, spec.cost, 1000), 1e-3);
  spec.gamma.push_back(g1);
  EXPECT_THROW(SolveMdp(spec, ZeroLambda(spec)), DimensionError);
}

TEST(SolveMdpTest, NonUniformGammaNarrowsTheSpread) {
  GridModel model = testing::Case33bw();
  ScenarioSpec uniform = LoadScenario(
      testing::ReadText(testing::DataPath("feeder33_uniform.scn")), model);
  ScenarioSpec dominant = LoadScenario(
      testing::ReadText(testing::DataPath("feeder33_nonuniform.scn")), model);
  for (int bus : {17, 20, 23, 26}) {
    const EnsembleSpec& u = uniform.ensembles.at(bus);
    const EnsembleSpec& d = dominant.ensembles.at(bus);
    ASSERT_EQ(u.cost, d.cost);
    EXPECT_LT(MeanSpread(SolveMdp(d, ZeroLambda(d))),
              MeanSpread(SolveMdp(u, ZeroLambda(u))))
        << "bus " << bus;
  }
}

TEST(EnsembleSpecTest, ValidateRejectsBrokenInvariants) {
  std::mt19937_64 rng(2);
  EnsembleSpec good = RandomEnsemble(rng, 3, 2, true, true);
  EXPECT_NO_THROW(good.Validate());
  EnsembleSpec bad = good;
  bad.target(0, 0) += 0.1;
  EXPECT_THROW(bad.Validate(), ScenarioError);
  bad = good;
  bad.rho_in[0] = -0.1;
  EXPECT_THROW(bad.Validate(), ScenarioError);
  bad = good;
  bad.gamma[0](0, 0) = 0.0;
  EXPECT_THROW(bad.Validate(), ScenarioError);
}

}  // namespace
}  // namespace ensdispatch
