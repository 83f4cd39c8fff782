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

#ifndef ENSDISPATCH_ENSEMBLE_STATS_H_
#define ENSDISPATCH_ENSEMBLE_STATS_H_

#include <cstdint>
#include <vector>

#include <Eigen/Dense>

namespace ensdispatch {

// Limit statistics of the sample-mean apparent power of n independent devices
// whose states are drawn from rho.
struct AggregateMoments {
  double mean = 0.0;
  double variance = 0.0;  // of the size-n sample mean
  int n = 1;
};

// mean = sum_a s^a rho^a, variance = sum_a (s^a - mean)^2 rho^a / n.
// Throws DimensionError on size mismatch and ScenarioError for n < 1.
AggregateMoments ComputeAggregateMoments(const Eigen::VectorXd& rho,
                                         const Eigen::VectorXd& s_alpha,
                                         int n);

// s^a = sqrt(p^a^2 + q^a^2).
Eigen::VectorXd ApparentPower(const Eigen::VectorXd& p,
                              const Eigen::VectorXd& q);

// Draws n states i.i.d. from rho and returns the mean of s over the draws.
// Deterministic per seed.
double SampleAggregate(const Eigen::VectorXd& rho,
                       const Eigen::VectorXd& s_alpha, int n,
                       std::uint64_t seed);

// Seed of replicate k derived from the experiment seed.
std::uint64_t ReplicateSeed(std::uint64_t seed, std::uint64_t replicate);

// Kolmogorov-Smirnov distance between the empirical CDF of `samples` and
// the standard normal CDF.
double KsDistanceToNormal(std::vector<double> samples);

struct StatsReport {
  AggregateMoments analytic;
  double empirical_mean = 0.0;
  double empirical_variance = 0.0;  // unbiased
  double ks_distance = 0.0;  // of samples standardized by the analytic moments
  std::vector<double> samples;
};

// `replicates` independent calls of SampleAggregate, spread over `threads`.
// The KS distance is 0 when the analytic variance vanishes and all samples
// equal the mean (1 otherwise). Throws ScenarioError for replicates < 1.
StatsReport RunReplicates(const Eigen::VectorXd& rho,
                          const Eigen::VectorXd& s_alpha, int n,
                          int replicates, std::uint64_t seed, int threads = 1);

}  // namespace ensdispatch

#endif  // ENSDISPATCH_ENSEMBLE_STATS_H_
