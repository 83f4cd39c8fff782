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

#include "ensdispatch/ensemble_stats.h"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <random>
#include <thread>

#include "ensdispatch/errors.h"

namespace ensdispatch {
namespace {

void CheckInputs(const Eigen::VectorXd& rho, const Eigen::VectorXd& s_alpha,
                 int n) {
  if (rho.size() != s_alpha.size() || rho.size() == 0) {
    throw DimensionError("rho and s must have the same non-zero length");
  }
  if (n < 1) throw ScenarioError("ensemble size must be at least 1");
  if ((rho.array() < 0.0).any() || std::abs(rho.sum() - 1.0) > 1e-9) {
    throw ScenarioError("rho is not a probability vector");
  }
}

double StandardNormalCdf(double x) {
  return 0.5 * std::erfc(-x / std::sqrt(2.0));
}

}  // namespace

AggregateMoments ComputeAggregateMoments(const Eigen::VectorXd& rho,
                                         const Eigen::VectorXd& s_alpha,
                                         int n) {
  CheckInputs(rho, s_alpha, n);
  AggregateMoments m;
  m.n = n;
  m.mean = s_alpha.dot(rho);
  m.variance =
      ((s_alpha.array() - m.mean).square() * rho.array()).sum() / n;
  return m;
}

Eigen::VectorXd ApparentPower(const Eigen::VectorXd& p,
                              const Eigen::VectorXd& q) {
  if (p.size() != q.size()) throw DimensionError("p and q differ in length");
  return (p.array().square() + q.array().square()).sqrt().matrix();
}

double SampleAggregate(const Eigen::VectorXd& rho,
                       const Eigen::VectorXd& s_alpha, int n,
                       std::uint64_t seed) {
  CheckInputs(rho, s_alpha, n);
  std::mt19937_64 engine(seed);
  std::discrete_distribution<int> states(rho.data(), rho.data() + rho.size());
  std::vector<long long> counts(rho.size(), 0);
  for (int k = 0; k < n; ++k) ++counts[states(engine)];
  // Frequencies first, so a degenerate rho reproduces s exactly.
  double mean = 0.0;
  for (Eigen::Index a = 0; a < rho.size(); ++a) {
    if (counts[a] > 0) mean += static_cast<double>(counts[a]) / n * s_alpha[a];
  }
  return mean;
}

std::uint64_t ReplicateSeed(std::uint64_t seed, std::uint64_t replicate) {
  std::seed_seq seq{static_cast<std::uint32_t>(seed),
                    static_cast<std::uint32_t>(seed >> 32),
                    static_cast<std::uint32_t>(replicate),
                    static_cast<std::uint32_t>(replicate >> 32)};
  std::uint32_t words[2];
  seq.generate(words, words + 2);
  return (static_cast<std::uint64_t>(words[0]) << 32) | words[1];
}

double KsDistanceToNormal(std::vector<double> samples) {
  if (samples.empty()) return 0.0;
  std::sort(samples.begin(), samples.end());
  const double n = static_cast<double>(samples.size());
  double d = 0.0;
  for (size_t k = 0; k < samples.size(); ++k) {
    const double f = StandardNormalCdf(samples[k]);
    d = std::max({d, (k + 1) / n - f, f - k / n});
  }
  return d;
}

StatsReport RunReplicates(const Eigen::VectorXd& rho,
                          const Eigen::VectorXd& s_alpha, int n,
                          int replicates, std::uint64_t seed, int threads) {
  if (replicates < 1) throw ScenarioError("replicates must be at least 1");
  StatsReport report;
  report.analytic = ComputeAggregateMoments(rho, s_alpha, n);
  report.samples.assign(replicates, 0.0);

  std::atomic<int> next{0};
  auto work = [&] {
    for (int k = next++; k < replicates; k = next++) {
      report.samples[k] = SampleAggregate(rho, s_alpha, n, ReplicateSeed(seed, k));
    }
  };
  const int workers = std::clamp(threads, 1, replicates);
  if (workers == 1) {
    work();
  } else {
    std::vector<std::thread> pool;
    for (int w = 0; w < workers; ++w) pool.emplace_back(work);
    for (std::thread& th : pool) th.join();
  }

  double sum = 0.0;
  for (double x : report.samples) sum += x;
  report.empirical_mean = sum / replicates;
  double ss = 0.0;
  for (double x : report.samples) {
    ss += (x - report.empirical_mean) * (x - report.empirical_mean);
  }
  report.empirical_variance = replicates > 1 ? ss / (replicates - 1) : 0.0;

  const double sd = std::sqrt(report.analytic.variance);
  if (sd > 0.0) {
    std::vector<double> z(report.samples.size());
    for (size_t k = 0; k < z.size(); ++k) {
      z[k] = (report.samples[k] - report.analytic.mean) / sd;
    }
    report.ks_distance = KsDistanceToNormal(std::move(z));
  } else {
    const bool all_at_mean = std::all_of(
        report.samples.begin(), report.samples.end(),
        [&](double x) { return x == report.analytic.mean; });
    report.ks_distance = all_at_mean ? 0.0 : 1.0;
  }
  return report;
}

}  // namespace ensdispatch
