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

#ifndef ENSDISPATCH_SCENARIO_H_
#define ENSDISPATCH_SCENARIO_H_

#include <cstdint>
#include <map>
#include <optional>
#include <set>
#include <string>
#include <string_view>
#include <vector>

#include "ensdispatch/grid_model.h"
#include "ensdispatch/mdp.h"

namespace ensdispatch {

enum class Variant { kStd2, kHybrid };

std::string VariantName(Variant variant);
// Accepts "std2" and "hybrid". Throws ScenarioError otherwise.
Variant ParseVariant(std::string_view name);

enum class StepSchedule { kConstant, kInverseSqrt };

// How `step` is turned into delta(i, t): as given, times mu_t, or times the
// network curvature 2 mu_t R(i, i) / v0^2 seen by the ensemble bus (R is the
// resistance of its path to the slack).
enum class StepUnits { kAbsolute, kLossWeight, kCurvature };

// Control-injection box at one bus, MW / MVAr.
struct ControlBounds {
  double p_min = 0.0;
  double p_max = 0.0;
  double q_min = 0.0;
  double q_max = 0.0;
};

struct AlgorithmOptions {
  Variant variant = Variant::kStd2;
  double step = 0.5;                  // dual ascent step
  StepUnits step_units = StepUnits::kAbsolute;
  std::map<int, double> bus_step;     // per-bus override of `step`
  StepSchedule schedule = StepSchedule::kConstant;
  double tol_primal = 1e-5;           // per-unit
  double tol_dual = 1e-5;
  int max_iter = 500;
  int divergence_window = 50;         // 0 disables the detector
};

struct ScenarioSpec {
  int horizon = 0;
  std::vector<double> price;        // u_t, t = 1..T
  std::vector<double> loss_weight;  // mu_t, t = 1..T
  std::map<int, EnsembleSpec> ensembles;  // keyed by bus id
  std::set<int> replaced_loads;     // ensemble buses whose case load is dropped
  std::map<int, ControlBounds> controls;  // keyed by bus id
  AlgorithmOptions algorithm;
  std::optional<std::uint64_t> seed;
};

// Parses the scenario text (format documented in README.md)
// against `model`. `seed_override` replaces the [seed] section. Throws
// ParseError for malformed text and ScenarioError for inconsistent content.
ScenarioSpec LoadScenario(std::string_view text, const GridModel& model,
                          std::optional<std::uint64_t> seed_override = {});

// Uniform double on [0, 1) from the top 53 bits of one 64-bit draw.
double UniformUnit(std::uint64_t bits);

}  // namespace ensdispatch

#endif  // ENSDISPATCH_SCENARIO_H_
