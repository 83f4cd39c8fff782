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

#ifndef ENSDISPATCH_GRID_MODEL_H_
#define ENSDISPATCH_GRID_MODEL_H_

#include <string>
#include <string_view>
#include <vector>

namespace ensdispatch {

// Matpower bus type of the reference bus.
inline constexpr int kSlackBusType = 3;

struct Bus {
  int id = 0;
  int type = 1;
  double p_mw = 0.0;    // base load, consumption positive
  double q_mvar = 0.0;
  double v_set = 1.0;   // per-unit magnitude (slack reference)
  double v_min = 0.9;
  double v_max = 1.1;
  double base_kv = 0.0;

  bool operator==(const Bus&) const = default;
};

// In-service line. Endpoints are bus ids; r and x are per-unit on base_mva.
struct Branch {
  int from = 0;
  int to = 0;
  double r = 0.0;
  double x = 0.0;

  bool operator==(const Branch&) const = default;
};

// Radial distribution feeder.
struct GridModel {
  double base_mva = 1.0;
  std::vector<Bus> buses;
  std::vector<Branch> branches;
  int slack_bus = 0;  // bus id

  // Position of `bus_id` in `buses`. Throws ModelError if absent.
  int IndexOf(int bus_id) const;
  bool HasBus(int bus_id) const;
  int slack_index() const { return IndexOf(slack_bus); }
  double v0() const { return buses[slack_index()].v_set; }

  bool operator==(const GridModel&) const = default;
};

// Breadth-first ordering of the tree rooted at the slack bus. All entries are
// positions into GridModel::buses / GridModel::branches.
struct TreeOrder {
  std::vector<int> order;          // slack first, parents before children
  std::vector<int> parent;         // -1 at the slack
  std::vector<int> parent_branch;  // -1 at the slack
  std::vector<std::vector<int>> children;
};

// Parses a Matpower v2 case (MATLAB function syntax). Only baseMVA, bus and
// branch are consumed. The two unit-conversion statements that ship with
// distribution cases such as case33bw (ohm impedances, kW loads) are
// recognized and applied. The result is validated and guaranteed radial.
GridModel ParseMatpower(std::string_view text);

// Checks slack existence, impedance signs, voltage bounds and unique ids.
void ValidateModel(const GridModel& model);

// Returns the BFS order rooted at the slack. Throws RadialityError naming the
// cycle or an unreachable bus.
TreeOrder ValidateRadial(const GridModel& model);

// Canonical Matpower text: per-unit impedances, MW loads, no conversion
// block. ParseMatpower(WriteCanonical(m)) == m.
std::string WriteCanonical(const GridModel& model);

}  // namespace ensdispatch

#endif  // ENSDISPATCH_GRID_MODEL_H_
