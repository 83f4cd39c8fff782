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

#include "ensdispatch/grid_model.h"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <cstdio>
#include <numeric>
#include <optional>
#include <queue>
#include <regex>
#include <sstream>
#include <string>
#include <unordered_map>
#include <unordered_set>

#include "ensdispatch/errors.h"

namespace ensdispatch {
namespace {

// Matpower v2 column positions (0-based).
constexpr int kBusCols = 13;
constexpr int kBusId = 0, kBusType = 1, kBusPd = 2, kBusQd = 3, kBusVm = 7,
              kBusBaseKv = 9, kBusVmax = 11, kBusVmin = 12;
constexpr int kBranchCols = 13;
constexpr int kBranchFrom = 0, kBranchTo = 1, kBranchR = 2, kBranchX = 3,
              kBranchStatus = 10;

struct Row {
  std::vector<double> values;
  int line = 0;
};

std::string StripComment(const std::string& line) {
  bool in_quote = false;
  for (size_t i = 0; i < line.size(); ++i) {
    if (line[i] == '\'') in_quote = !in_quote;
    if (line[i] == '%' && !in_quote) return line.substr(0, i);
  }
  return line;
}

std::string RemoveSpace(const std::string& s) {
  std::string out;
  for (char c : s) {
    if (c != ' ' && c != '\t' && c != '\r') out.push_back(c);
  }
  return out;
}

double ParseNumber(std::string_view token, int line) {
  if (token == "Inf" || token == "inf") return HUGE_VAL;
  if (token == "-Inf" || token == "-inf") return -HUGE_VAL;
  if (!token.empty() && token.front() == '+') token.remove_prefix(1);
  double value = 0.0;
  auto [ptr, ec] =
      std::from_chars(token.data(), token.data() + token.size(), value);
  if (ec != std::errc() || ptr != token.data() + token.size()) {
    throw ParseError("invalid number '" + std::string(token) + "'", line);
  }
  return value;
}

// Splits one matrix row (already free of '[', ']' and ';') into numbers.
std::vector<double> ParseRow(const std::string& text, int line) {
  std::vector<double> values;
  std::string token;
  auto flush = [&] {
    if (!token.empty()) values.push_back(ParseNumber(token, line));
    token.clear();
  };
  for (char c : text) {
    if (c == ' ' || c == '\t' || c == ',' || c == '\r') {
      flush();
    } else {
      token.push_back(c);
    }
  }
  flush();
  return values;
}

struct ConversionStatements {
  std::optional<int> vbase_bus_row;  // 1-based row into mpc.bus
  double vbase_scale = 1.0;
  std::optional<double> sbase_scale;
  bool branch_ohms = false;
  std::optional<double> load_divisor;
};

void MatchConversion(const std::string& statement, ConversionStatements* conv,
                     int line) {
  static const std::regex kVbase(
      R"(Vbase=mpc\.bus\((\d+),BASE_KV\)\*([0-9.eE+\-]+);?)");
  static const std::regex kSbase(R"(Sbase=mpc\.baseMVA\*([0-9.eE+\-]+);?)");
  static const std::regex kBranch(
      R"(mpc\.branch\(:,\[BR_R,?BR_X\]\)=mpc\.branch\(:,\[BR_R,?BR_X\]\)/\(Vbase\^2/Sbase\);?)");
  static const std::regex kLoads(
      R"(mpc\.bus\(:,\[PD,?QD\]\)=mpc\.bus\(:,\[PD,?QD\]\)/([0-9.eE+\-]+);?)");
  std::smatch m;
  if (std::regex_match(statement, m, kVbase)) {
    conv->vbase_bus_row = std::stoi(m[1].str());
    conv->vbase_scale = ParseNumber(m[2].str(), line);
  } else if (std::regex_match(statement, m, kSbase)) {
    conv->sbase_scale = ParseNumber(m[1].str(), line);
  } else if (std::regex_match(statement, kBranch)) {
    conv->branch_ohms = true;
  } else if (std::regex_match(statement, m, kLoads)) {
    conv->load_divisor = ParseNumber(m[1].str(), line);
  }
}

struct UnionFind {
  explicit UnionFind(int n) : parent(n) {
    std::iota(parent.begin(), parent.end(), 0);
  }
  int Find(int a) {
    while (parent[a] != a) a = parent[a] = parent[parent[a]];
    return a;
  }
  bool Unite(int a, int b) {
    a = Find(a);
    b = Find(b);
    if (a == b) return false;
    parent[b] = a;
    return true;
  }
  std::vector<int> parent;
};

// Bus path between a and b over the given adjacency (edges accepted so far).
std::vector<int> ForestPath(const std::vector<std::vector<int>>& adjacency,
                            int a, int b) {
  std::vector<int> previous(adjacency.size(), -2);
  std::queue<int> frontier;
  frontier.push(a);
  previous[a] = -1;
  while (!frontier.empty()) {
    int u = frontier.front();
    frontier.pop();
    if (u == b) break;
    for (int v : adjacency[u]) {
      if (previous[v] == -2) {
        previous[v] = u;
        frontier.push(v);
      }
    }
  }
  std::vector<int> path;
  for (int u = b; u != -1; u = previous[u]) path.push_back(u);
  std::reverse(path.begin(), path.end());
  return path;
}

std::string FormatDouble(double value) {
  char buffer[40];
  std::snprintf(buffer, sizeof(buffer), "%.17g", value);
  return buffer;
}

}  // namespace

int GridModel::IndexOf(int bus_id) const {
  for (size_t i = 0; i < buses.size(); ++i) {
    if (buses[i].id == bus_id) return static_cast<int>(i);
  }
  throw ModelError("unknown bus " + std::to_string(bus_id));
}

bool GridModel::HasBus(int bus_id) const {
  return std::any_of(buses.begin(), buses.end(),
                     [&](const Bus& b) { return b.id == bus_id; });
}

GridModel ParseMatpower(std::string_view text) {
  std::unordered_map<std::string, std::vector<Row>> matrices;
  std::optional<double> base_mva;
  ConversionStatements conv;

  std::istringstream stream{std::string(text)};
  std::string raw;
  int line_no = 0;
  std::string open_matrix;  // name of the matrix being read, if any
  std::string pending;      // statement continued with "..."
  static const std::regex kMatrixStart(R"(^\s*mpc\.(\w+)\s*=\s*\[(.*)$)");
  static const std::regex kBaseMva(
      R"(^\s*mpc\.baseMVA\s*=\s*([0-9.eE+\-]+)\s*;?\s*$)");

  auto consume_rows = [&](const std::string& body, int line) {
    // Returns via open_matrix.clear() once the closing bracket is seen.
    std::string content = body;
    bool closes = false;
    if (auto pos = content.find(']'); pos != std::string::npos) {
      closes = true;
      content = content.substr(0, pos);
    }
    std::string row;
    std::istringstream parts(content);
    while (std::getline(parts, row, ';')) {
      std::vector<double> values = ParseRow(row, line);
      if (!values.empty()) {
        matrices[open_matrix].push_back({std::move(values), line});
      }
    }
    if (closes) open_matrix.clear();
  };

  while (std::getline(stream, raw)) {
    ++line_no;
    std::string line = StripComment(raw);
    if (!open_matrix.empty()) {
      consume_rows(line, line_no);
      continue;
    }
    std::smatch m;
    if (std::regex_match(line, m, kMatrixStart)) {
      open_matrix = m[1].str();
      matrices[open_matrix];  // present even if empty
      consume_rows(m[2].str(), line_no);
      continue;
    }
    if (std::regex_match(line, m, kBaseMva)) {
      base_mva = ParseNumber(m[1].str(), line_no);
      continue;
    }
    std::string compact = RemoveSpace(line);
    if (compact.size() >= 3 &&
        compact.compare(compact.size() - 3, 3, "...") == 0) {
      pending += compact.substr(0, compact.size() - 3);
      continue;
    }
    MatchConversion(pending + compact, &conv, line_no);
    pending.clear();
  }
  if (!open_matrix.empty()) {
    throw ParseError("unterminated matrix mpc." + open_matrix, line_no);
  }
  if (!base_mva) throw ParseError("missing mpc.baseMVA", 0);
  if (!matrices.count("bus")) throw ParseError("missing mpc.bus", 0);
  if (!matrices.count("branch")) throw ParseError("missing mpc.branch", 0);

  GridModel model;
  model.base_mva = *base_mva;
  for (const Row& row : matrices["bus"]) {
    if (row.values.size() < kBusCols) {
      throw ParseError("bus row has " + std::to_string(row.values.size()) +
                           " columns, expected at least " +
                           std::to_string(kBusCols),
                       row.line);
    }
    const auto& v = row.values;
    Bus bus;
    bus.id = static_cast<int>(v[kBusId]);
    bus.type = static_cast<int>(v[kBusType]);
    bus.p_mw = v[kBusPd];
    bus.q_mvar = v[kBusQd];
    bus.v_set = v[kBusVm];
    bus.base_kv = v[kBusBaseKv];
    bus.v_max = v[kBusVmax];
    bus.v_min = v[kBusVmin];
    model.buses.push_back(bus);
  }
  for (const Row& row : matrices["branch"]) {
    if (row.values.size() < kBranchCols) {
      throw ParseError("branch row has " + std::to_string(row.values.size()) +
                           " columns, expected at least " +
                           std::to_string(kBranchCols),
                       row.line);
    }
    const auto& v = row.values;
    if (v[kBranchStatus] == 0.0) continue;
    model.branches.push_back({static_cast<int>(v[kBranchFrom]),
                              static_cast<int>(v[kBranchTo]), v[kBranchR],
                              v[kBranchX]});
  }

  if (conv.branch_ohms) {
    if (!conv.vbase_bus_row || !conv.sbase_scale) {
      throw ParseError("impedance conversion without Vbase/Sbase definitions",
                       0);
    }
    int row = *conv.vbase_bus_row - 1;
    if (row < 0 || row >= static_cast<int>(model.buses.size())) {
      throw ParseError("Vbase refers to a missing bus row", 0);
    }
    double vbase = model.buses[row].base_kv * conv.vbase_scale;
    double sbase = model.base_mva * *conv.sbase_scale;
    double zbase = vbase * vbase / sbase;
    for (Branch& b : model.branches) {
      b.r /= zbase;
      b.x /= zbase;
    }
  }
  if (conv.load_divisor) {
    for (Bus& b : model.buses) {
      b.p_mw /= *conv.load_divisor;
      b.q_mvar /= *conv.load_divisor;
    }
  }

  int slack_count = 0;
  for (const Bus& b : model.buses) {
    if (b.type == kSlackBusType) {
      if (slack_count++ == 0) model.slack_bus = b.id;
    }
  }
  if (slack_count == 0) throw ModelError("no slack bus (bus type 3)");
  if (slack_count > 1) throw ModelError("more than one slack bus");

  ValidateModel(model);
  ValidateRadial(model);
  return model;
}

void ValidateModel(const GridModel& model) {
  if (!(model.base_mva > 0.0)) throw ModelError("baseMVA must be positive");
  std::unordered_set<int> ids;
  for (const Bus& b : model.buses) {
    if (!ids.insert(b.id).second) {
      throw ModelError("duplicate bus id " + std::to_string(b.id));
    }
    if (b.v_min > b.v_max) {
      throw ModelError("bus " + std::to_string(b.id) + " has Vmin > Vmax");
    }
  }
  if (!ids.count(model.slack_bus)) throw ModelError("no slack bus");
  const Bus& slack = model.buses[model.slack_index()];
  if (slack.v_set < slack.v_min || slack.v_set > slack.v_max) {
    throw ModelError("slack voltage outside its bounds");
  }
  for (const Branch& br : model.branches) {
    if (!ids.count(br.from) || !ids.count(br.to)) {
      throw ModelError("branch " + std::to_string(br.from) + "-" +
                       std::to_string(br.to) + " references a missing bus");
    }
    if (br.r < 0.0 || br.x < 0.0) {
      throw ModelError("branch " + std::to_string(br.from) + "-" +
                       std::to_string(br.to) + " has negative impedance");
    }
  }
}

TreeOrder ValidateRadial(const GridModel& model) {
  const int n = static_cast<int>(model.buses.size());
  std::unordered_map<int, int> index;
  for (int i = 0; i < n; ++i) index[model.buses[i].id] = i;
  auto position = [&](int id) {
    auto it = index.find(id);
    if (it == index.end()) {
      throw ModelError("branch references missing bus " + std::to_string(id));
    }
    return it->second;
  };

  UnionFind components(n);
  std::vector<std::vector<int>> forest(n);
  std::vector<std::vector<std::pair<int, int>>> adjacency(n);  // (bus, branch)
  for (size_t k = 0; k < model.branches.size(); ++k) {
    const Branch& br = model.branches[k];
    int a = position(br.from), b = position(br.to);
    if (!components.Unite(a, b)) {
      std::vector<int> path = ForestPath(forest, a, b);
      std::string names;
      for (int u : path) names += std::to_string(model.buses[u].id) + " ";
      throw RadialityError("cycle through buses " + names + "closed by branch " +
                           std::to_string(br.from) + "-" +
                           std::to_string(br.to));
    }
    forest[a].push_back(b);
    forest[b].push_back(a);
    adjacency[a].push_back({b, static_cast<int>(k)});
    adjacency[b].push_back({a, static_cast<int>(k)});
  }

  TreeOrder tree;
  tree.parent.assign(n, -1);
  tree.parent_branch.assign(n, -1);
  tree.children.assign(n, {});
  std::vector<bool> seen(n, false);
  int root = position(model.slack_bus);
  std::queue<int> frontier;
  frontier.push(root);
  seen[root] = true;
  while (!frontier.empty()) {
    int u = frontier.front();
    frontier.pop();
    tree.order.push_back(u);
    for (auto [v, k] : adjacency[u]) {
      if (seen[v]) continue;
      seen[v] = true;
      tree.parent[v] = u;
      tree.parent_branch[v] = k;
      tree.children[u].push_back(v);
      frontier.push(v);
    }
  }
  for (int i = 0; i < n; ++i) {
    if (!seen[i]) {
      throw RadialityError("bus " + std::to_string(model.buses[i].id) +
                           " is disconnected from the slack bus");
    }
  }
  return tree;
}

std::string WriteCanonical(const GridModel& model) {
  std::ostringstream out;
  out << "function mpc = canonical\n";
  out << "mpc.version = '2';\n";
  out << "mpc.baseMVA = " << FormatDouble(model.base_mva) << ";\n";
  out << "%\tbus_i\ttype\tPd\tQd\tGs\tBs\tarea\tVm\tVa\tbaseKV\tzone\tVmax\t"
         "Vmin\n";
  out << "mpc.bus = [\n";
  for (const Bus& b : model.buses) {
    out << '\t' << b.id << '\t' << b.type << '\t' << FormatDouble(b.p_mw)
        << '\t' << FormatDouble(b.q_mvar) << "\t0\t0\t1\t"
        << FormatDouble(b.v_set) << "\t0\t" << FormatDouble(b.base_kv)
        << "\t1\t" << FormatDouble(b.v_max) << '\t' << FormatDouble(b.v_min)
        << ";\n";
  }
  out << "];\n";
  out << "%\tfbus\ttbus\tr\tx\tb\trateA\trateB\trateC\tratio\tangle\tstatus\t"
         "angmin\tangmax\n";
  out << "mpc.branch = [\n";
  for (const Branch& br : model.branches) {
    out << '\t' << br.from << '\t' << br.to << '\t' << FormatDouble(br.r)
        << '\t' << FormatDouble(br.x) << "\t0\t0\t0\t0\t0\t0\t1\t-360\t360;\n";
  }
  out << "];\n";
  return out.str();
}

}  // namespace ensdispatch
