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

#include "ensdispatch/scenario.h"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <random>
#include <sstream>

#include "ensdispatch/errors.h"

namespace ensdispatch {
namespace {

struct Entry {
  std::string key;
  std::string value;
  int line = 0;
};

struct Section {
  std::string name;      // e.g. "ensemble"
  std::string argument;  // e.g. "17"
  int line = 0;
  std::vector<Entry> entries;

  const Entry* Find(std::string_view key) const {
    const Entry* found = nullptr;
    for (const Entry& e : entries) {
      if (e.key == key) {
        if (found) throw ParseError("duplicate key '" + e.key + "'", e.line);
        found = &e;
      }
    }
    return found;
  }
  std::vector<const Entry*> All(std::string_view key) const {
    std::vector<const Entry*> out;
    for (const Entry& e : entries) {
      if (e.key == key) out.push_back(&e);
    }
    return out;
  }
};

std::string Trim(std::string_view s) {
  size_t begin = s.find_first_not_of(" \t\r");
  if (begin == std::string_view::npos) return "";
  size_t end = s.find_last_not_of(" \t\r");
  return std::string(s.substr(begin, end - begin + 1));
}

std::vector<std::string> Split(const std::string& s) {
  std::istringstream in(s);
  std::vector<std::string> out;
  std::string token;
  while (in >> token) out.push_back(token);
  return out;
}

double ToDouble(const std::string& token, int line) {
  std::string_view view = token;
  if (!view.empty() && view.front() == '+') view.remove_prefix(1);
  double value = 0.0;
  auto [ptr, ec] = std::from_chars(view.data(), view.data() + view.size(),
                                   value);
  if (ec != std::errc() || ptr != view.data() + view.size() ||
      !std::isfinite(value)) {
    throw ParseError("invalid number '" + token + "'", line);
  }
  return value;
}

long long ToInteger(const std::string& token, int line) {
  long long value = 0;
  auto [ptr, ec] =
      std::from_chars(token.data(), token.data() + token.size(), value);
  if (ec != std::errc() || ptr != token.data() + token.size()) {
    throw ParseError("invalid integer '" + token + "'", line);
  }
  return value;
}

std::vector<double> ToDoubles(const Entry& e) {
  std::vector<double> out;
  for (const std::string& token : Split(e.value)) {
    out.push_back(ToDouble(token, e.line));
  }
  return out;
}

std::vector<double> ExpectCount(const Entry& e, size_t count) {
  std::vector<double> values = ToDoubles(e);
  if (values.size() != count) {
    throw ParseError("'" + e.key + "' expects " + std::to_string(count) +
                         " values, got " + std::to_string(values.size()),
                     e.line);
  }
  return values;
}

std::vector<Section> Tokenize(std::string_view text) {
  std::vector<Section> sections;
  std::istringstream in{std::string(text)};
  std::string raw;
  int line = 0;
  while (std::getline(in, raw)) {
    ++line;
    if (auto hash = raw.find('#'); hash != std::string::npos) {
      raw = raw.substr(0, hash);
    }
    std::string s = Trim(raw);
    if (s.empty()) continue;
    if (s.front() == '[') {
      if (s.back() != ']') throw ParseError("unterminated section header", line);
      std::vector<std::string> words = Split(s.substr(1, s.size() - 2));
      if (words.empty() || words.size() > 2) {
        throw ParseError("malformed section header", line);
      }
      sections.push_back({words[0], words.size() == 2 ? words[1] : "", line, {}});
      continue;
    }
    auto eq = s.find('=');
    if (eq == std::string::npos) throw ParseError("expected 'key = value'", line);
    if (sections.empty()) throw ParseError("entry outside of a section", line);
    std::string key = Trim(s.substr(0, eq));
    // Collapse inner whitespace so "bus   17" and "bus 17" match.
    key = [&] {
      std::string joined;
      for (const std::string& w : Split(key)) {
        if (!joined.empty()) joined += ' ';
        joined += w;
      }
      return joined;
    }();
    if (key.empty()) throw ParseError("empty key", line);
    sections.back().entries.push_back({key, Trim(s.substr(eq + 1)), line});
  }
  return sections;
}

void RejectUnknownKeys(const Section& section,
                       std::initializer_list<std::string_view> allowed,
                       std::string_view prefix_allowed = {}) {
  for (const Entry& e : section.entries) {
    bool ok = std::find(allowed.begin(), allowed.end(), e.key) != allowed.end();
    if (!ok && !prefix_allowed.empty() && e.key.rfind(prefix_allowed, 0) == 0) {
      ok = true;
    }
    if (!ok) {
      throw ParseError("unknown key '" + e.key + "' in [" + section.name + "]",
                       e.line);
    }
  }
}

class Rng {
 public:
  explicit Rng(std::uint64_t seed) : engine_(seed) {}
  double Uniform(double lo, double hi) {
    return lo + (hi - lo) * UniformUnit(engine_());
  }

 private:
  std::mt19937_64 engine_;
};

// "random lo hi" draws per-state fractions of the rated bus load.
struct PowerSpec {
  bool random = false;
  double lo = 0.0, hi = 0.0;
  std::vector<double> values;
};

PowerSpec ParsePower(const Entry& e, int states) {
  PowerSpec spec;
  std::vector<std::string> words = Split(e.value);
  if (!words.empty() && words[0] == "random") {
    if (words.size() != 3) {
      throw ParseError("'random' expects two fractions", e.line);
    }
    spec.random = true;
    spec.lo = ToDouble(words[1], e.line);
    spec.hi = ToDouble(words[2], e.line);
    if (spec.lo > spec.hi) throw ParseError("random range is reversed", e.line);
    return spec;
  }
  spec.values = ExpectCount(e, static_cast<size_t>(states));
  return spec;
}

}  // namespace

std::string VariantName(Variant variant) {
  return variant == Variant::kStd2 ? "std2" : "hybrid";
}

Variant ParseVariant(std::string_view name) {
  if (name == "std2") return Variant::kStd2;
  if (name == "hybrid") return Variant::kHybrid;
  throw ScenarioError("unknown variant '" + std::string(name) +
                      "' (expected std2 or hybrid)");
}

double UniformUnit(std::uint64_t bits) {
  return static_cast<double>(bits >> 11) * 0x1.0p-53;
}

ScenarioSpec LoadScenario(std::string_view text, const GridModel& model,
                          std::optional<std::uint64_t> seed_override) {
  std::vector<Section> sections = Tokenize(text);
  ScenarioSpec scenario;

  const Section* horizon = nullptr;
  const Section* prices = nullptr;
  const Section* bounds = nullptr;
  const Section* algorithm = nullptr;
  const Section* seed = nullptr;
  std::map<int, const Section*> ensemble_sections;
  for (const Section& s : sections) {
    auto unique = [&](const Section*& slot) {
      if (slot) throw ParseError("duplicate section [" + s.name + "]", s.line);
      slot = &s;
    };
    if (s.name == "horizon") {
      unique(horizon);
    } else if (s.name == "prices") {
      unique(prices);
    } else if (s.name == "bounds") {
      unique(bounds);
    } else if (s.name == "algorithm") {
      unique(algorithm);
    } else if (s.name == "seed") {
      unique(seed);
    } else if (s.name == "ensemble") {
      if (s.argument.empty()) {
        throw ParseError("[ensemble] needs a bus id", s.line);
      }
      int bus = static_cast<int>(ToInteger(s.argument, s.line));
      if (!ensemble_sections.emplace(bus, &s).second) {
        throw ParseError("duplicate ensemble at bus " + s.argument, s.line);
      }
    } else {
      throw ParseError("unknown section [" + s.name + "]", s.line);
    }
  }

  // [seed]
  if (seed) {
    RejectUnknownKeys(*seed, {"value"});
    const Entry* value = seed->Find("value");
    if (!value) throw ParseError("[seed] needs 'value'", seed->line);
    long long v = ToInteger(Trim(value->value), value->line);
    if (v < 0) throw ParseError("seed must be non-negative", value->line);
    scenario.seed = static_cast<std::uint64_t>(v);
  }
  if (seed_override) scenario.seed = seed_override;
  std::optional<Rng> rng;
  if (scenario.seed) rng.emplace(*scenario.seed);
  auto need_rng = [&](int line) -> Rng& {
    if (!rng) throw ScenarioError("line " + std::to_string(line) +
                                  ": randomized input requires a [seed]");
    return *rng;
  };

  // [horizon]
  if (!horizon) throw ParseError("missing [horizon]", 0);
  RejectUnknownKeys(*horizon, {"steps"});
  const Entry* steps = horizon->Find("steps");
  if (!steps) throw ParseError("[horizon] needs 'steps'", horizon->line);
  long long t_count = ToInteger(Trim(steps->value), steps->line);
  if (t_count < 1) {
    throw ScenarioError("horizon must be at least one step, got " +
                        std::to_string(t_count));
  }
  const int T = static_cast<int>(t_count);
  scenario.horizon = T;

  // [prices]
  scenario.price.assign(T, 1.0);
  std::string loss_mode = "1";
  if (prices) {
    RejectUnknownKeys(*prices, {"mode", "base", "values", "loss_weight"});
    double base = 1.0;
    if (const Entry* e = prices->Find("base")) base = ExpectCount(*e, 1)[0];
    std::string mode = "constant";
    if (const Entry* e = prices->Find("mode")) mode = Trim(e->value);
    if (mode == "constant") {
      scenario.price.assign(T, base);
    } else if (mode == "random") {
      Rng& r = need_rng(prices->line);
      for (int t = 0; t < T; ++t) scenario.price[t] = base + r.Uniform(0.0, 1.0);
    } else if (mode == "list") {
      const Entry* e = prices->Find("values");
      if (!e) throw ParseError("price mode 'list' needs 'values'", prices->line);
      scenario.price = ExpectCount(*e, static_cast<size_t>(T));
    } else {
      throw ParseError("unknown price mode '" + mode + "'", prices->line);
    }
    if (const Entry* e = prices->Find("loss_weight")) {
      loss_mode = Trim(e->value);
      if (loss_mode == "price") {
        scenario.loss_weight.clear();
        for (double u : scenario.price) {
          scenario.loss_weight.push_back(u * model.base_mva);
        }
      } else {
        std::vector<double> values = ToDoubles(*e);
        if (values.size() == 1) {
          scenario.loss_weight.assign(T, values[0]);
        } else if (static_cast<int>(values.size()) == T) {
          scenario.loss_weight = values;
        } else {
          throw ParseError("loss_weight expects 1 or " + std::to_string(T) +
                               " values",
                           e->line);
        }
      }
    }
  }
  if (scenario.loss_weight.empty()) scenario.loss_weight.assign(T, 1.0);
  for (double mu : scenario.loss_weight) {
    if (mu < 0.0) throw ScenarioError("loss weight must be non-negative");
  }

  // [ensemble <bus>] in ascending bus order (fixes the random draw order).
  for (const auto& [bus, section] : ensemble_sections) {
    const Section& s = *section;
    if (!model.HasBus(bus)) {
      throw ScenarioError("ensemble at nonexistent bus " + std::to_string(bus));
    }
    if (bus == model.slack_bus) {
      throw ScenarioError("ensemble cannot sit at the slack bus");
    }
    RejectUnknownKeys(s, {"states", "p", "q", "target", "gamma", "gamma_row",
                          "rho_in", "cost", "cost_scale", "cost_row",
                          "replace_load", "s"});
    const Entry* states_entry = s.Find("states");
    if (!states_entry) throw ParseError("ensemble needs 'states'", s.line);
    long long n_ll = ToInteger(Trim(states_entry->value), states_entry->line);
    if (n_ll < 1) throw ScenarioError("ensemble needs at least one state");
    const int n = static_cast<int>(n_ll);
    const Bus& host = model.buses[model.IndexOf(bus)];

    EnsembleSpec spec;
    const Entry* p_entry = s.Find("p");
    const Entry* q_entry = s.Find("q");
    if (!p_entry || !q_entry) {
      throw ParseError("ensemble needs 'p' and 'q'", s.line);
    }
    PowerSpec p_spec = ParsePower(*p_entry, n);
    PowerSpec q_spec = ParsePower(*q_entry, n);
    spec.p_mw.resize(n);
    spec.q_mvar.resize(n);
    for (int a = 0; a < n; ++a) {
      spec.p_mw[a] = p_spec.random
                         ? need_rng(p_entry->line).Uniform(p_spec.lo, p_spec.hi) *
                               host.p_mw
                         : p_spec.values[a];
    }
    for (int a = 0; a < n; ++a) {
      spec.q_mvar[a] =
          q_spec.random
              ? need_rng(q_entry->line).Uniform(q_spec.lo, q_spec.hi) *
                    host.q_mvar
              : q_spec.values[a];
    }
    if (const Entry* s_entry = s.Find("s")) {
      std::vector<double> values = ExpectCount(*s_entry, static_cast<size_t>(n));
      spec.s_mva = Eigen::Map<Eigen::VectorXd>(values.data(), n);
      if (spec.s_mva.minCoeff() < 0.0) {
        throw ScenarioError("apparent power must be nonnegative");
      }
    }

    // Each 'target' line is the outgoing distribution of one origin state.
    std::vector<const Entry*> rows = s.All("target");
    if (static_cast<int>(rows.size()) != n) {
      throw ParseError("ensemble needs " + std::to_string(n) +
                           " 'target' lines, got " + std::to_string(rows.size()),
                       s.line);
    }
    spec.target.resize(n, n);
    for (int b = 0; b < n; ++b) {
      std::vector<double> values = ExpectCount(*rows[b], static_cast<size_t>(n));
      for (int a = 0; a < n; ++a) spec.target(a, b) = values[a];
    }

    Eigen::MatrixXd gamma = Eigen::MatrixXd::Zero(n, n);
    std::vector<const Entry*> gamma_rows = s.All("gamma_row");
    const Entry* gamma_entry = s.Find("gamma");
    if (gamma_entry && !gamma_rows.empty()) {
      throw ParseError("use either 'gamma' or 'gamma_row'", gamma_entry->line);
    }
    if (!gamma_rows.empty()) {
      if (static_cast<int>(gamma_rows.size()) != n) {
        throw ParseError("ensemble needs " + std::to_string(n) +
                             " 'gamma_row' lines",
                         gamma_rows.front()->line);
      }
      for (int b = 0; b < n; ++b) {
        std::vector<double> values =
            ExpectCount(*gamma_rows[b], static_cast<size_t>(n));
        for (int a = 0; a < n; ++a) {
          if (values[a] != 0.0 && spec.target(a, b) == 0.0) {
            throw ScenarioError(
                "line " + std::to_string(gamma_rows[b]->line) +
                ": gamma given for transition " + std::to_string(b + 1) +
                "->" + std::to_string(a + 1) +
                " which the target matrix does not allow");
          }
          gamma(a, b) = values[a];
        }
      }
    } else {
      std::vector<std::string> words =
          gamma_entry ? Split(gamma_entry->value) : std::vector<std::string>{"1"};
      const int line = gamma_entry ? gamma_entry->line : s.line;
      if (words.size() == 3 && words[0] == "dominant") {
        // Preferred weight on each origin's most likely transition.
        const double preferred = ToDouble(words[1], line);
        const double other = ToDouble(words[2], line);
        for (int b = 0; b < n; ++b) {
          Eigen::Index best = 0;
          spec.target.col(b).maxCoeff(&best);
          for (int a = 0; a < n; ++a) {
            if (spec.target(a, b) > 0.0) gamma(a, b) = other;
          }
          gamma(best, b) = preferred;
        }
      } else if (words.size() == 1) {
        const double g = ToDouble(words[0], line);
        for (int b = 0; b < n; ++b) {
          for (int a = 0; a < n; ++a) {
            if (spec.target(a, b) > 0.0) gamma(a, b) = g;
          }
        }
      } else {
        throw ParseError("'gamma' expects a scalar or 'dominant <low> <high>'",
                         line);
      }
    }
    spec.gamma = {gamma};

    spec.rho_in = Eigen::VectorXd::Constant(n, 1.0 / n);
    if (const Entry* e = s.Find("rho_in"); e && Trim(e->value) != "uniform") {
      std::vector<double> values = ExpectCount(*e, static_cast<size_t>(n));
      spec.rho_in = Eigen::Map<Eigen::VectorXd>(values.data(), n);
    }

    double cost_scale = 1.0;
    if (const Entry* e = s.Find("cost_scale")) cost_scale = ExpectCount(*e, 1)[0];
    std::string cost_mode = "product";
    if (const Entry* e = s.Find("cost")) cost_mode = Trim(e->value);
    spec.cost.resize(n, T);
    if (cost_mode == "product") {
      for (int t = 0; t < T; ++t) {
        spec.cost.col(t) = cost_scale * scenario.price[t] * spec.p_mw;
      }
    } else if (cost_mode == "table") {
      std::vector<const Entry*> cost_rows = s.All("cost_row");
      if (static_cast<int>(cost_rows.size()) != T) {
        throw ParseError("cost table needs " + std::to_string(T) +
                             " 'cost_row' lines",
                         s.line);
      }
      for (int t = 0; t < T; ++t) {
        std::vector<double> values =
            ExpectCount(*cost_rows[t], static_cast<size_t>(n));
        for (int a = 0; a < n; ++a) spec.cost(a, t) = cost_scale * values[a];
      }
    } else {
      throw ParseError("unknown cost mode '" + cost_mode + "'", s.line);
    }

    bool replace = true;
    if (const Entry* e = s.Find("replace_load")) {
      std::string v = Trim(e->value);
      if (v == "true") {
        replace = true;
      } else if (v == "false") {
        replace = false;
      } else {
        throw ParseError("replace_load expects true or false", e->line);
      }
    }
    if (replace) scenario.replaced_loads.insert(bus);

    try {
      spec.Validate();
    } catch (const ScenarioError& err) {
      throw ScenarioError("ensemble at bus " + std::to_string(bus) + ": " +
                          err.what());
    }
    scenario.ensembles.emplace(bus, std::move(spec));
  }

  // [bounds]: "bus <id> = pmin pmax qmin qmax", "ensembles = ..." applies to
  // every ensemble bus not listed explicitly.
  if (bounds) {
    RejectUnknownKeys(*bounds, {"ensembles"}, "bus ");
    std::optional<ControlBounds> ensemble_default;
    auto to_bounds = [](const Entry& e) {
      std::vector<double> v = ExpectCount(e, 4);
      ControlBounds b{v[0], v[1], v[2], v[3]};
      if (b.p_min > b.p_max || b.q_min > b.q_max) {
        throw ScenarioError("line " + std::to_string(e.line) +
                            ": control lower bound exceeds upper bound");
      }
      return b;
    };
    for (const Entry& e : bounds->entries) {
      if (e.key == "ensembles") {
        ensemble_default = to_bounds(e);
        continue;
      }
      int bus = static_cast<int>(ToInteger(e.key.substr(4), e.line));
      if (!model.HasBus(bus)) {
        throw ScenarioError("control bounds at nonexistent bus " +
                            std::to_string(bus));
      }
      if (!scenario.controls.emplace(bus, to_bounds(e)).second) {
        throw ParseError("duplicate bounds for bus " + std::to_string(bus),
                         e.line);
      }
    }
    if (ensemble_default) {
      for (const auto& [bus, spec] : scenario.ensembles) {
        scenario.controls.emplace(bus, *ensemble_default);
      }
    }
  }

  // [algorithm]
  if (algorithm) {
    AlgorithmOptions& opt = scenario.algorithm;
    RejectUnknownKeys(*algorithm,
                      {"variant", "step", "step_units", "step_schedule",
                       "tol_primal", "tol_dual", "max_iter",
                       "divergence_window"},
                      "step_bus ");
    for (const Entry& e : algorithm->entries) {
      const std::string v = Trim(e.value);
      if (e.key == "variant") {
        opt.variant = ParseVariant(v);
      } else if (e.key == "step") {
        opt.step = ToDouble(v, e.line);
      } else if (e.key == "step_units") {
        if (v == "absolute") {
          opt.step_units = StepUnits::kAbsolute;
        } else if (v == "loss_weight") {
          opt.step_units = StepUnits::kLossWeight;
        } else if (v == "curvature") {
          opt.step_units = StepUnits::kCurvature;
        } else {
          throw ParseError(
              "step_units expects absolute, loss_weight or curvature", e.line);
        }
      } else if (e.key == "step_schedule") {
        if (v == "constant") {
          opt.schedule = StepSchedule::kConstant;
        } else if (v == "inverse_sqrt") {
          opt.schedule = StepSchedule::kInverseSqrt;
        } else {
          throw ParseError("step_schedule expects constant or inverse_sqrt",
                           e.line);
        }
      } else if (e.key == "tol_primal") {
        opt.tol_primal = ToDouble(v, e.line);
      } else if (e.key == "tol_dual") {
        opt.tol_dual = ToDouble(v, e.line);
      } else if (e.key == "max_iter") {
        opt.max_iter = static_cast<int>(ToInteger(v, e.line));
      } else if (e.key == "divergence_window") {
        opt.divergence_window = static_cast<int>(ToInteger(v, e.line));
      } else {
        int bus = static_cast<int>(ToInteger(e.key.substr(9), e.line));
        if (!scenario.ensembles.count(bus)) {
          throw ScenarioError("step_bus for bus " + std::to_string(bus) +
                              " which hosts no ensemble");
        }
        opt.bus_step[bus] = ToDouble(v, e.line);
      }
    }
    if (!(opt.step > 0.0)) throw ScenarioError("step must be positive");
    for (const auto& [bus, step] : opt.bus_step) {
      if (!(step > 0.0)) throw ScenarioError("step must be positive");
    }
    if (opt.max_iter < 1) throw ScenarioError("max_iter must be at least 1");
    if (opt.divergence_window < 0) {
      throw ScenarioError("divergence_window must be non-negative");
    }
  }
  return scenario;
}

}  // namespace ensdispatch
