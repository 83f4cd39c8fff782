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

#include "ensdispatch/bundle.h"

#include <cstdio>
#include <fstream>
#include <sstream>

#include <openssl/sha.h>

#include "json.hpp"

#include "ensdispatch/errors.h"

namespace ensdispatch {
namespace {

using Json = nlohmann::ordered_json;

class Csv {
 public:
  explicit Csv(std::string_view header) { out_ << header << '\n'; }

  Csv& operator<<(double v) { return Field(FormatDouble(v)); }
  Csv& operator<<(int v) { return Field(std::to_string(v)); }
  Csv& operator<<(const std::string& v) { return Field(v); }
  void EndRow() {
    out_ << '\n';
    first_ = true;
  }
  std::string str() const { return out_.str(); }

 private:
  Csv& Field(const std::string& text) {
    if (!first_) out_ << ',';
    out_ << text;
    first_ = false;
    return *this;
  }
  std::ostringstream out_;
  bool first_ = true;
};

}  // namespace

std::string FormatDouble(double value) {
  if (value == 0.0) return "0";  // folds -0
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%.17g", value);
  return buf;
}

std::string GitBlobHash(std::string_view content) {
  std::string data = "blob " + std::to_string(content.size());
  data.push_back('\0');
  data.append(content);
  unsigned char digest[SHA_DIGEST_LENGTH];
  SHA1(reinterpret_cast<const unsigned char*>(data.data()), data.size(),
       digest);
  static const char kHex[] = "0123456789abcdef";
  std::string hex;
  for (unsigned char c : digest) {
    hex.push_back(kHex[c >> 4]);
    hex.push_back(kHex[c & 15]);
  }
  return hex;
}

std::string RhoCsv(const std::vector<int>& bus_ids,
                   const std::vector<MdpTrajectory>& trajectories) {
  Csv csv("bus,t,state,rho");
  for (size_t i = 0; i < bus_ids.size(); ++i) {
    const MdpTrajectory& traj = trajectories[i];
    for (size_t t = 0; t < traj.rho.size(); ++t) {
      for (Eigen::Index a = 0; a < traj.rho[t].size(); ++a) {
        csv << bus_ids[i] << static_cast<int>(t) << static_cast<int>(a + 1)
            << traj.rho[t][a];
        csv.EndRow();
      }
    }
  }
  return csv.str();
}

std::string TransitionsCsv(const std::vector<int>& bus_ids,
                           const std::vector<MdpTrajectory>& trajectories) {
  Csv csv("bus,t,from_state,to_state,P");
  for (size_t i = 0; i < bus_ids.size(); ++i) {
    const MdpTrajectory& traj = trajectories[i];
    for (size_t t = 0; t < traj.transitions.size(); ++t) {
      const Eigen::MatrixXd& P = traj.transitions[t];
      for (Eigen::Index b = 0; b < P.cols(); ++b) {
        for (Eigen::Index a = 0; a < P.rows(); ++a) {
          csv << bus_ids[i] << static_cast<int>(t) << static_cast<int>(b + 1)
              << static_cast<int>(a + 1) << P(a, b);
          csv.EndRow();
        }
      }
    }
  }
  return csv.str();
}

std::string DispatchCsv(const CoordinatedProblem& problem,
                        const std::vector<DispatchStep>& dispatch) {
  const GridModel& model = problem.network.model;
  Csv csv("t,bus,v2,p_inj,q_inj,p_c,q_c");
  for (size_t k = 0; k < dispatch.size(); ++k) {
    const DispatchStep& d = dispatch[k];
    for (size_t b = 0; b < model.buses.size(); ++b) {
      const Injection& fixed = problem.network.fixed_load[b];
      csv << static_cast<int>(k + 1) << model.buses[b].id << d.v2[b]
          << fixed.p + d.ensemble[b].p << fixed.q + d.ensemble[b].q
          << d.control[b].p << d.control[b].q;
      csv.EndRow();
    }
  }
  return csv.str();
}

std::string FlowsCsv(const CoordinatedProblem& problem,
                     const std::vector<DispatchStep>& dispatch) {
  const GridModel& model = problem.network.model;
  const TreeOrder& tree = problem.network.tree;
  Csv csv("t,from,to,p_flow,q_flow");
  for (size_t k = 0; k < dispatch.size(); ++k) {
    const DispatchStep& d = dispatch[k];
    // Oriented parent -> child, whatever the case file's direction.
    for (size_t br = 0; br < model.branches.size(); ++br) {
      const Branch& branch = model.branches[br];
      int from = branch.from;
      int to = branch.to;
      if (tree.parent_branch[model.IndexOf(to)] != static_cast<int>(br)) {
        std::swap(from, to);
      }
      csv << static_cast<int>(k + 1) << from << to << d.flows[br].p
          << d.flows[br].q;
      csv.EndRow();
    }
  }
  return csv.str();
}

std::string LossesCsv(const CoordinatedProblem& problem,
                      const std::vector<DispatchStep>& dispatch) {
  Csv csv("t,loss,loss_weight,weighted_loss");
  for (size_t k = 0; k < dispatch.size(); ++k) {
    const double mu = problem.loss_weight[k];
    csv << static_cast<int>(k + 1) << dispatch[k].loss << mu
        << mu * dispatch[k].loss;
    csv.EndRow();
  }
  return csv.str();
}

std::string DualsCsv(const CoordinatedProblem& problem, const DualState& dual) {
  Csv csv("bus,t,lambda_p,lambda_q,step");
  for (int i = 0; i < problem.n_ensembles(); ++i) {
    for (int t = 1; t <= problem.horizon(); ++t) {
      csv << problem.bus_ids[i] << t << dual.lambda_p(i, t - 1)
          << dual.lambda_q(i, t - 1) << dual.step(i, t - 1);
      csv.EndRow();
    }
  }
  return csv.str();
}

std::string EnsembleDispatchCsv(const CoordinatedProblem& problem,
                                const CoordinatorState& state) {
  const double base = problem.network.model.base_mva;
  Csv csv("bus,t,expected_p,expected_q,network_p,network_q,p_mw,q_mvar");
  for (int i = 0; i < problem.n_ensembles(); ++i) {
    for (int t = 1; t <= problem.horizon(); ++t) {
      const double p = state.expected_p(i, t - 1);
      const double q = state.expected_q(i, t - 1);
      csv << problem.bus_ids[i] << t << p << q << state.network_p(i, t - 1)
          << state.network_q(i, t - 1) << p * base << q * base;
      csv.EndRow();
    }
  }
  return csv.str();
}

std::string IterationsCsv(const std::vector<IterationRecord>& history,
                          bool with_timing) {
  Csv csv("iter,primal_max,primal_l2,dual_change,step1_ms,step2_ms");
  for (const IterationRecord& rec : history) {
    csv << rec.iteration << rec.primal_max << rec.primal_l2 << rec.dual_change
        << (with_timing ? rec.step1_ms : 0.0)
        << (with_timing ? rec.step2_ms : 0.0);
    csv.EndRow();
  }
  return csv.str();
}

std::string MdpSummaryCsv(const std::vector<int>& bus_ids,
                          const std::vector<MdpTrajectory>& trajectories) {
  Csv csv("bus,objective,mean_spread");
  for (size_t i = 0; i < bus_ids.size(); ++i) {
    csv << bus_ids[i] << trajectories[i].objective
        << MeanSpread(trajectories[i]);
    csv.EndRow();
  }
  return csv.str();
}

std::string StatsCsv(const StatsReport& report) {
  Csv csv("n,analytic_mean,analytic_var,empirical_mean,empirical_var,"
          "ks_distance");
  csv << report.analytic.n << report.analytic.mean << report.analytic.variance
      << report.empirical_mean << report.empirical_variance
      << report.ks_distance;
  csv.EndRow();
  return csv.str();
}

std::string ReadFile(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error("cannot read " + path.string());
  std::ostringstream out;
  out << in.rdbuf();
  return out.str();
}

namespace {

void WriteFile(const std::filesystem::path& path, const std::string& content) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  out << content;
  out.close();
  if (!out) throw Error("cannot write " + path.string());
}

}  // namespace

void WriteBundle(const std::filesystem::path& dir,
                 const std::map<std::string, std::string>& files,
                 RunManifest manifest) {
  std::error_code ec;
  std::filesystem::create_directories(dir, ec);
  if (ec) throw Error("cannot create " + dir.string() + ": " + ec.message());
  for (const auto& [name, content] : files) {
    WriteFile(dir / name, content);
    manifest.outputs[name] = GitBlobHash(content);
  }

  Json j;
  j["command"] = manifest.command;
  Json inputs = Json::object();
  for (const auto& [role, file] : manifest.inputs) {
    inputs[role] = {{"path", file.path}, {"hash", file.hash}};
  }
  j["inputs"] = inputs;
  j["parameters"] = manifest.parameters;
  j["results"] = manifest.results;
  if (manifest.started_at) j["started_at"] = *manifest.started_at;
  if (!manifest.timing_ms.empty()) {
    Json timing = Json::object();
    for (const auto& [phase, ms] : manifest.timing_ms) timing[phase] = ms;
    j["timing_ms"] = timing;
  }
  j["outputs"] = manifest.outputs;
  WriteFile(dir / "manifest.json", j.dump(2) + "\n");
}

std::vector<std::string> VerifyBundle(const std::filesystem::path& dir) {
  Json j;
  try {
    j = Json::parse(ReadFile(dir / "manifest.json"));
  } catch (const Json::exception& e) {
    throw Error("malformed manifest: " + std::string(e.what()));
  }
  std::vector<std::string> problems;
  auto check = [&](const std::filesystem::path& path, const std::string& hash,
                   const std::string& label) {
    if (!std::filesystem::exists(path)) {
      problems.push_back(label + ": missing " + path.string());
      return;
    }
    if (GitBlobHash(ReadFile(path)) != hash) {
      problems.push_back(label + ": hash mismatch for " + path.string());
    }
  };
  try {
    for (const auto& [name, hash] : j.at("outputs").items()) {
      check(dir / name, hash.get<std::string>(), "output");
    }
    for (const auto& [role, file] : j.at("inputs").items()) {
      const std::filesystem::path path = file.at("path").get<std::string>();
      if (std::filesystem::exists(path)) {
        check(path, file.at("hash").get<std::string>(), role);
      }
    }
  } catch (const Json::exception& e) {
    throw Error("malformed manifest: " + std::string(e.what()));
  }
  return problems;
}

}  // namespace ensdispatch
