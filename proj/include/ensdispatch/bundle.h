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

#ifndef ENSDISPATCH_BUNDLE_H_
#define ENSDISPATCH_BUNDLE_H_

#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "ensdispatch/coordinator.h"
#include "ensdispatch/ensemble_stats.h"
#include "ensdispatch/mdp.h"

namespace ensdispatch {

// Shortest round-trip representation ("%.17g").
std::string FormatDouble(double value);

// SHA-1 of "blob <size>\0<content>", lowercase hex (what `git hash-object`
// prints).
std::string GitBlobHash(std::string_view content);

// Long-format CSV documents. Headers are part of the output contract and are
// listed in README.md.
std::string RhoCsv(const std::vector<int>& bus_ids,
                   const std::vector<MdpTrajectory>& trajectories);
std::string TransitionsCsv(const std::vector<int>& bus_ids,
                           const std::vector<MdpTrajectory>& trajectories);
std::string DispatchCsv(const CoordinatedProblem& problem,
                        const std::vector<DispatchStep>& dispatch);
std::string FlowsCsv(const CoordinatedProblem& problem,
                     const std::vector<DispatchStep>& dispatch);
std::string LossesCsv(const CoordinatedProblem& problem,
                      const std::vector<DispatchStep>& dispatch);
std::string DualsCsv(const CoordinatedProblem& problem, const DualState& dual);
std::string EnsembleDispatchCsv(const CoordinatedProblem& problem,
                                const CoordinatorState& state);
// Wall-clock columns are written as 0 when `with_timing` is false.
std::string IterationsCsv(const std::vector<IterationRecord>& history,
                          bool with_timing);
std::string MdpSummaryCsv(const std::vector<int>& bus_ids,
                          const std::vector<MdpTrajectory>& trajectories);
std::string StatsCsv(const StatsReport& report);

struct InputFile {
  std::string path;
  std::string hash;
};

struct RunManifest {
  std::string command;  // run, mdp or stats
  std::map<std::string, InputFile> inputs;  // "case", "scenario"
  std::map<std::string, std::string> parameters;
  std::map<std::string, std::string> results;
  std::optional<std::string> started_at;  // ISO-8601 UTC
  std::map<std::string, double> timing_ms;
  std::map<std::string, std::string> outputs;  // file name -> hash
};

// Writes every file of `files` into `dir` (created if needed), records their
// hashes in `manifest`, then writes manifest.json. Throws Error on I/O
// failure.
void WriteBundle(const std::filesystem::path& dir,
                 const std::map<std::string, std::string>& files,
                 RunManifest manifest);

// Recomputes the hashes listed in dir/manifest.json (outputs, and inputs
// whose paths still exist) and returns one message per mismatch or missing
// file. Throws Error when the manifest cannot be read.
std::vector<std::string> VerifyBundle(const std::filesystem::path& dir);

std::string ReadFile(const std::filesystem::path& path);

}  // namespace ensdispatch

#endif  // ENSDISPATCH_BUNDLE_H_
