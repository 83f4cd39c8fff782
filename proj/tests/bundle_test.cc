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

#include <algorithm>
#include <cstdio>
#include <optional>
#include <sstream>
#include <string>

#include <gtest/gtest.h>

#include "ensdispatch/coordinator.h"
#include "ensdispatch/errors.h"
#include "test_util.h"

namespace ensdispatch {
namespace {

using testing::TempDir;
using testing::WriteText;

// Hash computed by the git executable, when one is installed.
std::optional<std::string> GitHashObject(const std::filesystem::path& file) {
  std::string cmd = "git hash-object '" + file.string() + "' 2>/dev/null";
  FILE* pipe = popen(cmd.c_str(), "r");
  if (!pipe) return std::nullopt;
  char buf[128] = {};
  std::string out;
  while (fgets(buf, sizeof buf, pipe)) out += buf;
  if (pclose(pipe) != 0 || out.size() < 40) return std::nullopt;
  return out.substr(0, 40);
}

std::string FirstLine(const std::string& text) {
  return text.substr(0, text.find('\n'));
}

TEST(GitBlobHashTest, KnownValues) {
  EXPECT_EQ(GitBlobHash(""), "e69de29bb2d1d6434b8b29ae775ad8c2e48c5391");
  EXPECT_EQ(GitBlobHash("hello world\n"),
            "3b18e512dba79e4c8300dd08aeb37f8e728b8dad");
}

TEST(GitBlobHashTest, AgreesWithGit) {
  std::filesystem::path dir = TempDir("hash");
  const std::string text =
      testing::ReadText(testing::DataPath("case33bw.m"));
  WriteText(dir / "case.m", text);
  std::optional<std::string> git = GitHashObject(dir / "case.m");
  if (!git) GTEST_SKIP() << "git not available";
  EXPECT_EQ(GitBlobHash(text), *git);
}

TEST(FormatDoubleTest, RoundTripsAndNormalizesZero) {
  EXPECT_EQ(FormatDouble(0.0), "0");
  EXPECT_EQ(FormatDouble(-0.0), "0");
  EXPECT_EQ(FormatDouble(1.5), "1.5");
  for (double v : {0.1, 1.0 / 3.0, -2.5e-17, 123456.789}) {
    EXPECT_EQ(std::stod(FormatDouble(v)), v);
  }
}

TEST(CsvTest, HeadersAndRowCounts) {
  GridModel model = testing::Case33bw();
  ScenarioSpec s = LoadScenario(
      testing::ReadText(testing::DataPath("feeder33_uniform.scn")), model);
  s.algorithm.max_iter = 2;
  CoordinatedProblem problem = BuildProblem(model, s);
  Solution sol = ensdispatch::Run(problem);
  const CoordinatorState& st = sol.state;
  EXPECT_EQ(FirstLine(RhoCsv(problem.bus_ids, st.trajectories)),
            "bus,t,state,rho");
  EXPECT_EQ(FirstLine(TransitionsCsv(problem.bus_ids, st.trajectories)),
            "bus,t,from_state,to_state,P");
  EXPECT_EQ(FirstLine(DispatchCsv(problem, st.dispatch)),
            "t,bus,v2,p_inj,q_inj,p_c,q_c");
  EXPECT_EQ(FirstLine(FlowsCsv(problem, st.dispatch)), "t,from,to,p_flow,q_flow");
  EXPECT_EQ(FirstLine(LossesCsv(problem, st.dispatch)),
            "t,loss,loss_weight,weighted_loss");
  EXPECT_EQ(FirstLine(DualsCsv(problem, st.dual)), "bus,t,lambda_p,lambda_q,step");
  EXPECT_EQ(FirstLine(EnsembleDispatchCsv(problem, st)),
            "bus,t,expected_p,expected_q,network_p,network_q,p_mw,q_mvar");
  EXPECT_EQ(FirstLine(MdpSummaryCsv(problem.bus_ids, st.trajectories)),
            "bus,objective,mean_spread");
  auto lines = [](const std::string& csv) {
    return std::count(csv.begin(), csv.end(), '\n');
  };
  EXPECT_EQ(lines(RhoCsv(problem.bus_ids, st.trajectories)), 1 + 4 * 21 * 8);
  EXPECT_EQ(lines(DispatchCsv(problem, st.dispatch)), 1 + 20 * 33);
  EXPECT_EQ(lines(FlowsCsv(problem, st.dispatch)), 1 + 20 * 32);
  EXPECT_EQ(lines(DualsCsv(problem, st.dual)), 1 + 4 * 20);

  std::string iters = IterationsCsv(sol.history, false);
  EXPECT_EQ(FirstLine(iters), "iter,primal_max,primal_l2,dual_change,step1_ms,step2_ms");
  std::istringstream in(iters);
  std::string line;
  std::getline(in, line);
  while (std::getline(in, line)) {
    EXPECT_EQ(line.substr(line.size() - 4), ",0,0");
  }
}

TEST(CsvTest, StatsRow) {
  StatsReport r;
  r.analytic = {0.5, 0.25, 1};
  r.empirical_mean = 0.5;
  r.empirical_variance = 0.2;
  r.ks_distance = 0.01;
  EXPECT_EQ(StatsCsv(r),
            "n,analytic_mean,analytic_var,empirical_mean,empirical_var,"
            "ks_distance\n1,0.5,0.25,0.5,0.20000000000000001,0.01\n");
}

TEST(BundleTest, VerifyDetectsTampering) {
  std::filesystem::path dir = TempDir("bundle");
  WriteText(dir / "input.txt", "abc\n");
  RunManifest m;
  m.command = "run";
  m.inputs["scenario"] = {(dir / "input.txt").string(), GitBlobHash("abc\n")};
  m.parameters["seed"] = "7";
  WriteBundle(dir / "out", {{"a.csv", "x\n1\n"}, {"b.csv", "y\n"}}, m);
  EXPECT_TRUE(VerifyBundle(dir / "out").empty());
  EXPECT_EQ(testing::ReadText(dir / "out" / "a.csv"), "x\n1\n");

  WriteText(dir / "out" / "a.csv", "x\n2\n");
  std::vector<std::string> problems = VerifyBundle(dir / "out");
  ASSERT_EQ(problems.size(), 1u);
  EXPECT_NE(problems[0].find("a.csv"), std::string::npos);

  WriteText(dir / "input.txt", "abd\n");
  std::filesystem::remove(dir / "out" / "b.csv");
  EXPECT_EQ(VerifyBundle(dir / "out").size(), 3u);

  WriteText(dir / "out" / "manifest.json", "{not json");
  EXPECT_THROW(VerifyBundle(dir / "out"), Error);
}

}  // namespace
}  // namespace ensdispatch
