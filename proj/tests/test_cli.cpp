// Copyright 2026 The APR Authors.
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

#include <gtest/gtest.h>

#include <csignal>
#include <cstdio>
#include <thread>

#include <sys/wait.h>
#include <unistd.h>

#include "apr/runner.hpp"
#include "stub_server.hpp"
#include "support.hpp"

using apr::testing::TempDir;
namespace fs = std::filesystem;

namespace {

struct CliResult {
  int exit_code = -1;
  std::string output;
};

std::string quote(const std::string& s) {
  std::string out = "'";
  for (char c : s) {
    if (c == '\'') {
      out += "'\\''";
    } else {
      out += c;
    }
  }
  return out + "'";
}

CliResult run_cli(const std::vector<std::string>& args) {
  std::string cmd = quote(APR_CLI_PATH);
  for (const auto& a : args) cmd += " " + quote(a);
  cmd += " 2>&1";
  CliResult r;
  FILE* pipe = ::popen(cmd.c_str(), "r");
  if (pipe == nullptr) return r;
  char buf[4096];
  std::size_t n;
  while ((n = std::fread(buf, 1, sizeof buf, pipe)) > 0) r.output.append(buf, n);
  const int status = ::pclose(pipe);
  r.exit_code = WIFEXITED(status) ? WEXITSTATUS(status) : -1;
  return r;
}

std::string live_config(const fs::path& dir, const apr::stub::StubServer& stub,
                        const std::vector<fs::path>& datasets) {
  std::string ds;
  for (const auto& d : datasets) ds += (ds.empty() ? "" : ", ") + ("\"" + d.string() + "\"");
  const std::string toml = "datasets = [" + ds + "]\n" +
                           "prompt_model = \"p\"\nreasoner_model = \"p\"\nmode = \"live\"\n"
                           "shots = 1\nconcurrency = 2\ncache_dir = \"cache\"\noutput_dir = \"runs\"\n"
                           "split = \"test\"\n"
                           "[profiles.p]\nendpoint_url = \"" +
                           stub.url("/v1/chat/completions") +
                           "\"\nwire_style = \"chat_completions\"\nmodel_id = \"stub\"\n"
                           "rate_limit_per_min = 6000\nmax_retries = 0\n";
  apr::testing::write_file(dir / "live.toml", toml);
  return (dir / "live.toml").string();
}

}  // namespace

TEST(Cli, ValidatePromptExitCodes) {
  TempDir tmp;
  apr::testing::write_file(tmp / "good.txt", "Look.\nQuestion: {question}\n### Examples\nQ: a\nA: b\n### Now answer:\n");
  apr::testing::write_file(tmp / "bad.txt", "Look.\n```\n### Examples\n");
  apr::testing::write_file(tmp / "advisory.txt", "### Examples\nQ\n### Now answer:");
  const CliResult good = run_cli({"validate-prompt", "--file", (tmp / "good.txt").string()});
  EXPECT_EQ(good.exit_code, 0);
  EXPECT_NE(good.output.find("ok"), std::string::npos);
  const CliResult bad = run_cli({"validate-prompt", "--file", (tmp / "bad.txt").string()});
  EXPECT_EQ(bad.exit_code, 1);
  EXPECT_NE(bad.output.find("error: rule 2"), std::string::npos);
  EXPECT_NE(bad.output.find("error: rule 3"), std::string::npos);
  const CliResult adv = run_cli({"validate-prompt", "--file", (tmp / "advisory.txt").string()});
  EXPECT_EQ(adv.exit_code, 0);
  EXPECT_NE(adv.output.find("advisory: rule 5"), std::string::npos);
}

TEST(Cli, UsageErrorsExitTwo) {
  EXPECT_EQ(run_cli({}).exit_code, 2);
  EXPECT_EQ(run_cli({"run"}).exit_code, 2);
  EXPECT_EQ(run_cli({"frobnicate"}).exit_code, 2);
  EXPECT_EQ(run_cli({"--help"}).exit_code, 0);
}

TEST(Cli, ScoreSubcommand) {
  TempDir tmp;
  apr::testing::SyntheticDataset d;
  d.train = 2;
  d.test = 4;
  const fs::path ds = apr::testing::write_dataset(tmp / "synth", d);
  apr::testing::write_file(tmp / "pred.jsonl",
                           "{\"instance_id\":\"te2\",\"answer\":\"B\"}\n"
                           "{\"instance_id\":\"te3\",\"answer\":\"b.\"}\n"
                           "{\"instance_id\":\"te4\",\"answer\":\"A\"}\n"
                           "{\"instance_id\":\"te5\",\"answer\":\"C\",\"shots_used\":2}\n");
  const CliResult r = run_cli({"score", "--pred", (tmp / "pred.jsonl").string(), "--data", ds.string(),
                               "--out", (tmp / "records.jsonl").string()});
  EXPECT_EQ(r.exit_code, 0) << r.output;
  EXPECT_NE(r.output.find("synth accuracy 50.00 (4 predictions)"), std::string::npos) << r.output;
  const auto recs = apr::runner::read_records(tmp / "records.jsonl");
  ASSERT_EQ(recs.size(), 4u);
  EXPECT_EQ(recs[3].shots_used(), 2);

  const CliResult strict = run_cli({"score", "--pred", (tmp / "pred.jsonl").string(), "--data", ds.string(),
                                    "--policy", "strict"});
  EXPECT_NE(strict.output.find("synth accuracy 25.00"), std::string::npos) << strict.output;

  apr::testing::write_file(tmp / "unknown.jsonl", "{\"instance_id\":\"nope\",\"answer\":\"B\"}\n");
  EXPECT_NE(run_cli({"score", "--pred", (tmp / "unknown.jsonl").string(), "--data", ds.string()}).exit_code, 0);
}

TEST(Cli, ReplayRunAndReport) {
  TempDir tmp;
  const std::string config = (apr::testing::fixtures_dir() / "apr.toml").string();
  const CliResult r = run_cli({"run", "--config", config, "--run-id", "cli", "--output-dir", (tmp / "runs").string()});
  ASSERT_EQ(r.exit_code, 0) << r.output;
  EXPECT_NE(r.output.find("Overall Average"), std::string::npos);
  const fs::path run_dir = tmp / "runs" / "cli";
  const CliResult again = run_cli({"run", "--config", config, "--run-id", "cli", "--output-dir", (tmp / "runs").string()});
  EXPECT_EQ(again.exit_code, 2);

  const CliResult csv = run_cli({"report", "--run-dir", run_dir.string(), "--run-dir", run_dir.string(),
                                 "--label", "first", "--label", "second", "--format", "csv"});
  EXPECT_EQ(csv.exit_code, 0) << csv.output;
  EXPECT_NE(csv.output.find("dataset,metric,first,second"), std::string::npos) << csv.output;
  const CliResult json = run_cli({"report", "--run-dir", run_dir.string(), "--format", "json",
                                  "--out", (tmp / "t.json").string()});
  EXPECT_EQ(json.exit_code, 0);
  EXPECT_EQ(apr::decode<apr::ScoreTable>(apr::Json::parse(apr::testing::read_file(tmp / "t.json"))),
            apr::decode<apr::ScoreTable>(apr::Json::parse(apr::testing::read_file(run_dir / "scores.json"))));

  const CliResult resumed = run_cli({"resume", "--run-dir", run_dir.string()});
  EXPECT_EQ(resumed.exit_code, 0) << resumed.output;
}

TEST(Cli, MissingSecretExitsTwo) {
  TempDir tmp;
  ::unsetenv("APR_STUB_KEY");
  const CliResult r = run_cli({"run", "--config", (apr::testing::fixtures_dir() / "apr.toml").string(),
                               "--mode", "live", "--output-dir", (tmp / "runs").string()});
  EXPECT_EQ(r.exit_code, 2);
  EXPECT_NE(r.output.find("APR_STUB_KEY"), std::string::npos);
  EXPECT_FALSE(fs::exists(tmp / "runs"));
}

// Kill the CLI mid-run and check that every persisted record line is whole.
TEST(Cli, RecordsSurviveSigkill) {
  TempDir tmp;
  apr::testing::SyntheticDataset d;
  d.train = 4;
  d.test = 40;
  const fs::path ds = apr::testing::write_dataset(tmp / "synth", d);
  apr::stub::StubOptions opts;
  opts.delay = std::chrono::milliseconds(40);
  apr::stub::StubServer stub(opts);
  stub.start();
  stub.set_answerer([](const std::string&) { return "B"; });
  const std::string config = live_config(tmp.path(), stub, {ds});

  const pid_t pid = ::fork();
  ASSERT_GE(pid, 0);
  if (pid == 0) {
    if (std::freopen("/dev/null", "w", stdout) == nullptr || std::freopen("/dev/null", "w", stderr) == nullptr) {
      ::_exit(126);
    }
    ::execl(APR_CLI_PATH, APR_CLI_PATH, "run", "--config", config.c_str(), "--run-id", "k", nullptr);
    ::_exit(127);
  }
  const fs::path records = tmp / "runs" / "k" / "records.jsonl";
  const auto deadline = std::chrono::steady_clock::now() + std::chrono::seconds(20);
  while (std::chrono::steady_clock::now() < deadline) {
    if (fs::exists(records) && fs::file_size(records) > 0 && apr::testing::read_file(records).size() > 600) break;
    std::this_thread::sleep_for(std::chrono::milliseconds(10));
  }
  ::kill(pid, SIGKILL);
  int status = 0;
  ::waitpid(pid, &status, 0);
  ASSERT_TRUE(WIFSIGNALED(status));

  const std::string content = apr::testing::read_file(records);
  ASSERT_FALSE(content.empty());
  EXPECT_EQ(content.back(), '\n');
  std::istringstream in(content);
  std::size_t lines = 0;
  for (std::string line; std::getline(in, line);) {
    ++lines;
    EXPECT_NO_THROW(apr::from_line<apr::EvaluationRecord>(line)) << line;
  }
  EXPECT_GT(lines, 0u);
  EXPECT_LT(lines, 40u);

  const CliResult resumed = run_cli({"resume", "--run-dir", (tmp / "runs" / "k").string()});
  EXPECT_EQ(resumed.exit_code, 0) << resumed.output;
  EXPECT_EQ(apr::runner::read_records(records).size(), 40u);
}
