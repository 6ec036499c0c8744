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

#include "apr/runner.hpp"
#include "support.hpp"

using namespace apr;
using namespace apr::runner;
using apr::testing::FakeGateway;
using apr::testing::SyntheticDataset;
using apr::testing::TempDir;
namespace fs = std::filesystem;

namespace {

gateway::ProviderProfile dummy_profile(const std::string& id) {
  gateway::ProviderProfile p;
  p.profile_id = id;
  p.endpoint_url = "http://127.0.0.1:9/v1/chat/completions";
  p.model_id = id + "-model";
  p.max_output_tokens = 256;
  return p;
}

RunConfig synthetic_config(const TempDir& tmp, std::vector<fs::path> datasets) {
  RunConfig c;
  c.datasets = std::move(datasets);
  c.prompt_profile = "engineer";
  c.reasoner_profile = "reasoner";
  c.profiles.emplace("engineer", dummy_profile("engineer"));
  c.profiles.emplace("reasoner", dummy_profile("reasoner"));
  c.mode = Mode::Replay;
  c.fixture_dir = tmp / "fixtures";
  c.cache_dir = tmp / "cache";
  c.output_dir = tmp / "runs";
  c.shots = 2;
  c.run_id = "r1";
  return c;
}

Gateways share(const std::shared_ptr<FakeGateway>& g) { return {g, g}; }

std::string question_of(const ChatRequest& req) {
  const std::string text = apr::testing::final_text(req);
  const auto q = text.find("Question: ");
  return text.substr(q + 10, text.find('\n', q) - q - 10);
}

ModelResponse text_reply(std::string text, FinishReason f = FinishReason::Complete) {
  return {std::move(text), f, std::nullopt, std::chrono::milliseconds(0)};
}

RunConfig fixture_config(const TempDir& tmp) {
  RunConfig c = load_config(apr::testing::fixtures_dir() / "apr.toml");
  c.output_dir = tmp / "runs";
  c.cache_dir = tmp / "cache";
  return c;
}

}  // namespace

TEST(Config, LoadsFixtureToml) {
  const RunConfig c = load_config(apr::testing::fixtures_dir() / "apr.toml");
  ASSERT_EQ(c.datasets.size(), 2u);
  EXPECT_TRUE(c.datasets[0].is_absolute());
  EXPECT_EQ(c.datasets[0].filename(), "chart_trends");
  EXPECT_EQ(c.mode, Mode::Replay);
  EXPECT_EQ(c.shots, 3);
  EXPECT_EQ(c.seed, 42u);
  EXPECT_EQ(c.budget.max_images(), 6);
  EXPECT_EQ(c.profiles.at("engineer").wire_style, gateway::WireStyle::Messages);
  EXPECT_EQ(c.profiles.at("reasoner").request_timeout, std::chrono::milliseconds(30000));
  EXPECT_EQ(c.split, EvalSplit::Validation);
  EXPECT_NO_THROW(c.validate());
}

TEST(Config, RejectsBadToml) {
  TempDir tmp;
  apr::testing::write_file(tmp / "bad.toml", "datasets = [\n");
  EXPECT_THROW(load_config(tmp / "bad.toml"), ConfigError);
  apr::testing::write_file(tmp / "mode.toml", "datasets=['x']\nprompt_model='a'\nreasoner_model='a'\nmode='warp'\n");
  EXPECT_THROW(load_config(tmp / "mode.toml"), Error);
  EXPECT_THROW(load_config(tmp / "absent.toml"), ConfigError);
}

TEST(Config, ValidateErrors) {
  TempDir tmp;
  RunConfig c = synthetic_config(tmp, {tmp / "ds"});
  EXPECT_NO_THROW(c.validate());
  RunConfig bad = c;
  bad.shots = 4;
  EXPECT_THROW(bad.validate(), ConfigError);
  bad.allow_more_shots = true;
  EXPECT_NO_THROW(bad.validate());
  bad = c;
  bad.concurrency = 0;
  EXPECT_THROW(bad.validate(), ConfigError);
  bad = c;
  bad.reasoner_profile = "nobody";
  EXPECT_THROW(bad.validate(), ConfigError);
  bad = c;
  bad.fixture_dir.clear();
  EXPECT_THROW(bad.validate(), ConfigError);
  bad = c;
  bad.datasets.clear();
  EXPECT_THROW(bad.validate(), ConfigError);
}

TEST(Config, HashIgnoresExecutionSettings) {
  TempDir tmp;
  const RunConfig c = synthetic_config(tmp, {tmp / "ds"});
  RunConfig other = c;
  other.concurrency = 8;
  other.mode = Mode::Live;
  other.output_dir = "/elsewhere";
  other.cache_dir = "/cache2";
  other.run_id = "different";
  EXPECT_EQ(c.config_hash(), other.config_hash());
  other.shots = 1;
  EXPECT_NE(c.config_hash(), other.config_hash());
  other = c;
  other.seed = 7;
  EXPECT_NE(c.config_hash(), other.config_hash());
}

TEST(Config, SnapshotRoundTrips) {
  TempDir tmp;
  RunConfig c = synthetic_config(tmp, {tmp / "a", tmp / "b"});
  c.limit = 5;
  c.split = EvalSplit::Test;
  c.match_policy = metrics::MatchPolicy::Strict;
  const RunConfig back = config_from_snapshot(c.snapshot());
  EXPECT_EQ(back.snapshot(), c.snapshot());
  EXPECT_EQ(back.config_hash(), c.config_hash());
}

TEST(Config, OverridesApply) {
  TempDir tmp;
  RunConfig c = synthetic_config(tmp, {tmp / "ds"});
  ConfigOverrides o;
  o.shots = 1;
  o.concurrency = 3;
  o.limit = 2;
  apply(c, o);
  EXPECT_EQ(c.shots, 1);
  EXPECT_EQ(c.concurrency, 3);
  EXPECT_EQ(c.limit, 2u);
}

TEST(Run, SyntheticEndToEnd) {
  TempDir tmp;
  SyntheticDataset d;
  const fs::path ds = apr::testing::write_dataset(tmp / "synth", d);
  auto gw = std::make_shared<FakeGateway>();
  const RunResult r = run(synthetic_config(tmp, {ds}), share(gw));
  EXPECT_TRUE(r.complete);
  ASSERT_TRUE(r.table);
  EXPECT_EQ(r.records.size(), 9u);  // 12 train, 3 reserved for exemplars
  EXPECT_DOUBLE_EQ(*r.table->cells()[0].score, 100.0);
  EXPECT_EQ(gw->prompt_calls(), 1u);
  EXPECT_EQ(gw->reasoner_calls(), 9u);
  for (const char* f : {"manifest.json", "records.jsonl", "scores.json", "report.md"}) {
    EXPECT_TRUE(fs::exists(r.run_dir / f)) << f;
  }
  EXPECT_EQ(r.run_dir, tmp / "runs" / "r1");
  for (const auto& rec : r.records) {
    EXPECT_EQ(rec.shots_used(), 2);
    EXPECT_TRUE(rec.request_digest().has_value());
  }
  EXPECT_THROW(run(synthetic_config(tmp, {ds}), share(gw)), ConfigError);
}

TEST(Run, TestSplitAndLimit) {
  TempDir tmp;
  SyntheticDataset d;
  const fs::path ds = apr::testing::write_dataset(tmp / "synth", d);
  RunConfig c = synthetic_config(tmp, {ds});
  c.split = EvalSplit::Test;
  auto gw = std::make_shared<FakeGateway>();
  const RunResult r = run(c, share(gw));
  ASSERT_EQ(r.records.size(), 4u);
  EXPECT_EQ(r.records[0].instance_id(), "te12");
  c.run_id = "r2";
  c.limit = 2;
  EXPECT_EQ(run(c, share(gw)).records.size(), 2u);
}

TEST(Run, ReplayIsByteIdentical) {
  TempDir tmp;
  RunConfig c = fixture_config(tmp);
  c.run_id = "a";
  const RunResult a = run(c);
  c.run_id = "b";
  const RunResult b = run(c);
  ASSERT_TRUE(a.complete && b.complete);
  EXPECT_EQ(apr::testing::read_file(a.run_dir / "records.jsonl"), apr::testing::read_file(b.run_dir / "records.jsonl"));
  EXPECT_EQ(apr::testing::read_file(a.run_dir / "scores.json"), apr::testing::read_file(b.run_dir / "scores.json"));
  EXPECT_EQ(a.records.size(), 24u);
}

TEST(Run, ConcurrencyDoesNotChangeOutput) {
  TempDir tmp;
  RunConfig c = fixture_config(tmp);
  c.run_id = "c1";
  c.concurrency = 1;
  const RunResult one = run(c);
  c.run_id = "c8";
  c.concurrency = 8;
  const RunResult eight = run(c);
  EXPECT_EQ(apr::testing::read_file(one.run_dir / "records.jsonl"),
            apr::testing::read_file(eight.run_dir / "records.jsonl"));
  EXPECT_EQ(one.table, eight.table);
}

TEST(Run, InterruptAndResumeMatchesUninterrupted) {
  TempDir tmp;
  RunConfig c = fixture_config(tmp);
  c.run_id = "full";
  const RunResult full = run(c);
  c.run_id = "cut";
  RunControl stop;
  stop.stop_after = 6;
  const RunResult partial = run(c, stop);
  EXPECT_FALSE(partial.complete);
  EXPECT_FALSE(partial.table);
  EXPECT_EQ(partial.new_records, 6u);
  EXPECT_FALSE(fs::exists(partial.run_dir / "scores.json"));
  ConfigOverrides o;
  o.concurrency = 2;
  const RunResult resumed = resume(partial.run_dir, o);
  EXPECT_TRUE(resumed.complete);
  EXPECT_EQ(resumed.new_records, 18u);
  EXPECT_EQ(resumed.table, full.table);
  EXPECT_EQ(apr::testing::read_file(resumed.run_dir / "records.jsonl"),
            apr::testing::read_file(full.run_dir / "records.jsonl"));
}

TEST(Run, ResumeOnlyRunsRemainingInstances) {
  TempDir tmp;
  SyntheticDataset d;
  d.train = 4;
  d.test = 20;
  const fs::path ds = apr::testing::write_dataset(tmp / "synth", d);
  RunConfig c = synthetic_config(tmp, {ds});
  c.split = EvalSplit::Test;
  c.concurrency = 1;
  auto first = std::make_shared<FakeGateway>();
  RunControl stop;
  stop.stop_after = 5;
  const RunResult partial = run(c, share(first), stop);
  EXPECT_EQ(first->reasoner_calls(), 5u);
  EXPECT_EQ(read_records(partial.run_dir / "records.jsonl").size(), 5u);

  auto second = std::make_shared<FakeGateway>();
  const RunResult done = resume(partial.run_dir, {}, share(second));
  EXPECT_EQ(second->reasoner_calls(), 15u);
  EXPECT_TRUE(done.complete);
  EXPECT_EQ(done.records.size(), 20u);

  auto third = std::make_shared<FakeGateway>();
  const RunResult again = resume(partial.run_dir, {}, share(third));
  EXPECT_EQ(third->reasoner_calls(), 0u);
  EXPECT_TRUE(again.complete);
  EXPECT_EQ(again.table, done.table);
  fs::remove(partial.run_dir / "report.md");
  resume(partial.run_dir, {}, share(third));
  EXPECT_TRUE(fs::exists(partial.run_dir / "report.md"));
}

TEST(Run, ResumeRejectsChangedConfig) {
  TempDir tmp;
  const fs::path ds = apr::testing::write_dataset(tmp / "synth", SyntheticDataset{});
  auto gw = std::make_shared<FakeGateway>();
  RunControl stop;
  stop.stop_after = 2;
  const RunResult partial = run(synthetic_config(tmp, {ds}), share(gw), stop);
  ConfigOverrides o;
  o.shots = 1;
  EXPECT_THROW(resume(partial.run_dir, o, share(gw)), ManifestMismatch);
  ConfigOverrides seed;
  seed.seed = 1;
  EXPECT_THROW(resume(partial.run_dir, seed, share(gw)), ManifestMismatch);
  ConfigOverrides ok;
  ok.concurrency = 4;
  EXPECT_NO_THROW(resume(partial.run_dir, ok, share(gw)));
}

TEST(Run, CancelFlagStopsClaiming) {
  TempDir tmp;
  const fs::path ds = apr::testing::write_dataset(tmp / "synth", SyntheticDataset{});
  auto gw = std::make_shared<FakeGateway>();
  std::atomic<bool> cancel{true};
  RunControl control;
  control.cancel = &cancel;
  const RunResult r = run(synthetic_config(tmp, {ds}), share(gw), control);
  EXPECT_FALSE(r.complete);
  EXPECT_EQ(gw->reasoner_calls(), 0u);
}

TEST(Run, ProviderErrorsAreIsolated) {
  TempDir tmp;
  const fs::path ds = apr::testing::write_dataset(tmp / "synth", SyntheticDataset{});
  auto gw = std::make_shared<FakeGateway>();
  gw->answerer = [](const ChatRequest& req) -> ModelResponse {
    const std::string q = question_of(req);
    if (q == "Question number 0 of synth?") throw ProviderFailure("HTTP 500 after retries");
    if (q == "Question number 1 of synth?") return text_reply("B and more", FinishReason::Truncated);
    if (q == "Question number 2 of synth?") return text_reply("   ");
    return text_reply("B");
  };
  RunConfig c = synthetic_config(tmp, {ds});
  c.concurrency = 4;
  const RunResult r = run(c, share(gw));
  ASSERT_TRUE(r.table);
  std::map<std::string, EvaluationRecord> by_id;
  for (const auto& rec : r.records) by_id.emplace(rec.instance_id(), rec);
  std::size_t provider_errors = 0;
  for (const auto& [id, rec] : by_id) {
    if (rec.status() == RecordStatus::ProviderError) ++provider_errors;
  }
  // Which training ids land in validation depends on the split; look up by status.
  EXPECT_GE(by_id.size(), 9u);
  for (const auto& [id, rec] : by_id) {
    if (rec.status() != RecordStatus::ProviderError) continue;
    ASSERT_TRUE(rec.error());
    EXPECT_TRUE(rec.error()->find("HTTP 500") != std::string::npos ||
                rec.error()->find("finish_reason truncated") != std::string::npos)
        << *rec.error();
    if (rec.error()->find("truncated") != std::string::npos) {
      EXPECT_EQ(rec.raw_answer(), "B and more");
    }
  }
  const double scored = static_cast<double>(std::count_if(r.records.begin(), r.records.end(), [](const auto& x) {
    return x.status() == RecordStatus::Scored;
  }));
  const double correct = static_cast<double>(std::count_if(r.records.begin(), r.records.end(), [](const auto& x) {
    return x.status() == RecordStatus::Scored && std::get<bool>(*x.score());
  }));
  EXPECT_DOUBLE_EQ(*r.table->cells()[0].score, 100.0 * correct / scored);
  EXPECT_LE(provider_errors, 2u);
}

TEST(Run, EmptyImageIsInputError) {
  TempDir tmp;
  SyntheticDataset d;
  d.train = 4;
  d.test = 3;
  const fs::path ds = apr::testing::write_dataset(tmp / "synth", d);
  apr::testing::write_file(ds / "images" / "te5_0.png", "");
  RunConfig c = synthetic_config(tmp, {ds});
  c.split = EvalSplit::Test;
  auto gw = std::make_shared<FakeGateway>();
  const RunResult r = run(c, share(gw));
  ASSERT_EQ(r.records.size(), 3u);
  EXPECT_EQ(r.records[1].instance_id(), "te5");
  EXPECT_EQ(r.records[1].status(), RecordStatus::InputError);
  EXPECT_EQ(r.records[0].status(), RecordStatus::Scored);
  EXPECT_EQ(gw->reasoner_calls(), 2u);
}

TEST(Run, OversizedInstanceIsSkipped) {
  TempDir tmp;
  RunConfig c = fixture_config(tmp);
  c.run_id = "skip";
  const RunResult r = run(c);
  const auto it = std::find_if(r.records.begin(), r.records.end(), [](const auto& x) { return x.instance_id() == "sc-06"; });
  ASSERT_NE(it, r.records.end());
  EXPECT_EQ(it->status(), RecordStatus::Skipped);
  EXPECT_EQ(it->shots_used(), 0);
}

TEST(Run, FailedPromptGenerationMarksDataset) {
  TempDir tmp;
  const fs::path ds = apr::testing::write_dataset(tmp / "synth", SyntheticDataset{});
  struct BrokenPrompt : gateway::Gateway {
    ModelResponse complete(const ChatRequest&) override { return text_reply("no markers here"); }
  };
  auto broken = std::make_shared<BrokenPrompt>();
  auto reasoner = std::make_shared<FakeGateway>();
  const RunResult r = run(synthetic_config(tmp, {ds}), Gateways{broken, reasoner});
  EXPECT_FALSE(r.table);
  EXPECT_EQ(reasoner->calls(), 0u);
  for (const auto& rec : r.records) EXPECT_EQ(rec.status(), RecordStatus::ProviderError);
}

TEST(Records, PartialTrailingLineIsDropped) {
  TempDir tmp;
  const auto a = EvaluationRecord::scored("ds", "a", 0, "x", "x", true, std::nullopt);
  const auto b = EvaluationRecord::scored("ds", "b", 0, "y", "y", false, std::nullopt);
  const std::string good = to_line(a) + "\n" + to_line(b) + "\n";
  apr::testing::write_file(tmp / "records.jsonl", good + "{\"dataset_id\":\"ds\",\"inst");
  const auto recs = read_records(tmp / "records.jsonl");
  ASSERT_EQ(recs.size(), 2u);
  EXPECT_EQ(recs[1], b);
  EXPECT_EQ(apr::testing::read_file(tmp / "records.jsonl"), good);
}

TEST(Records, LaterLinesWinAndBadLinesNameLine) {
  TempDir tmp;
  const auto failed = EvaluationRecord::failed("ds", "a", 0, RecordStatus::ProviderError, "boom");
  const auto ok = EvaluationRecord::scored("ds", "a", 0, "x", "x", true, std::nullopt);
  apr::testing::write_file(tmp / "r.jsonl", to_line(failed) + "\n" + to_line(ok) + "\n");
  const auto recs = read_records(tmp / "r.jsonl");
  ASSERT_EQ(recs.size(), 1u);
  EXPECT_EQ(recs[0], ok);
  apr::testing::write_file(tmp / "bad.jsonl", to_line(ok) + "\nnot json\n");
  try {
    read_records(tmp / "bad.jsonl");
    FAIL() << "expected ParseError";
  } catch (const ParseError& e) {
    EXPECT_EQ(e.line(), 2u);
  }
  EXPECT_TRUE(read_records(tmp / "absent.jsonl").empty());
}

TEST(ScorePrediction, Variants) {
  const TaskSpec mc("ds", TaskType::MultipleChoice, MetricKind::Accuracy, 3, 1, "d.md");
  const TaskInstance inst("q", {"a.png"}, "Q?", std::vector<std::string>{"Yes", "No"}, "No");
  const auto right = score_prediction(mc, inst, " no. ", 1, std::nullopt, metrics::MatchPolicy::Default);
  EXPECT_EQ(right.normalized_answer(), "No");
  EXPECT_TRUE(std::get<bool>(*right.score()));
  const auto strict = score_prediction(mc, inst, "no", 1, std::nullopt, metrics::MatchPolicy::Strict);
  EXPECT_FALSE(std::get<bool>(*strict.score()));
  const auto empty = score_prediction(mc, inst, "  ", 1, std::nullopt, metrics::MatchPolicy::Default);
  EXPECT_EQ(empty.status(), RecordStatus::Scored);
  EXPECT_FALSE(std::get<bool>(*empty.score()));

  const TaskSpec open("ds", TaskType::OpenGeneration, MetricKind::RougeL, 3, 1, "d.md");
  const TaskInstance oi("q", {"a.png"}, "Q?", std::nullopt, "the cat sat");
  const auto partial = score_prediction(open, oi, "the cat", 0, std::nullopt, metrics::MatchPolicy::Default);
  EXPECT_NEAR(std::get<double>(*partial.score()), 80.0, 1e-9);
}

namespace {
ScoreTable two_group_table() {
  return metrics::aggregate({{"docs", MetricKind::RougeL, 40.0, 3},
                             {"mcq", MetricKind::Accuracy, 50.0, 3},
                             {"gone", MetricKind::Accuracy, std::nullopt, 3}});
}
}  // namespace

TEST(Report, MarkdownLayout) {
  const ReportColumn col{"3-shot", two_group_table()};
  const std::string md = render_report(std::span<const ReportColumn>(&col, 1), ReportFormat::Markdown);
  EXPECT_EQ(md,
            "| Dataset | 3-shot |\n"
            "|---|---:|\n"
            "| **ROUGE-L** | |\n"
            "| docs | 40.00 |\n"
            "| Average - ROUGE-L | 40.00 |\n"
            "| **Accuracy** | |\n"
            "| mcq | 50.00 |\n"
            "| gone | - |\n"
            "| Average - Accuracy | 50.00 |\n"
            "| Overall Average | 45.00 |\n");
}

TEST(Report, CsvAndJson) {
  const std::vector<ReportColumn> cols{{"a", two_group_table()}, {"b", two_group_table()}};
  const std::string csv = render_report(cols, ReportFormat::Csv);
  EXPECT_TRUE(csv.starts_with("dataset,metric,a,b\ndocs,rouge_l,40.00,40.00\n"));
  EXPECT_NE(csv.find("gone,accuracy,-,-\n"), std::string::npos);
  EXPECT_TRUE(csv.ends_with("Overall Average,,45.00,45.00\n"));
  const ReportColumn one{"x", two_group_table()};
  const std::string json = render_report(std::span<const ReportColumn>(&one, 1), ReportFormat::Json);
  EXPECT_EQ(decode<ScoreTable>(Json::parse(json)), two_group_table());
  const Json arr = Json::parse(render_report(cols, ReportFormat::Json));
  ASSERT_EQ(arr.size(), 2u);
  EXPECT_EQ(arr[1].at("label"), "b");
  EXPECT_THROW(parse_report_format("xml"), Error);
  EXPECT_EQ(parse_report_format("md"), ReportFormat::Markdown);
}

TEST(Manifest, RoundTrips) {
  TempDir tmp;
  const RunConfig c = synthetic_config(tmp, {tmp / "ds"});
  const RunManifest m{"r", c.snapshot(), c.config_hash(), {{"ds", Digest::of("p")}}, "v1", "2026-01-01T00:00:00Z"};
  const RunManifest back = decode_manifest(encode(m));
  EXPECT_EQ(back.run_id, m.run_id);
  EXPECT_EQ(back.config, m.config);
  EXPECT_EQ(back.config_hash, m.config_hash);
  EXPECT_EQ(back.prompt_digests, m.prompt_digests);
}
