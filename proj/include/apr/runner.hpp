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

#pragma once

// End-to-end pipeline: per dataset, carve the split and exemplars, obtain the
// task prompt, then evaluate every instance on a bounded worker pool. Records
// are appended to records.jsonl as they complete so an interrupted run can be
// resumed.
//
// Output tree: <output_dir>/<run_id>/{manifest.json, records.jsonl,
//                                     scores.json, report.md}

#include <atomic>
#include <cstdint>
#include <filesystem>
#include <map>
#include <memory>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "apr/corpus.hpp"
#include "apr/gateway.hpp"
#include "apr/metrics.hpp"
#include "apr/model.hpp"
#include "apr/prompt_engineer.hpp"
#include "apr/vision_reasoner.hpp"

namespace apr::runner {

enum class Mode { Live, Record, Replay };
std::string_view to_string(Mode m);
Mode parse_mode(std::string_view s);

/// Which partition is evaluated: the carved validation pool or the test split.
enum class EvalSplit { Validation, Test };
std::string_view to_string(EvalSplit s);
EvalSplit parse_eval_split(std::string_view s);

inline constexpr int kShotCeiling = 3;

struct RunConfig {
  std::vector<std::filesystem::path> datasets;
  std::string prompt_profile;
  std::string reasoner_profile;
  std::map<std::string, gateway::ProviderProfile> profiles;
  int shots = 3;
  bool allow_more_shots = false;
  std::uint64_t seed = corpus::kDefaultSeed;
  reasoner::Budget budget;
  Mode mode = Mode::Replay;
  int concurrency = 1;
  std::filesystem::path output_dir = "runs";
  std::filesystem::path fixture_dir;
  std::filesystem::path cache_dir = "cache";
  OverallMode overall_mode = OverallMode::GroupMean;
  metrics::MatchPolicy match_policy = metrics::MatchPolicy::Default;
  EvalSplit split = EvalSplit::Validation;
  /// Evaluate at most this many instances per dataset; 0 means all.
  std::size_t limit = 0;
  std::optional<std::string> run_id;

  /// Throws ConfigError.
  void validate() const;
  Json snapshot() const;
  /// Hash over the settings that can change results (excludes concurrency,
  /// mode and output locations).
  Digest config_hash() const;
};

/// Parses a TOML config; relative paths resolve against the file's directory.
RunConfig load_config(const std::filesystem::path& path);
RunConfig config_from_snapshot(const Json& snapshot);

/// Command-line overrides; set fields win over the config file.
struct ConfigOverrides {
  std::optional<Mode> mode;
  std::optional<int> shots;
  std::optional<std::uint64_t> seed;
  std::optional<int> concurrency;
  std::optional<std::filesystem::path> output_dir;
  std::optional<std::size_t> limit;
  std::optional<std::string> run_id;
  std::optional<bool> allow_more_shots;
};
void apply(RunConfig& config, const ConfigOverrides& overrides);

struct RunManifest {
  std::string run_id;
  Json config;
  Digest config_hash;
  std::map<std::string, Digest> prompt_digests;
  std::string harness_version;
  std::string created_at;
};
Json encode(const RunManifest& m);
RunManifest decode_manifest(const Json& j);

struct Gateways {
  std::shared_ptr<gateway::Gateway> prompt;
  std::shared_ptr<gateway::Gateway> reasoner;
};

/// Live, recording or replay gateways per the configured mode. Live profiles
/// share one rate limiter per profile id.
Gateways make_gateways(const RunConfig& config);

struct RunControl {
  /// Stop claiming new instances once this many records have been written
  /// by this invocation (simulated interruption).
  std::optional<std::size_t> stop_after;
  const std::atomic<bool>* cancel = nullptr;
};

struct RunResult {
  RunManifest manifest;
  std::filesystem::path run_dir;
  /// All records of the run, sorted by dataset (config order) then instance_id.
  std::vector<EvaluationRecord> records;
  std::optional<ScoreTable> table;
  bool complete = false;
  std::size_t new_records = 0;
};

RunResult run(const RunConfig& config, const Gateways& gateways, const RunControl& control = {});
RunResult run(const RunConfig& config, const RunControl& control = {});

/// Continues a run from its directory. Instances already Scored or Skipped are
/// not re-executed. Throws ManifestMismatch when the overrides change the
/// config hash.
RunResult resume(const std::filesystem::path& run_dir, const ConfigOverrides& overrides,
                 const std::optional<Gateways>& gateways = std::nullopt,
                 const RunControl& control = {});

/// Reads records.jsonl, dropping a trailing partial line. Later lines win for
/// a repeated (dataset_id, instance_id).
std::vector<EvaluationRecord> read_records(const std::filesystem::path& path);

enum class ReportFormat { Markdown, Csv, Json };
ReportFormat parse_report_format(std::string_view s);
std::string_view extension(ReportFormat f);

struct ReportColumn {
  std::string label;
  ScoreTable table;
};

/// Rows: ROUGE-L datasets, their average, Accuracy datasets, their
/// average, overall average. Missing cells render as "-".
std::string render_report(std::span<const ReportColumn> columns, ReportFormat format);

/// Writes report.<ext> into `dir` and returns its path.
std::filesystem::path emit_report(const ScoreTable& table, ReportFormat format,
                                  const std::filesystem::path& dir, const std::string& label);

/// Score table for a finished record set. `datasets` gives cell order,
/// metric and shot count per dataset.
ScoreTable score_table(std::span<const EvaluationRecord> records,
                       std::span<const ScoreCell> datasets, OverallMode mode);

/// Builds the record for one prediction against an instance.
EvaluationRecord score_prediction(const TaskSpec& spec, const TaskInstance& instance,
                                  std::string_view raw_answer, int shots_used,
                                  std::optional<Digest> request_digest,
                                  metrics::MatchPolicy policy);

/// Meta-prompt inputs for a dataset: its description document, task type, and
/// up to max(1, max_shots) question/answer pairs from the head of the
/// exemplar pool. The first pair's question is the representative question.
prompt::MetaPromptInputs meta_prompt_inputs(const corpus::DatasetBundle& bundle,
                                            const corpus::SplitPlan& split);

std::string harness_version();

}  // namespace apr::runner
