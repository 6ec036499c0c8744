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

// apr: command-line entry point for running, resuming and reporting
// evaluations.
//
// Exit codes: 0 success, 1 validation failure, 2 usage or configuration
// error, 3 runtime failure, 130 interrupted.

#include <CLI11.hpp>
#include <spdlog/spdlog.h>

#include <csignal>
#include <fstream>
#include <iostream>
#include <sstream>

#include "apr/corpus.hpp"
#include "apr/prompt_engineer.hpp"
#include "apr/runner.hpp"

namespace fs = std::filesystem;
using namespace apr;

namespace {

std::atomic<bool> g_cancel{false};

void on_sigint(int) { g_cancel = true; }

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  if (!in) throw ConfigError("cannot read " + p.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

int finish(const runner::RunResult& r) {
  std::cout << "run_id: " << r.manifest.run_id << "\n"
            << "run_dir: " << r.run_dir.string() << "\n"
            << "new records: " << r.new_records << "\n";
  if (!r.complete) {
    std::cout << "status: interrupted\n";
    return 130;
  }
  std::cout << "status: complete\n";
  if (r.table) {
    const runner::ReportColumn col{"score", *r.table};
    std::cout << runner::render_report(std::span<const runner::ReportColumn>(&col, 1),
                                       runner::ReportFormat::Markdown);
  }
  return 0;
}

struct RunArgs {
  fs::path config;
  std::string mode;
  std::optional<int> shots;
  std::optional<std::uint64_t> seed;
  std::optional<int> concurrency;
  std::optional<std::size_t> limit;
  std::optional<std::string> run_id;
  std::optional<std::string> output_dir;
  bool allow_more_shots = false;

  runner::ConfigOverrides overrides() const {
    runner::ConfigOverrides o;
    if (!mode.empty()) o.mode = runner::parse_mode(mode);
    o.shots = shots;
    o.seed = seed;
    o.concurrency = concurrency;
    o.limit = limit;
    o.run_id = run_id;
    if (output_dir) o.output_dir = fs::absolute(*output_dir);
    if (allow_more_shots) o.allow_more_shots = true;
    return o;
  }
};

int cmd_run(const RunArgs& a) {
  runner::RunConfig config = runner::load_config(a.config);
  runner::apply(config, a.overrides());
  runner::RunControl control;
  control.cancel = &g_cancel;
  return finish(runner::run(config, control));
}

int cmd_resume(const fs::path& run_dir, const RunArgs& a) {
  runner::RunControl control;
  control.cancel = &g_cancel;
  return finish(runner::resume(run_dir, a.overrides(), std::nullopt, control));
}

int cmd_report(const std::vector<fs::path>& run_dirs, std::vector<std::string> labels,
               const std::string& format_name, const std::optional<fs::path>& out) {
  const runner::ReportFormat format = runner::parse_report_format(format_name);
  std::vector<runner::ReportColumn> columns;
  for (std::size_t i = 0; i < run_dirs.size(); ++i) {
    const fs::path& dir = run_dirs[i];
    if (!fs::exists(dir / "scores.json")) {
      throw ConfigError(dir.string() + " has no scores.json (run incomplete?)");
    }
    const ScoreTable table = decode<ScoreTable>(Json::parse(slurp(dir / "scores.json")));
    std::string label;
    if (i < labels.size()) {
      label = labels[i];
    } else {
      const runner::RunManifest m = runner::decode_manifest(Json::parse(slurp(dir / "manifest.json")));
      label = std::to_string(m.config.at("shots").get<int>()) + "-shot";
    }
    columns.push_back({label, table});
  }
  const std::string text = runner::render_report(columns, format);
  if (out) {
    std::ofstream f(*out, std::ios::binary);
    f << text;
    if (!f) throw Error("cannot write " + out->string());
  } else {
    std::cout << text;
  }
  return 0;
}

// Predictions: one JSON object per line with "instance_id" and "answer".
int cmd_score(const fs::path& pred, const fs::path& data, const std::string& split_name,
              const std::string& policy_name, const std::optional<fs::path>& out) {
  const corpus::DatasetBundle bundle = corpus::load_manifest(data);
  const metrics::MatchPolicy policy = metrics::parse_match_policy(policy_name);
  const auto& pool = split_name == "train" ? bundle.train : bundle.test;
  std::ifstream in(pred);
  if (!in) throw ConfigError("cannot read " + pred.string());
  std::vector<EvaluationRecord> records;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    Json j;
    try {
      j = Json::parse(line);
    } catch (const Json::parse_error& e) {
      throw ParseError(pred.string(), line_no, e.what());
    }
    const std::string id = j.at("instance_id").get<std::string>();
    const TaskInstance* inst = nullptr;
    for (const auto& candidate : pool) {
      if (candidate.instance_id() == id) inst = &candidate;
    }
    if (!inst) throw ParseError(pred.string(), line_no, "unknown instance_id '" + id + "'");
    records.push_back(runner::score_prediction(bundle.spec, *inst, j.at("answer").get<std::string>(),
                                               j.value("shots_used", 0), std::nullopt, policy));
  }
  const std::optional<double> score = metrics::dataset_score(records, bundle.spec.metric());
  if (out) {
    std::ofstream f(*out, std::ios::binary);
    for (const auto& r : records) f << to_line(r) << "\n";
  }
  std::cout << bundle.spec.dataset_id() << " " << to_string(bundle.spec.metric()) << " "
            << metrics::render_score(score) << " (" << records.size() << " predictions)\n";
  return 0;
}

int cmd_gen_prompt(const fs::path& config_path, const std::string& dataset,
                   const std::string& mode, const std::optional<std::string>& model) {
  runner::RunConfig config = runner::load_config(config_path);
  if (!mode.empty()) config.mode = runner::parse_mode(mode);
  config.validate();
  for (const auto& dir : config.datasets) {
    const corpus::DatasetBundle bundle = corpus::load_manifest(dir);
    if (bundle.spec.dataset_id() != dataset && dir.filename().string() != dataset) continue;
    const corpus::SplitPlan split = corpus::carve_validation_split(bundle, config.seed);
    const auto gateways = runner::make_gateways(config);
    const auto& pp = config.profiles.at(config.prompt_profile);
    prompt::GenerationParams params{model.value_or(pp.model_id), pp.max_output_tokens, pp.temperature};
    const GeneratedPrompt p = prompt::get_or_generate(
        bundle.spec.dataset_id(), runner::meta_prompt_inputs(bundle, split), *gateways.prompt,
        params, config.cache_dir);
    std::cout << p.prompt_text() << "\n";
    return 0;
  }
  throw ConfigError("dataset '" + dataset + "' is not listed in " + config_path.string());
}

int cmd_validate_prompt(const fs::path& file) {
  const prompt::ValidationReport report = prompt::validate_generated_prompt(slurp(file));
  for (const auto& v : report.violations) {
    std::cout << (v.advisory ? "advisory" : "error") << ": rule " << static_cast<int>(v.rule)
              << ": " << v.message << "\n";
  }
  if (!report.blocking().empty()) return 1;
  std::cout << "ok\n";
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Analyze-prompt-reason evaluation harness"};
  app.require_subcommand(1);
  app.set_version_flag("--version", runner::harness_version());
  bool verbose = false;
  app.add_flag("-v,--verbose", verbose, "Debug logging");

  RunArgs run_args;
  auto* run = app.add_subcommand("run", "Evaluate the configured datasets");
  run->add_option("--config", run_args.config, "TOML run configuration")->required()->check(CLI::ExistingFile);
  run->add_option("--mode", run_args.mode, "live | record | replay");
  run->add_option("--shots", run_args.shots, "Requested exemplars per instance");
  run->add_option("--seed", run_args.seed, "Split seed");
  run->add_option("--concurrency", run_args.concurrency, "Parallel reasoner requests");
  run->add_option("--limit", run_args.limit, "Evaluate at most N instances per dataset");
  run->add_option("--run-id", run_args.run_id, "Run identifier");
  run->add_option("--output-dir", run_args.output_dir, "Directory for run outputs");
  run->add_flag("--allow-more-shots", run_args.allow_more_shots, "Permit more than 3 shots");

  RunArgs resume_args;
  fs::path resume_dir;
  auto* resume = app.add_subcommand("resume", "Continue an interrupted run");
  resume->add_option("--run-dir", resume_dir, "Run directory")->required()->check(CLI::ExistingDirectory);
  resume->add_option("--mode", resume_args.mode, "live | record | replay");
  resume->add_option("--concurrency", resume_args.concurrency, "Parallel reasoner requests");

  std::vector<fs::path> report_dirs;
  std::vector<std::string> report_labels;
  std::string report_format = "markdown";
  std::optional<fs::path> report_out;
  auto* report = app.add_subcommand("report", "Render score tables of finished runs");
  report->add_option("--run-dir", report_dirs, "Run directory (repeatable, one column each)")
      ->required()
      ->check(CLI::ExistingDirectory);
  report->add_option("--label", report_labels, "Column label (repeatable)");
  report->add_option("--format", report_format, "markdown | csv | json");
  report->add_option("--out", report_out, "Write to file instead of stdout");

  fs::path score_pred, score_data;
  std::string score_split = "test", score_policy = "default";
  std::optional<fs::path> score_out;
  auto* score = app.add_subcommand("score", "Score a predictions file against a dataset");
  score->add_option("--pred", score_pred, "JSONL with instance_id and answer")->required()->check(CLI::ExistingFile);
  score->add_option("--data", score_data, "Dataset directory")->required()->check(CLI::ExistingDirectory);
  score->add_option("--split", score_split, "test | train")->check(CLI::IsMember({"test", "train"}));
  score->add_option("--policy", score_policy, "default | strict");
  score->add_option("--out", score_out, "Write evaluation records here");

  fs::path gen_config;
  std::string gen_dataset, gen_mode;
  std::optional<std::string> gen_model;
  auto* gen = app.add_subcommand("gen-prompt", "Generate (or fetch cached) task prompt for a dataset");
  gen->add_option("--config", gen_config, "TOML run configuration")->required()->check(CLI::ExistingFile);
  gen->add_option("--dataset", gen_dataset, "Dataset id or directory name")->required();
  gen->add_option("--mode", gen_mode, "live | record | replay");
  gen->add_option("--model", gen_model, "Override the prompt model id");

  fs::path validate_file;
  auto* validate = app.add_subcommand("validate-prompt", "Check a task prompt's structure");
  validate->add_option("--file", validate_file, "Prompt text file")->required()->check(CLI::ExistingFile);

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForVersion& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return 2;
  }
  spdlog::set_level(verbose ? spdlog::level::debug : spdlog::level::info);
  std::signal(SIGINT, on_sigint);

  try {
    if (*run) return cmd_run(run_args);
    if (*resume) return cmd_resume(resume_dir, resume_args);
    if (*report) return cmd_report(report_dirs, report_labels, report_format, report_out);
    if (*score) return cmd_score(score_pred, score_data, score_split, score_policy, score_out);
    if (*gen) return cmd_gen_prompt(gen_config, gen_dataset, gen_mode, gen_model);
    if (*validate) return cmd_validate_prompt(validate_file);
  } catch (const ConfigError& e) {
    spdlog::error("{}", e.what());
    return 2;
  } catch (const ManifestMismatch& e) {
    spdlog::error("{}", e.what());
    return 2;
  } catch (const AuthMissing& e) {
    spdlog::error("{}", e.what());
    return 2;
  } catch (const ValidationError& e) {
    spdlog::error("{}", e.what());
    return 2;
  } catch (const Error& e) {
    spdlog::error("{}", e.what());
    return 3;
  } catch (const std::exception& e) {
    spdlog::error("{}", e.what());
    return 3;
  }
  return 2;
}
