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

#include "apr/runner.hpp"

#include <fcntl.h>
#include <spdlog/spdlog.h>
#include <unistd.h>

#include <algorithm>
#include <fstream>
#include <mutex>
#include <set>
#include <sstream>
#include <thread>

#include "apr/prompt_engineer.hpp"
#include "apr/text.hpp"
#include "toml.hpp"

#ifndef APR_GIT_DESCRIBE
#define APR_GIT_DESCRIBE "unknown"
#endif

namespace apr::runner {
namespace fs = std::filesystem;
namespace {

constexpr const char* kManifestFile = "manifest.json";
constexpr const char* kRecordsFile = "records.jsonl";
constexpr const char* kScoresFile = "scores.json";

std::string read_text(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  if (!in) throw ConfigError("cannot read " + p.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

void write_text_atomic(const fs::path& target, const std::string& content) {
  const fs::path tmp = target.string() + ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    out << content;
    if (!out) throw Error("cannot write " + tmp.string());
  }
  fs::rename(tmp, target);
}

// Serializes record emission; one write(2) per line on an O_APPEND descriptor.
class RecordWriter {
 public:
  explicit RecordWriter(const fs::path& path) {
    fd_ = ::open(path.c_str(), O_WRONLY | O_CREAT | O_APPEND | O_CLOEXEC, 0644);
    if (fd_ < 0) throw Error("cannot open " + path.string());
  }
  ~RecordWriter() { ::close(fd_); }
  RecordWriter(const RecordWriter&) = delete;
  RecordWriter& operator=(const RecordWriter&) = delete;

  void write(const EvaluationRecord& record) {
    const std::string line = to_line(record) + "\n";
    std::lock_guard lock(mu_);
    std::size_t off = 0;
    while (off < line.size()) {
      const ssize_t n = ::write(fd_, line.data() + off, line.size() - off);
      if (n < 0) {
        if (errno == EINTR) continue;
        throw Error("write to records.jsonl failed");
      }
      off += static_cast<std::size_t>(n);
    }
  }

 private:
  int fd_ = -1;
  std::mutex mu_;
};

gateway::ProviderProfile profile_from_toml(const std::string& id, const toml::table& t) {
  gateway::ProviderProfile p;
  p.profile_id = id;
  p.endpoint_url = t["endpoint_url"].value_or(std::string{});
  p.auth_env = t["auth_env"].value_or(std::string{});
  p.wire_style = gateway::parse_wire_style(t["wire_style"].value_or(std::string("chat_completions")));
  p.model_id = t["model_id"].value_or(std::string{});
  p.request_timeout = std::chrono::milliseconds(
      static_cast<std::int64_t>(t["request_timeout_s"].value_or(120.0) * 1000.0));
  p.max_retries = static_cast<int>(t["max_retries"].value_or(std::int64_t{4}));
  p.rate_limit_per_min = t["rate_limit_per_min"].value_or(60.0);
  p.backoff_base = std::chrono::milliseconds(t["backoff_base_ms"].value_or(std::int64_t{1000}));
  p.max_output_tokens = static_cast<int>(t["max_output_tokens"].value_or(std::int64_t{4096}));
  p.temperature = t["temperature"].value_or(0.0);
  p.validate();
  return p;
}

Json encode_profile(const gateway::ProviderProfile& p) {
  return {{"profile_id", p.profile_id},
          {"endpoint_url", p.endpoint_url},
          {"auth_env", p.auth_env},
          {"wire_style", gateway::to_string(p.wire_style)},
          {"model_id", p.model_id},
          {"request_timeout_ms", p.request_timeout.count()},
          {"max_retries", p.max_retries},
          {"rate_limit_per_min", p.rate_limit_per_min},
          {"backoff_base_ms", p.backoff_base.count()},
          {"max_output_tokens", p.max_output_tokens},
          {"temperature", p.temperature}};
}

gateway::ProviderProfile decode_profile(const Json& j) {
  gateway::ProviderProfile p;
  p.profile_id = j.at("profile_id").get<std::string>();
  p.endpoint_url = j.at("endpoint_url").get<std::string>();
  p.auth_env = j.at("auth_env").get<std::string>();
  p.wire_style = gateway::parse_wire_style(j.at("wire_style").get<std::string>());
  p.model_id = j.at("model_id").get<std::string>();
  p.request_timeout = std::chrono::milliseconds(j.at("request_timeout_ms").get<std::int64_t>());
  p.max_retries = j.at("max_retries").get<int>();
  p.rate_limit_per_min = j.at("rate_limit_per_min").get<double>();
  p.backoff_base = std::chrono::milliseconds(j.at("backoff_base_ms").get<std::int64_t>());
  p.max_output_tokens = j.at("max_output_tokens").get<int>();
  p.temperature = j.at("temperature").get<double>();
  p.validate();
  return p;
}

// Per-dataset state prepared before any instance is evaluated.
struct DatasetJob {
  corpus::DatasetBundle bundle;
  corpus::SplitPlan split;
  std::vector<Exemplar> exemplars;
  int shots = 0;
  std::optional<GeneratedPrompt> prompt;
  std::string prompt_error;
  std::vector<TaskInstance> instances;
};

std::vector<prompt::QaPair> fewshot_pairs(const corpus::DatasetBundle& bundle,
                                          const corpus::SplitPlan& split) {
  // Drawn from the exemplar permutation, independent of the evaluated shot count.
  const std::size_t want = static_cast<std::size_t>(std::max(1, bundle.spec.max_shots()));
  std::vector<prompt::QaPair> pairs;
  for (std::size_t i = 0; i < split.exemplar_ids.size() && pairs.size() < want; ++i) {
    const TaskInstance* inst = bundle.find(split.exemplar_ids[i]);
    pairs.push_back({inst->question(), inst->gold_answer()});
  }
  if (pairs.empty()) {
    const TaskInstance& first = bundle.train.front();
    pairs.push_back({first.question(), first.gold_answer()});
  }
  return pairs;
}

int effective_shots(const RunConfig& config, const corpus::DatasetBundle& bundle,
                    const corpus::SplitPlan& split) {
  if (!bundle.spec.exemplars_available()) return 0;
  int k = std::min(config.shots, bundle.spec.max_shots());
  if (static_cast<std::size_t>(k) > split.exemplar_ids.size()) {
    spdlog::warn("dataset '{}': only {} exemplars available, using {}-shot",
                 bundle.spec.dataset_id(), split.exemplar_ids.size(), split.exemplar_ids.size());
    k = static_cast<int>(split.exemplar_ids.size());
  }
  return k;
}

std::vector<DatasetJob> prepare(const RunConfig& config, const Gateways& gateways) {
  const auto& pp = config.profiles.at(config.prompt_profile);
  const prompt::GenerationParams gen{pp.model_id, pp.max_output_tokens, pp.temperature};
  std::vector<DatasetJob> jobs;
  std::set<std::string> ids;
  for (const auto& dir : config.datasets) {
    DatasetJob job{corpus::load_manifest(dir), {}, {}, 0, std::nullopt, {}, {}};
    if (!ids.insert(job.bundle.spec.dataset_id()).second) {
      throw ConfigError("dataset '" + job.bundle.spec.dataset_id() + "' listed twice");
    }
    job.split = corpus::carve_validation_split(job.bundle, config.seed);
    job.shots = effective_shots(config, job.bundle, job.split);
    job.exemplars = corpus::select_exemplars(job.bundle, job.split, job.shots);
    job.instances = config.split == EvalSplit::Validation
                        ? corpus::validation_instances(job.bundle, job.split)
                        : job.bundle.test;
    if (config.limit > 0 && job.instances.size() > config.limit) {
      job.instances.erase(job.instances.begin() + static_cast<std::ptrdiff_t>(config.limit),
                          job.instances.end());
    }
    try {
      job.prompt = prompt::get_or_generate(job.bundle.spec.dataset_id(),
                                           meta_prompt_inputs(job.bundle, job.split), *gateways.prompt,
                                           gen, config.cache_dir);
    } catch (const AuthMissing&) {
      throw;
    } catch (const Error& e) {
      job.prompt_error = std::string("prompt generation failed: ") + e.what();
      spdlog::error("dataset '{}': {}", job.bundle.spec.dataset_id(), job.prompt_error);
    }
    jobs.push_back(std::move(job));
  }
  return jobs;
}

EvaluationRecord evaluate_instance(const RunConfig& config, const DatasetJob& job,
                                   const TaskInstance& inst, gateway::Gateway& gw) {
  const std::string& ds = job.bundle.spec.dataset_id();
  if (!job.prompt) {
    return EvaluationRecord::failed(ds, inst.instance_id(), 0, RecordStatus::ProviderError,
                                    job.prompt_error);
  }
  const std::size_t fixed_chars = text::code_point_count(job.prompt->prompt_text()) +
                                  text::code_point_count(prompt::vision_reasoner_template());
  const reasoner::ShotPlan plan =
      reasoner::plan_shots(inst, job.exemplars, job.shots, config.budget, fixed_chars);
  if (plan.skipped) return EvaluationRecord::skipped(ds, inst.instance_id());

  const auto& rp = config.profiles.at(config.reasoner_profile);
  const reasoner::DecodingParams params{rp.model_id, rp.max_output_tokens, rp.temperature};
  std::optional<ChatRequest> request;
  try {
    request = reasoner::assemble_reasoner_request(*job.prompt, plan, inst, params,
                                                  job.bundle.image_root());
  } catch (const ImageLoadFailure& e) {
    return EvaluationRecord::failed(ds, inst.instance_id(), plan.shots_used,
                                    RecordStatus::InputError, e.what());
  }
  const Digest digest = gateway::canonical_digest(*request);
  ModelResponse response;
  try {
    response = reasoner::infer(gw, *request);
  } catch (const Error& e) {
    return EvaluationRecord::failed(ds, inst.instance_id(), plan.shots_used,
                                    RecordStatus::ProviderError, e.what(), digest);
  }
  if (response.finish_reason != FinishReason::Complete) {
    return EvaluationRecord(ds, inst.instance_id(), plan.shots_used, RecordStatus::ProviderError,
                            response.text, std::nullopt, std::nullopt, digest,
                            "finish_reason " + std::string(to_string(response.finish_reason)));
  }
  return score_prediction(job.bundle.spec, inst, response.text, plan.shots_used, digest,
                          config.match_policy);
}

std::string record_key(const EvaluationRecord& r) { return r.dataset_id() + '\n' + r.instance_id(); }

void sort_records(std::vector<EvaluationRecord>& records, const std::vector<std::string>& order) {
  std::map<std::string, std::size_t> rank;
  for (std::size_t i = 0; i < order.size(); ++i) rank[order[i]] = i;
  std::stable_sort(records.begin(), records.end(), [&](const auto& a, const auto& b) {
    const auto ra = rank.count(a.dataset_id()) ? rank[a.dataset_id()] : order.size();
    const auto rb = rank.count(b.dataset_id()) ? rank[b.dataset_id()] : order.size();
    if (ra != rb) return ra < rb;
    if (a.dataset_id() != b.dataset_id()) return a.dataset_id() < b.dataset_id();
    return a.instance_id() < b.instance_id();
  });
}

std::string column_label(const RunConfig& config) {
  return std::to_string(config.shots) + "-shot";
}

RunResult execute(const RunConfig& config, const Gateways& gateways, const RunControl& control,
                  const fs::path& run_dir, const RunManifest& manifest,
                  std::vector<DatasetJob>& jobs, std::vector<EvaluationRecord> previous) {
  std::set<std::string> done;
  for (const auto& r : previous) {
    if (r.status() == RecordStatus::Scored || r.status() == RecordStatus::Skipped) {
      done.insert(record_key(r));
    }
  }

  struct WorkItem {
    const DatasetJob* job;
    const TaskInstance* inst;
  };
  std::vector<WorkItem> work;
  for (const auto& job : jobs) {
    for (const auto& inst : job.instances) {
      if (!done.count(job.bundle.spec.dataset_id() + '\n' + inst.instance_id())) {
        work.push_back({&job, &inst});
      }
    }
  }

  RecordWriter writer(run_dir / kRecordsFile);
  std::mutex results_mu;
  std::vector<EvaluationRecord> fresh;
  std::atomic<std::size_t> next{0};
  std::atomic<std::size_t> claimed{0};
  std::atomic<bool> interrupted{false};

  auto worker = [&] {
    for (;;) {
      if (control.cancel && control.cancel->load()) {
        interrupted = true;
        return;
      }
      if (control.stop_after) {
        const std::size_t c = claimed.fetch_add(1);
        if (c >= *control.stop_after) {
          interrupted = true;
          return;
        }
      }
      const std::size_t i = next.fetch_add(1);
      if (i >= work.size()) return;
      EvaluationRecord rec = evaluate_instance(config, *work[i].job, *work[i].inst, *gateways.reasoner);
      writer.write(rec);
      std::lock_guard lock(results_mu);
      fresh.push_back(std::move(rec));
    }
  };
  {
    std::vector<std::jthread> pool;
    const int n = std::max(1, std::min<int>(config.concurrency, static_cast<int>(work.size())));
    for (int t = 0; t < n; ++t) pool.emplace_back(worker);
  }

  RunResult result{manifest, run_dir, {}, std::nullopt, false, 0};
  result.new_records = fresh.size();
  result.complete = next.load() >= work.size() && fresh.size() == work.size();
  if (interrupted && fresh.size() < work.size()) result.complete = false;

  std::vector<std::string> order;
  for (const auto& job : jobs) order.push_back(job.bundle.spec.dataset_id());

  // Latest record per instance wins; earlier failed attempts are superseded.
  std::map<std::string, EvaluationRecord> latest;
  for (auto& r : previous) latest.insert_or_assign(record_key(r), std::move(r));
  for (auto& r : fresh) latest.insert_or_assign(record_key(r), std::move(r));
  for (auto& [k, r] : latest) result.records.push_back(std::move(r));
  sort_records(result.records, order);

  if (!result.complete) {
    spdlog::warn("run {} interrupted after {} new records; resume with `apr resume --run-dir {}`",
                 manifest.run_id, fresh.size(), run_dir.string());
    return result;
  }

  // Compaction into the canonical sorted form.
  std::string compacted;
  for (const auto& r : result.records) compacted += to_line(r) + "\n";
  write_text_atomic(run_dir / kRecordsFile, compacted);

  std::vector<ScoreCell> cells;
  for (const auto& job : jobs) {
    cells.push_back({job.bundle.spec.dataset_id(), job.bundle.spec.metric(), std::nullopt, job.shots});
  }
  try {
    result.table = score_table(result.records, cells, config.overall_mode);
  } catch (const AllMissing&) {
    spdlog::error("run {}: no dataset produced a score; no table written", manifest.run_id);
    return result;
  }
  write_text_atomic(run_dir / kScoresFile, encode(*result.table).dump(2) + "\n");
  emit_report(*result.table, ReportFormat::Markdown, run_dir, column_label(config));
  return result;
}

void check_auth(const RunConfig& config) {
  if (config.mode == Mode::Replay) return;
  for (const auto* id : {&config.prompt_profile, &config.reasoner_profile}) {
    const auto& p = config.profiles.at(*id);
    if (!p.auth_env.empty()) {
      const char* v = std::getenv(p.auth_env.c_str());
      if (v == nullptr || *v == '\0') throw AuthMissing(p.auth_env);
    }
  }
}

std::map<std::string, Digest> prompt_digests(const std::vector<DatasetJob>& jobs) {
  std::map<std::string, Digest> out;
  for (const auto& job : jobs) {
    if (job.prompt) out.emplace(job.bundle.spec.dataset_id(), job.prompt->template_digest());
  }
  return out;
}

}  // namespace

std::string_view to_string(Mode m) {
  switch (m) {
    case Mode::Live: return "live";
    case Mode::Record: return "record";
    case Mode::Replay: return "replay";
  }
  return "";
}

Mode parse_mode(std::string_view s) {
  if (s == "live") return Mode::Live;
  if (s == "record") return Mode::Record;
  if (s == "replay") return Mode::Replay;
  throw ConfigError("unknown mode '" + std::string(s) + "'");
}

std::string_view to_string(EvalSplit s) { return s == EvalSplit::Test ? "test" : "validation"; }

EvalSplit parse_eval_split(std::string_view s) {
  if (s == "validation") return EvalSplit::Validation;
  if (s == "test") return EvalSplit::Test;
  throw ConfigError("unknown split '" + std::string(s) + "'");
}

void RunConfig::validate() const {
  if (datasets.empty()) throw ConfigError("no datasets configured");
  if (shots < 0) throw ConfigError("shots must be >= 0");
  if (shots > kShotCeiling && !allow_more_shots) {
    throw ConfigError("shots > 3 requires --allow-more-shots");
  }
  if (concurrency < 1) throw ConfigError("concurrency must be >= 1");
  for (const auto* id : {&prompt_profile, &reasoner_profile}) {
    if (!profiles.count(*id)) throw ConfigError("unknown provider profile '" + *id + "'");
  }
  if (mode != Mode::Live && fixture_dir.empty()) {
    throw ConfigError(std::string(to_string(mode)) + " mode requires fixture_dir");
  }
  if (cache_dir.empty()) throw ConfigError("cache_dir must be set");
}

Json RunConfig::snapshot() const {
  Json ds = Json::array();
  for (const auto& d : datasets) ds.push_back(d.string());
  Json profs = Json::object();
  for (const auto& [id, p] : profiles) profs[id] = encode_profile(p);
  Json j = {{"datasets", ds},
            {"prompt_profile", prompt_profile},
            {"reasoner_profile", reasoner_profile},
            {"profiles", profs},
            {"shots", shots},
            {"allow_more_shots", allow_more_shots},
            {"seed", seed},
            {"budget", {{"max_images", budget.max_images()}, {"max_prompt_chars", budget.max_prompt_chars()}}},
            {"mode", to_string(mode)},
            {"concurrency", concurrency},
            {"output_dir", output_dir.string()},
            {"fixture_dir", fixture_dir.string()},
            {"cache_dir", cache_dir.string()},
            {"overall_mode", apr::to_string(overall_mode)},
            {"match_policy", metrics::to_string(match_policy)},
            {"split", to_string(split)},
            {"limit", limit}};
  if (run_id) j["run_id"] = *run_id;
  return j;
}

Digest RunConfig::config_hash() const {
  Json j = snapshot();
  for (const char* k : {"mode", "concurrency", "output_dir", "fixture_dir", "cache_dir", "run_id"}) {
    j.erase(k);
  }
  return Digest::of(j.dump());
}

RunConfig load_config(const fs::path& path) {
  toml::table t;
  try {
    t = toml::parse_file(path.string());
  } catch (const toml::parse_error& e) {
    std::ostringstream ss;
    ss << e;
    throw ConfigError("cannot parse " + path.string() + ": " + ss.str());
  }
  const fs::path base = fs::absolute(path).parent_path();
  auto resolve = [&](const std::string& p) { return (base / p).lexically_normal(); };

  RunConfig c;
  try {
    if (auto* arr = t["datasets"].as_array()) {
      for (const auto& d : *arr) {
        if (auto s = d.value<std::string>()) c.datasets.push_back(resolve(*s));
      }
    }
    c.prompt_profile = t["prompt_model"].value_or(std::string{});
    c.reasoner_profile = t["reasoner_model"].value_or(std::string{});
    if (auto* profs = t["profiles"].as_table()) {
      for (const auto& [key, node] : *profs) {
        const auto* tbl = node.as_table();
        if (!tbl) throw ConfigError("profiles." + std::string(key.str()) + " must be a table");
        c.profiles.emplace(std::string(key.str()), profile_from_toml(std::string(key.str()), *tbl));
      }
    }
    c.shots = static_cast<int>(t["shots"].value_or(std::int64_t{3}));
    c.allow_more_shots = t["allow_more_shots"].value_or(false);
    c.seed = static_cast<std::uint64_t>(t["seed"].value_or(std::int64_t{42}));
    c.budget = reasoner::Budget(
        static_cast<int>(t["budget"]["max_images"].value_or(std::int64_t{reasoner::Budget::kDefaultMaxImages})),
        static_cast<int>(t["budget"]["max_prompt_chars"].value_or(
            std::int64_t{reasoner::Budget::kDefaultMaxPromptChars})));
    c.mode = parse_mode(t["mode"].value_or(std::string("replay")));
    c.concurrency = static_cast<int>(t["concurrency"].value_or(std::int64_t{1}));
    c.output_dir = resolve(t["output_dir"].value_or(std::string("runs")));
    if (auto f = t["fixture_dir"].value<std::string>()) c.fixture_dir = resolve(*f);
    c.cache_dir = resolve(t["cache_dir"].value_or(std::string("cache")));
    c.overall_mode = parse_overall_mode(t["overall_mode"].value_or(std::string("group_mean")));
    c.match_policy = metrics::parse_match_policy(t["match_policy"].value_or(std::string("default")));
    c.split = parse_eval_split(t["split"].value_or(std::string("validation")));
    c.limit = static_cast<std::size_t>(t["limit"].value_or(std::int64_t{0}));
  } catch (const ValidationError& e) {
    throw ConfigError(path.string() + ": " + e.what());
  }
  return c;
}

RunConfig config_from_snapshot(const Json& j) {
  RunConfig c;
  try {
    for (const auto& d : j.at("datasets")) c.datasets.emplace_back(d.get<std::string>());
    c.prompt_profile = j.at("prompt_profile").get<std::string>();
    c.reasoner_profile = j.at("reasoner_profile").get<std::string>();
    for (const auto& [id, p] : j.at("profiles").items()) c.profiles.emplace(id, decode_profile(p));
    c.shots = j.at("shots").get<int>();
    c.allow_more_shots = j.at("allow_more_shots").get<bool>();
    c.seed = j.at("seed").get<std::uint64_t>();
    c.budget = reasoner::Budget(j.at("budget").at("max_images").get<int>(),
                                j.at("budget").at("max_prompt_chars").get<int>());
    c.mode = parse_mode(j.at("mode").get<std::string>());
    c.concurrency = j.at("concurrency").get<int>();
    c.output_dir = j.at("output_dir").get<std::string>();
    c.fixture_dir = j.at("fixture_dir").get<std::string>();
    c.cache_dir = j.at("cache_dir").get<std::string>();
    c.overall_mode = parse_overall_mode(j.at("overall_mode").get<std::string>());
    c.match_policy = metrics::parse_match_policy(j.at("match_policy").get<std::string>());
    c.split = parse_eval_split(j.at("split").get<std::string>());
    c.limit = j.at("limit").get<std::size_t>();
    if (j.contains("run_id")) c.run_id = j.at("run_id").get<std::string>();
  } catch (const Json::exception& e) {
    throw ConfigError(std::string("malformed config snapshot: ") + e.what());
  } catch (const ValidationError& e) {
    throw ConfigError(std::string("malformed config snapshot: ") + e.what());
  }
  return c;
}

void apply(RunConfig& c, const ConfigOverrides& o) {
  if (o.mode) c.mode = *o.mode;
  if (o.shots) c.shots = *o.shots;
  if (o.seed) c.seed = *o.seed;
  if (o.concurrency) c.concurrency = *o.concurrency;
  if (o.output_dir) c.output_dir = *o.output_dir;
  if (o.limit) c.limit = *o.limit;
  if (o.run_id) c.run_id = *o.run_id;
  if (o.allow_more_shots) c.allow_more_shots = *o.allow_more_shots;
}

Json encode(const RunManifest& m) {
  Json digests = Json::object();
  for (const auto& [id, d] : m.prompt_digests) digests[id] = d.hex();
  return {{"run_id", m.run_id},
          {"config", m.config},
          {"config_hash", m.config_hash.hex()},
          {"prompt_digests", digests},
          {"harness_version", m.harness_version},
          {"created_at", m.created_at}};
}

RunManifest decode_manifest(const Json& j) {
  try {
    RunManifest m{j.at("run_id").get<std::string>(), j.at("config"),
                  Digest::from_hex(j.at("config_hash").get<std::string>()), {},
                  j.at("harness_version").get<std::string>(), j.at("created_at").get<std::string>()};
    for (const auto& [id, d] : j.at("prompt_digests").items()) {
      m.prompt_digests.emplace(id, Digest::from_hex(d.get<std::string>()));
    }
    return m;
  } catch (const Json::exception& e) {
    throw ConfigError(std::string("malformed manifest: ") + e.what());
  }
}

Gateways make_gateways(const RunConfig& config) {
  if (config.mode == Mode::Replay) {
    auto replay = std::make_shared<gateway::ReplayGateway>(config.fixture_dir);
    return {replay, replay};
  }
  std::map<std::string, std::shared_ptr<gateway::Gateway>> by_profile;
  auto get = [&](const std::string& id) {
    auto& slot = by_profile[id];
    if (!slot) {
      std::shared_ptr<gateway::Gateway> live =
          std::make_shared<gateway::LiveGateway>(config.profiles.at(id));
      slot = config.mode == Mode::Record
                 ? std::make_shared<gateway::RecordingGateway>(live, config.fixture_dir)
                 : live;
    }
    return slot;
  };
  return {get(config.prompt_profile), get(config.reasoner_profile)};
}

RunResult run(const RunConfig& config, const Gateways& gateways, const RunControl& control) {
  config.validate();
  check_auth(config);
  std::vector<DatasetJob> jobs = prepare(config, gateways);

  const Digest hash = config.config_hash();
  std::string run_id = config.run_id.value_or("");
  if (run_id.empty()) {
    std::string ts = utc_timestamp();
    ts.erase(std::remove_if(ts.begin(), ts.end(), [](char c) { return c == '-' || c == ':'; }),
             ts.end());
    run_id = ts + "-" + hash.hex().substr(0, 8);
  }
  const fs::path run_dir = config.output_dir / run_id;
  if (fs::exists(run_dir / kManifestFile)) {
    throw ConfigError("run directory " + run_dir.string() + " already holds a run; use resume");
  }
  fs::create_directories(run_dir);

  RunManifest manifest{run_id, config.snapshot(), hash, prompt_digests(jobs), harness_version(),
                       utc_timestamp()};
  manifest.config["run_id"] = run_id;
  write_text_atomic(run_dir / kManifestFile, encode(manifest).dump(2) + "\n");
  return execute(config, gateways, control, run_dir, manifest, jobs, {});
}

RunResult run(const RunConfig& config, const RunControl& control) {
  config.validate();
  return run(config, make_gateways(config), control);
}

RunResult resume(const fs::path& run_dir, const ConfigOverrides& overrides,
                 const std::optional<Gateways>& gateways, const RunControl& control) {
  const fs::path manifest_path = run_dir / kManifestFile;
  if (!fs::exists(manifest_path)) throw ConfigError("no manifest in " + run_dir.string());
  const RunManifest manifest = [&] {
    try {
      return decode_manifest(Json::parse(read_text(manifest_path)));
    } catch (const Json::parse_error& e) {
      throw ConfigError(std::string("malformed manifest: ") + e.what());
    }
  }();
  RunConfig config = config_from_snapshot(manifest.config);
  apply(config, overrides);
  config.validate();
  if (config.config_hash() != manifest.config_hash) {
    throw ManifestMismatch("configuration differs from run " + manifest.run_id +
                           " (config hash " + config.config_hash().hex().substr(0, 12) +
                           " vs " + manifest.config_hash.hex().substr(0, 12) + ")");
  }
  check_auth(config);
  const Gateways gw = gateways ? *gateways : make_gateways(config);
  std::vector<DatasetJob> jobs = prepare(config, gw);
  if (prompt_digests(jobs) != manifest.prompt_digests) {
    throw ManifestMismatch("task prompts differ from those recorded in run " + manifest.run_id);
  }
  std::vector<EvaluationRecord> previous = read_records(run_dir / kRecordsFile);
  return execute(config, gw, control, run_dir, manifest, jobs, std::move(previous));
}

std::vector<EvaluationRecord> read_records(const fs::path& path) {
  std::vector<EvaluationRecord> out;
  if (!fs::exists(path)) return out;
  std::string content = read_text(path);
  const std::size_t last_nl = content.rfind('\n');
  const std::size_t complete = last_nl == std::string::npos ? 0 : last_nl + 1;
  if (complete < content.size()) {
    spdlog::warn("{}: dropping partial trailing line", path.string());
    fs::resize_file(path, complete);
    content.resize(complete);
  }
  std::map<std::string, std::size_t> index;
  std::istringstream in(content);
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    EvaluationRecord rec = [&] {
      try {
        return from_line<EvaluationRecord>(line);
      } catch (const ValidationError& e) {
        throw ParseError(path.string(), line_no, e.what());
      }
    }();
    const std::string key = record_key(rec);
    if (auto it = index.find(key); it != index.end()) {
      out[it->second] = std::move(rec);
    } else {
      index.emplace(key, out.size());
      out.push_back(std::move(rec));
    }
  }
  return out;
}

ReportFormat parse_report_format(std::string_view s) {
  if (s == "markdown" || s == "md") return ReportFormat::Markdown;
  if (s == "csv") return ReportFormat::Csv;
  if (s == "json") return ReportFormat::Json;
  throw ConfigError("unknown report format '" + std::string(s) + "'");
}

std::string_view extension(ReportFormat f) {
  switch (f) {
    case ReportFormat::Markdown: return "md";
    case ReportFormat::Csv: return "csv";
    case ReportFormat::Json: return "json";
  }
  return "txt";
}

std::string render_report(std::span<const ReportColumn> columns, ReportFormat format) {
  if (columns.empty()) throw PreconditionError("report needs at least one column");
  if (format == ReportFormat::Json) {
    if (columns.size() == 1) return encode(columns.front().table).dump(2) + "\n";
    Json arr = Json::array();
    for (const auto& c : columns) arr.push_back({{"label", c.label}, {"table", encode(c.table)}});
    return arr.dump(2) + "\n";
  }

  // Union of datasets per metric, in first-seen order.
  std::map<MetricKind, std::vector<std::string>> rows;
  for (const auto& col : columns) {
    for (const auto& cell : col.table.cells()) {
      auto& v = rows[cell.metric];
      if (std::find(v.begin(), v.end(), cell.dataset_id) == v.end()) v.push_back(cell.dataset_id);
    }
  }
  auto cell_value = [](const ScoreTable& t, const std::string& id) -> std::optional<double> {
    for (const auto& c : t.cells()) {
      if (c.dataset_id == id) return c.score;
    }
    return std::nullopt;
  };
  const std::pair<MetricKind, const char*> groups[] = {{MetricKind::RougeL, "ROUGE-L"},
                                                       {MetricKind::Accuracy, "Accuracy"}};
  std::ostringstream out;
  if (format == ReportFormat::Markdown) {
    out << "| Dataset |";
    for (const auto& c : columns) out << ' ' << c.label << " |";
    out << "\n|---|";
    for (std::size_t i = 0; i < columns.size(); ++i) out << "---:|";
    out << '\n';
    for (const auto& [kind, name] : groups) {
      if (!rows.count(kind)) continue;
      out << "| **" << name << "** |";
      for (std::size_t i = 0; i < columns.size(); ++i) out << " |";
      out << '\n';
      for (const auto& id : rows[kind]) {
        out << "| " << id << " |";
        for (const auto& c : columns) out << ' ' << metrics::render_score(cell_value(c.table, id)) << " |";
        out << '\n';
      }
      out << "| Average - " << name << " |";
      for (const auto& c : columns) out << ' ' << metrics::render_score(c.table.group_average(kind)) << " |";
      out << '\n';
    }
    out << "| Overall Average |";
    for (const auto& c : columns) out << ' ' << metrics::render_score(c.table.overall()) << " |";
    out << '\n';
    return out.str();
  }

  out << "dataset,metric";
  for (const auto& c : columns) out << ',' << c.label;
  out << '\n';
  for (const auto& [kind, name] : groups) {
    if (!rows.count(kind)) continue;
    for (const auto& id : rows[kind]) {
      out << id << ',' << apr::to_string(kind);
      for (const auto& c : columns) out << ',' << metrics::render_score(cell_value(c.table, id));
      out << '\n';
    }
    out << "Average - " << name << ',' << apr::to_string(kind);
    for (const auto& c : columns) out << ',' << metrics::render_score(c.table.group_average(kind));
    out << '\n';
  }
  out << "Overall Average,";
  for (const auto& c : columns) out << ',' << metrics::render_score(c.table.overall());
  out << '\n';
  return out.str();
}

fs::path emit_report(const ScoreTable& table, ReportFormat format, const fs::path& dir,
                     const std::string& label) {
  const ReportColumn col{label, table};
  const fs::path target = dir / ("report." + std::string(extension(format)));
  write_text_atomic(target, render_report(std::span<const ReportColumn>(&col, 1), format));
  return target;
}

ScoreTable score_table(std::span<const EvaluationRecord> records, std::span<const ScoreCell> datasets,
                       OverallMode mode) {
  std::vector<ScoreCell> cells;
  for (const auto& d : datasets) {
    std::vector<EvaluationRecord> mine;
    for (const auto& r : records) {
      if (r.dataset_id() == d.dataset_id) mine.push_back(r);
    }
    ScoreCell cell = d;
    cell.score = metrics::dataset_score(mine, d.metric);
    cells.push_back(std::move(cell));
  }
  return metrics::aggregate(std::move(cells), mode);
}

EvaluationRecord score_prediction(const TaskSpec& spec, const TaskInstance& instance,
                                  std::string_view raw_answer, int shots_used,
                                  std::optional<Digest> request_digest,
                                  metrics::MatchPolicy policy) {
  std::string normalized;
  try {
    normalized = reasoner::parse_answer(raw_answer, spec, instance.choices(), policy);
  } catch (const EmptyAnswer&) {
    // Scored as wrong.
    normalized.clear();
  }
  InstanceScore score;
  if (spec.metric() == MetricKind::Accuracy) {
    score = !normalized.empty() && metrics::accuracy_match(normalized, instance.gold_answer(), policy);
  } else {
    score = 100.0 * metrics::rouge_l_f1(normalized, instance.gold_answer()).f1;
  }
  return EvaluationRecord::scored(spec.dataset_id(), instance.instance_id(), shots_used,
                                  std::string(raw_answer), std::move(normalized), score,
                                  std::move(request_digest));
}

prompt::MetaPromptInputs meta_prompt_inputs(const corpus::DatasetBundle& bundle,
                                     const corpus::SplitPlan& split) {
  prompt::MetaPromptInputs in;
  in.dataset_paper = read_text(bundle.description_path());
  in.task_type = bundle.spec.task_type();
  in.fewshot = fewshot_pairs(bundle, split);
  in.representative_question = in.fewshot.front().question;
  return in;
}

std::string harness_version() { return APR_GIT_DESCRIBE; }

}  // namespace apr::runner
