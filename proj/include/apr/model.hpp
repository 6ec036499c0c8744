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

// Shared domain types. Every constructor validates its invariants and throws
// ValidationError naming the offending field; a value that exists is valid.

#include <chrono>
#include <compare>
#include <cstdint>
#include <map>
#include <optional>
#include <string>
#include <string_view>
#include <variant>
#include <vector>

#include "apr/errors.hpp"
#include "json.hpp"

namespace apr {

using Json = nlohmann::json;

enum class TaskType { Classification, MultipleChoice, OpenGeneration };
enum class MetricKind { Accuracy, RougeL };

std::string_view to_string(TaskType t);
std::string_view to_string(MetricKind m);
TaskType parse_task_type(std::string_view s);
MetricKind parse_metric_kind(std::string_view s);

/// Lower-case hex SHA-256 digest.
class Digest {
 public:
  static Digest from_hex(std::string hex);
  static Digest of(std::string_view bytes);

  const std::string& hex() const noexcept { return hex_; }
  auto operator<=>(const Digest&) const = default;

 private:
  explicit Digest(std::string hex) : hex_(std::move(hex)) {}
  std::string hex_;
};

class TaskSpec {
 public:
  static constexpr int kDefaultShotCeiling = 3;

  TaskSpec(std::string dataset_id, TaskType task_type, MetricKind metric, int max_shots,
           int images_per_instance_hint, std::string description_doc,
           bool exemplars_available = true);

  const std::string& dataset_id() const noexcept { return dataset_id_; }
  TaskType task_type() const noexcept { return task_type_; }
  MetricKind metric() const noexcept { return metric_; }
  int max_shots() const noexcept { return max_shots_; }
  int images_per_instance_hint() const noexcept { return images_per_instance_hint_; }
  const std::string& description_doc() const noexcept { return description_doc_; }
  // False for datasets whose training split cannot provide usable exemplars;
  // forces 0-shot evaluation.
  bool exemplars_available() const noexcept { return exemplars_available_; }

  bool operator==(const TaskSpec&) const = default;

 private:
  std::string dataset_id_;
  TaskType task_type_;
  MetricKind metric_;
  int max_shots_;
  int images_per_instance_hint_;
  std::string description_doc_;
  bool exemplars_available_;
};

class TaskInstance {
 public:
  TaskInstance(std::string instance_id, std::vector<std::string> image_refs, std::string question,
               std::optional<std::vector<std::string>> choices, std::string gold_answer);

  const std::string& instance_id() const noexcept { return instance_id_; }
  const std::vector<std::string>& image_refs() const noexcept { return image_refs_; }
  const std::string& question() const noexcept { return question_; }
  const std::optional<std::vector<std::string>>& choices() const noexcept { return choices_; }
  const std::string& gold_answer() const noexcept { return gold_answer_; }

  bool operator==(const TaskInstance&) const = default;

 private:
  std::string instance_id_;
  std::vector<std::string> image_refs_;
  std::string question_;
  std::optional<std::vector<std::string>> choices_;
  std::string gold_answer_;
};

/// A training instance used as an in-context example.
struct Exemplar {
  explicit Exemplar(TaskInstance inst) : instance(std::move(inst)), answer_text(instance.gold_answer()) {}
  Exemplar(TaskInstance inst, std::string answer);

  TaskInstance instance;
  std::string answer_text;

  bool operator==(const Exemplar&) const = default;
};

/// Output of the prompt-generation agent. Construction enforces the
/// structural markers ("### Examples", trailing "### Now answer:") and the
/// absence of code fences.
class GeneratedPrompt {
 public:
  GeneratedPrompt(std::string dataset_id, std::string model_id, std::string prompt_text,
                  Digest template_digest, std::string created_at);

  const std::string& dataset_id() const noexcept { return dataset_id_; }
  const std::string& model_id() const noexcept { return model_id_; }
  const std::string& prompt_text() const noexcept { return prompt_text_; }
  const Digest& template_digest() const noexcept { return template_digest_; }
  const std::string& created_at() const noexcept { return created_at_; }

  bool operator==(const GeneratedPrompt&) const = default;

 private:
  std::string dataset_id_;
  std::string model_id_;
  std::string prompt_text_;
  Digest template_digest_;
  std::string created_at_;
};

enum class Role { System, User, Assistant };
enum class MediaType { Png, Jpeg, Webp, Gif };

std::string_view to_string(Role r);
std::string_view to_string(MediaType m);
std::string_view mime_type(MediaType m);
Role parse_role(std::string_view s);
MediaType parse_media_type(std::string_view s);
/// Media type from a file extension (".png", ".jpg", ...); nullopt if unsupported.
std::optional<MediaType> media_type_for_path(std::string_view path);

struct TextPart {
  std::string text;
  bool operator==(const TextPart&) const = default;
};

struct ImagePart {
  std::vector<std::uint8_t> payload;
  MediaType media_type = MediaType::Png;
  bool operator==(const ImagePart&) const = default;
};

using Part = std::variant<TextPart, ImagePart>;

struct Message {
  Role role = Role::User;
  std::vector<Part> parts;
  bool operator==(const Message&) const = default;
};

class ChatRequest {
 public:
  ChatRequest(std::vector<Message> messages, std::string model_id, int max_output_tokens,
              double temperature);

  const std::vector<Message>& messages() const noexcept { return messages_; }
  const std::string& model_id() const noexcept { return model_id_; }
  int max_output_tokens() const noexcept { return max_output_tokens_; }
  double temperature() const noexcept { return temperature_; }

  std::size_t image_count() const;

  bool operator==(const ChatRequest&) const = default;

 private:
  std::vector<Message> messages_;
  std::string model_id_;
  int max_output_tokens_;
  double temperature_;
};

enum class FinishReason { Complete, Truncated, Refused, Error };
std::string_view to_string(FinishReason f);
FinishReason parse_finish_reason(std::string_view s);

struct Usage {
  std::int64_t input_tokens = 0;
  std::int64_t output_tokens = 0;
  bool operator==(const Usage&) const = default;
};

struct ModelResponse {
  std::string text;
  FinishReason finish_reason = FinishReason::Complete;
  std::optional<Usage> usage;
  std::chrono::milliseconds latency{0};
  bool operator==(const ModelResponse&) const = default;
};

enum class RecordStatus { Scored, Skipped, ProviderError, InputError };
std::string_view to_string(RecordStatus s);
RecordStatus parse_record_status(std::string_view s);

/// Boolean for Accuracy instances, ROUGE-L F1 x 100 for RougeL instances.
using InstanceScore = std::variant<bool, double>;

class EvaluationRecord {
 public:
  EvaluationRecord(std::string dataset_id, std::string instance_id, int shots_used,
                   RecordStatus status, std::optional<std::string> raw_answer,
                   std::optional<std::string> normalized_answer, std::optional<InstanceScore> score,
                   std::optional<Digest> request_digest, std::optional<std::string> error = {});

  static EvaluationRecord scored(std::string dataset_id, std::string instance_id, int shots_used,
                                 std::string raw_answer, std::string normalized_answer,
                                 InstanceScore score, std::optional<Digest> request_digest);
  static EvaluationRecord skipped(std::string dataset_id, std::string instance_id);
  static EvaluationRecord failed(std::string dataset_id, std::string instance_id, int shots_used,
                                 RecordStatus status, std::string error,
                                 std::optional<Digest> request_digest = {});

  const std::string& dataset_id() const noexcept { return dataset_id_; }
  const std::string& instance_id() const noexcept { return instance_id_; }
  int shots_used() const noexcept { return shots_used_; }
  RecordStatus status() const noexcept { return status_; }
  const std::optional<std::string>& raw_answer() const noexcept { return raw_answer_; }
  const std::optional<std::string>& normalized_answer() const noexcept { return normalized_answer_; }
  const std::optional<InstanceScore>& score() const noexcept { return score_; }
  const std::optional<Digest>& request_digest() const noexcept { return request_digest_; }
  const std::optional<std::string>& error() const noexcept { return error_; }

  bool operator==(const EvaluationRecord&) const = default;

 private:
  std::string dataset_id_;
  std::string instance_id_;
  int shots_used_;
  RecordStatus status_;
  std::optional<std::string> raw_answer_;
  std::optional<std::string> normalized_answer_;
  std::optional<InstanceScore> score_;
  std::optional<Digest> request_digest_;
  std::optional<std::string> error_;
};

enum class OverallMode { GroupMean, TaskMean };
std::string_view to_string(OverallMode m);
OverallMode parse_overall_mode(std::string_view s);

/// One dataset's score in a table column; nullopt score renders as "-".
struct ScoreCell {
  std::string dataset_id;
  MetricKind metric = MetricKind::Accuracy;
  std::optional<double> score;
  int shots = 0;
  bool operator==(const ScoreCell&) const = default;
};

class ScoreTable {
 public:
  ScoreTable(std::vector<ScoreCell> cells, std::map<MetricKind, std::optional<double>> group_averages,
             double overall, OverallMode overall_mode);

  const std::vector<ScoreCell>& cells() const noexcept { return cells_; }
  const std::map<MetricKind, std::optional<double>>& group_averages() const noexcept {
    return group_averages_;
  }
  std::optional<double> group_average(MetricKind m) const;
  double overall() const noexcept { return overall_; }
  OverallMode overall_mode() const noexcept { return overall_mode_; }

  bool operator==(const ScoreTable&) const = default;

 private:
  std::vector<ScoreCell> cells_;
  std::map<MetricKind, std::optional<double>> group_averages_;
  double overall_;
  OverallMode overall_mode_;
};

// Canonical single-line JSON form. decode<T> throws ValidationError naming
// the missing or malformed field.
Json encode(const TaskSpec& v);
Json encode(const TaskInstance& v);
Json encode(const Exemplar& v);
Json encode(const GeneratedPrompt& v);
Json encode(const ChatRequest& v);
Json encode(const ModelResponse& v);
Json encode(const EvaluationRecord& v);
Json encode(const ScoreTable& v);

template <class T>
T decode(const Json& j);

template <> TaskSpec decode<TaskSpec>(const Json& j);
template <> TaskInstance decode<TaskInstance>(const Json& j);
template <> Exemplar decode<Exemplar>(const Json& j);
template <> GeneratedPrompt decode<GeneratedPrompt>(const Json& j);
template <> ChatRequest decode<ChatRequest>(const Json& j);
template <> ModelResponse decode<ModelResponse>(const Json& j);
template <> EvaluationRecord decode<EvaluationRecord>(const Json& j);
template <> ScoreTable decode<ScoreTable>(const Json& j);

template <class T>
std::string to_line(const T& v) {
  return encode(v).dump();
}

template <class T>
T from_line(std::string_view line) {
  Json j;
  try {
    j = Json::parse(line);
  } catch (const Json::parse_error& e) {
    throw ValidationError("<line>", e.what());
  }
  return decode<T>(j);
}

/// Current UTC time as "YYYY-MM-DDTHH:MM:SSZ".
std::string utc_timestamp();

}  // namespace apr
