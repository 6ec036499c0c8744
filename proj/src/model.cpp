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

#include "apr/model.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <ctime>

#include "apr/encoding.hpp"

namespace apr {
namespace {

template <class E, std::size_t N>
std::string_view name_of(E value, const std::pair<E, std::string_view> (&table)[N]) {
  for (const auto& [v, name] : table) {
    if (v == value) return name;
  }
  return "?";
}

template <class E, std::size_t N>
E value_of(std::string_view name, const std::pair<E, std::string_view> (&table)[N],
           const char* field) {
  for (const auto& [v, n] : table) {
    if (n == name) return v;
  }
  throw ValidationError(field, "unknown value '" + std::string(name) + "'");
}

constexpr std::pair<TaskType, std::string_view> kTaskTypes[] = {
    {TaskType::Classification, "classification"},
    {TaskType::MultipleChoice, "multiple_choice"},
    {TaskType::OpenGeneration, "open_generation"},
};
constexpr std::pair<MetricKind, std::string_view> kMetrics[] = {
    {MetricKind::Accuracy, "accuracy"},
    {MetricKind::RougeL, "rouge_l"},
};
constexpr std::pair<Role, std::string_view> kRoles[] = {
    {Role::System, "system"},
    {Role::User, "user"},
    {Role::Assistant, "assistant"},
};
constexpr std::pair<MediaType, std::string_view> kMediaTypes[] = {
    {MediaType::Png, "png"},
    {MediaType::Jpeg, "jpeg"},
    {MediaType::Webp, "webp"},
    {MediaType::Gif, "gif"},
};
constexpr std::pair<FinishReason, std::string_view> kFinishReasons[] = {
    {FinishReason::Complete, "complete"},
    {FinishReason::Truncated, "truncated"},
    {FinishReason::Refused, "refused"},
    {FinishReason::Error, "error"},
};
constexpr std::pair<RecordStatus, std::string_view> kStatuses[] = {
    {RecordStatus::Scored, "scored"},
    {RecordStatus::Skipped, "skipped"},
    {RecordStatus::ProviderError, "provider_error"},
    {RecordStatus::InputError, "input_error"},
};
constexpr std::pair<OverallMode, std::string_view> kOverallModes[] = {
    {OverallMode::GroupMean, "group_mean"},
    {OverallMode::TaskMean, "task_mean"},
};

bool is_slug(std::string_view s) {
  if (s.empty()) return false;
  return std::all_of(s.begin(), s.end(), [](char c) {
    return (c >= 'a' && c <= 'z') || (c >= '0' && c <= '9') || c == '_' || c == '-';
  });
}

// Field accessors for decode(): every failure names the field.
const Json& require(const Json& j, const char* field) {
  if (!j.is_object()) throw ValidationError(field, "enclosing value is not an object");
  auto it = j.find(field);
  if (it == j.end()) throw ValidationError(field, "missing");
  return *it;
}

template <class T>
T get(const Json& j, const char* field) {
  const Json& v = require(j, field);
  try {
    return v.get<T>();
  } catch (const Json::exception& e) {
    throw ValidationError(field, std::string("wrong type: ") + e.what());
  }
}

template <class T>
std::optional<T> get_opt(const Json& j, const char* field) {
  if (!j.is_object()) throw ValidationError(field, "enclosing value is not an object");
  auto it = j.find(field);
  if (it == j.end() || it->is_null()) return std::nullopt;
  try {
    return it->get<T>();
  } catch (const Json::exception& e) {
    throw ValidationError(field, std::string("wrong type: ") + e.what());
  }
}

Json encode_part(const Part& part) {
  return std::visit(
      [](const auto& p) -> Json {
        using T = std::decay_t<decltype(p)>;
        if constexpr (std::is_same_v<T, TextPart>) {
          return {{"type", "text"}, {"text", p.text}};
        } else {
          return {{"type", "image"},
                  {"media_type", to_string(p.media_type)},
                  {"data", base64_encode(p.payload)}};
        }
      },
      part);
}

Part decode_part(const Json& j) {
  const auto type = get<std::string>(j, "type");
  if (type == "text") return TextPart{get<std::string>(j, "text")};
  if (type == "image") {
    try {
      return ImagePart{base64_decode(get<std::string>(j, "data")),
                       parse_media_type(get<std::string>(j, "media_type"))};
    } catch (const DeserializeError& e) {
      throw ValidationError("data", e.what());
    }
  }
  throw ValidationError("type", "unknown part type '" + type + "'");
}

}  // namespace

std::string_view to_string(TaskType t) { return name_of(t, kTaskTypes); }
std::string_view to_string(MetricKind m) { return name_of(m, kMetrics); }
std::string_view to_string(Role r) { return name_of(r, kRoles); }
std::string_view to_string(MediaType m) { return name_of(m, kMediaTypes); }
std::string_view to_string(FinishReason f) { return name_of(f, kFinishReasons); }
std::string_view to_string(RecordStatus s) { return name_of(s, kStatuses); }
std::string_view to_string(OverallMode m) { return name_of(m, kOverallModes); }

TaskType parse_task_type(std::string_view s) { return value_of(s, kTaskTypes, "task_type"); }
MetricKind parse_metric_kind(std::string_view s) { return value_of(s, kMetrics, "metric"); }
Role parse_role(std::string_view s) { return value_of(s, kRoles, "role"); }
MediaType parse_media_type(std::string_view s) { return value_of(s, kMediaTypes, "media_type"); }
FinishReason parse_finish_reason(std::string_view s) {
  return value_of(s, kFinishReasons, "finish_reason");
}
RecordStatus parse_record_status(std::string_view s) { return value_of(s, kStatuses, "status"); }
OverallMode parse_overall_mode(std::string_view s) {
  return value_of(s, kOverallModes, "overall_mode");
}

std::string_view mime_type(MediaType m) {
  switch (m) {
    case MediaType::Png: return "image/png";
    case MediaType::Jpeg: return "image/jpeg";
    case MediaType::Webp: return "image/webp";
    case MediaType::Gif: return "image/gif";
  }
  return "application/octet-stream";
}

std::optional<MediaType> media_type_for_path(std::string_view path) {
  const auto dot = path.rfind('.');
  if (dot == std::string_view::npos) return std::nullopt;
  std::string ext(path.substr(dot + 1));
  std::transform(ext.begin(), ext.end(), ext.begin(),
                 [](unsigned char c) { return static_cast<char>(std::tolower(c)); });
  if (ext == "png") return MediaType::Png;
  if (ext == "jpg" || ext == "jpeg") return MediaType::Jpeg;
  if (ext == "webp") return MediaType::Webp;
  if (ext == "gif") return MediaType::Gif;
  return std::nullopt;
}

// --- Digest ---

Digest Digest::from_hex(std::string hex) {
  const bool ok = hex.size() == 64 && std::all_of(hex.begin(), hex.end(), [](char c) {
                    return (c >= '0' && c <= '9') || (c >= 'a' && c <= 'f');
                  });
  if (!ok) throw ValidationError("digest", "expected 64 lower-case hex characters");
  return Digest(std::move(hex));
}

Digest Digest::of(std::string_view bytes) { return Digest(sha256_hex(bytes)); }

// --- TaskSpec ---

TaskSpec::TaskSpec(std::string dataset_id, TaskType task_type, MetricKind metric, int max_shots,
                   int images_per_instance_hint, std::string description_doc,
                   bool exemplars_available)
    : dataset_id_(std::move(dataset_id)),
      task_type_(task_type),
      metric_(metric),
      max_shots_(max_shots),
      images_per_instance_hint_(images_per_instance_hint),
      description_doc_(std::move(description_doc)),
      exemplars_available_(exemplars_available) {
  if (!is_slug(dataset_id_)) {
    throw ValidationError("dataset_id", "must be a non-empty lower-case slug [a-z0-9_-]");
  }
  if (max_shots_ < 0 || max_shots_ > kDefaultShotCeiling) {
    throw ValidationError("max_shots", "must be in [0, 3]");
  }
  if (images_per_instance_hint_ < 1) {
    throw ValidationError("images_per_instance_hint", "must be >= 1");
  }
  if (description_doc_.empty()) throw ValidationError("description_doc", "must not be empty");
  if (metric_ == MetricKind::RougeL && task_type_ != TaskType::OpenGeneration) {
    throw ValidationError("metric", "rouge_l requires task_type open_generation");
  }
  if (metric_ == MetricKind::Accuracy && task_type_ == TaskType::OpenGeneration) {
    throw ValidationError("metric", "accuracy requires classification or multiple_choice");
  }
}

// --- TaskInstance ---

TaskInstance::TaskInstance(std::string instance_id, std::vector<std::string> image_refs,
                           std::string question, std::optional<std::vector<std::string>> choices,
                           std::string gold_answer)
    : instance_id_(std::move(instance_id)),
      image_refs_(std::move(image_refs)),
      question_(std::move(question)),
      choices_(std::move(choices)),
      gold_answer_(std::move(gold_answer)) {
  if (instance_id_.empty()) throw ValidationError("instance_id", "must not be empty");
  if (image_refs_.empty()) throw ValidationError("image_refs", "must contain at least one image");
  for (const auto& ref : image_refs_) {
    if (ref.empty()) throw ValidationError("image_refs", "empty image reference");
  }
  if (question_.empty()) throw ValidationError("question", "must not be empty");
  if (choices_) {
    if (choices_->empty()) throw ValidationError("choices", "present but empty");
    if (std::find(choices_->begin(), choices_->end(), gold_answer_) == choices_->end()) {
      throw ValidationError("choices", "does not contain gold_answer verbatim");
    }
  }
}

Exemplar::Exemplar(TaskInstance inst, std::string answer)
    : instance(std::move(inst)), answer_text(std::move(answer)) {
  if (answer_text.empty()) throw ValidationError("answer_text", "must not be empty");
}

// --- GeneratedPrompt ---

GeneratedPrompt::GeneratedPrompt(std::string dataset_id, std::string model_id,
                                 std::string prompt_text, Digest template_digest,
                                 std::string created_at)
    : dataset_id_(std::move(dataset_id)),
      model_id_(std::move(model_id)),
      prompt_text_(std::move(prompt_text)),
      template_digest_(std::move(template_digest)),
      created_at_(std::move(created_at)) {
  if (dataset_id_.empty()) throw ValidationError("dataset_id", "must not be empty");
  if (model_id_.empty()) throw ValidationError("model_id", "must not be empty");
  if (prompt_text_.find("### Examples") == std::string::npos) {
    throw ValidationError("prompt_text", "missing \"### Examples\" marker");
  }
  std::string_view body = prompt_text_;
  while (!body.empty() && std::isspace(static_cast<unsigned char>(body.back()))) {
    body.remove_suffix(1);
  }
  if (!body.ends_with("### Now answer:")) {
    throw ValidationError("prompt_text", "does not end with \"### Now answer:\"");
  }
  if (prompt_text_.find("```") != std::string::npos) {
    throw ValidationError("prompt_text", "contains a code fence");
  }
}

// --- ChatRequest ---

ChatRequest::ChatRequest(std::vector<Message> messages, std::string model_id,
                         int max_output_tokens, double temperature)
    : messages_(std::move(messages)),
      model_id_(std::move(model_id)),
      max_output_tokens_(max_output_tokens),
      temperature_(temperature) {
  if (messages_.empty()) throw ValidationError("messages", "at least one message required");
  for (const auto& m : messages_) {
    if (m.parts.empty()) throw ValidationError("messages", "message without parts");
  }
  if (model_id_.empty()) throw ValidationError("model_id", "must not be empty");
  if (max_output_tokens_ < 1) throw ValidationError("max_output_tokens", "must be >= 1");
  if (!(temperature_ >= 0.0) || !std::isfinite(temperature_)) {
    throw ValidationError("temperature", "must be a finite value >= 0");
  }
}

std::size_t ChatRequest::image_count() const {
  std::size_t n = 0;
  for (const auto& m : messages_) {
    for (const auto& p : m.parts) n += std::holds_alternative<ImagePart>(p) ? 1 : 0;
  }
  return n;
}

// --- EvaluationRecord ---

EvaluationRecord::EvaluationRecord(std::string dataset_id, std::string instance_id,
                                   int shots_used, RecordStatus status,
                                   std::optional<std::string> raw_answer,
                                   std::optional<std::string> normalized_answer,
                                   std::optional<InstanceScore> score,
                                   std::optional<Digest> request_digest,
                                   std::optional<std::string> error)
    : dataset_id_(std::move(dataset_id)),
      instance_id_(std::move(instance_id)),
      shots_used_(shots_used),
      status_(status),
      raw_answer_(std::move(raw_answer)),
      normalized_answer_(std::move(normalized_answer)),
      score_(std::move(score)),
      request_digest_(std::move(request_digest)),
      error_(std::move(error)) {
  if (dataset_id_.empty()) throw ValidationError("dataset_id", "must not be empty");
  if (instance_id_.empty()) throw ValidationError("instance_id", "must not be empty");
  if (shots_used_ < 0) throw ValidationError("shots_used", "must be >= 0");
  if (status_ == RecordStatus::Skipped) {
    if (raw_answer_) throw ValidationError("raw_answer", "must be absent for skipped records");
    if (score_) throw ValidationError("score", "must be absent for skipped records");
  }
  if (status_ == RecordStatus::Scored) {
    if (!score_) throw ValidationError("score", "required for scored records");
  } else if (score_) {
    throw ValidationError("score", "only scored records carry a score");
  }
  if (score_) {
    if (const auto* f = std::get_if<double>(&*score_); f && !(*f >= 0.0 && *f <= 100.0)) {
      throw ValidationError("score", "ROUGE-L score must be in [0, 100]");
    }
  }
}

EvaluationRecord EvaluationRecord::scored(std::string dataset_id, std::string instance_id,
                                          int shots_used, std::string raw_answer,
                                          std::string normalized_answer, InstanceScore score,
                                          std::optional<Digest> request_digest) {
  return EvaluationRecord(std::move(dataset_id), std::move(instance_id), shots_used,
                          RecordStatus::Scored, std::move(raw_answer),
                          std::move(normalized_answer), score, std::move(request_digest));
}

EvaluationRecord EvaluationRecord::skipped(std::string dataset_id, std::string instance_id) {
  return EvaluationRecord(std::move(dataset_id), std::move(instance_id), 0, RecordStatus::Skipped,
                          std::nullopt, std::nullopt, std::nullopt, std::nullopt);
}

EvaluationRecord EvaluationRecord::failed(std::string dataset_id, std::string instance_id,
                                          int shots_used, RecordStatus status, std::string error,
                                          std::optional<Digest> request_digest) {
  if (status == RecordStatus::Scored || status == RecordStatus::Skipped) {
    throw ValidationError("status", "failed records need an error status");
  }
  return EvaluationRecord(std::move(dataset_id), std::move(instance_id), shots_used, status,
                          std::nullopt, std::nullopt, std::nullopt, std::move(request_digest),
                          std::move(error));
}

// --- ScoreTable ---

ScoreTable::ScoreTable(std::vector<ScoreCell> cells,
                       std::map<MetricKind, std::optional<double>> group_averages, double overall,
                       OverallMode overall_mode)
    : cells_(std::move(cells)),
      group_averages_(std::move(group_averages)),
      overall_(overall),
      overall_mode_(overall_mode) {
  auto in_range = [](double v) { return v >= 0.0 && v <= 100.0; };
  for (const auto& c : cells_) {
    if (c.dataset_id.empty()) throw ValidationError("cells", "empty dataset_id");
    if (c.score && !in_range(*c.score)) {
      throw ValidationError("cells", "score for '" + c.dataset_id + "' outside [0, 100]");
    }
    if (c.shots < 0) throw ValidationError("cells", "negative shot count");
  }
  for (const auto& [kind, avg] : group_averages_) {
    if (avg && !in_range(*avg)) throw ValidationError("group_averages", "outside [0, 100]");
  }
  if (!in_range(overall_)) throw ValidationError("overall", "outside [0, 100]");
}

std::optional<double> ScoreTable::group_average(MetricKind m) const {
  auto it = group_averages_.find(m);
  return it == group_averages_.end() ? std::nullopt : it->second;
}

// --- encode ---

Json encode(const TaskSpec& v) {
  return {{"dataset_id", v.dataset_id()},
          {"task_type", to_string(v.task_type())},
          {"metric", to_string(v.metric())},
          {"max_shots", v.max_shots()},
          {"images_per_instance_hint", v.images_per_instance_hint()},
          {"description_doc", v.description_doc()},
          {"exemplars_available", v.exemplars_available()}};
}

Json encode(const TaskInstance& v) {
  Json j = {{"instance_id", v.instance_id()},
            {"image_refs", v.image_refs()},
            {"question", v.question()},
            {"gold_answer", v.gold_answer()}};
  if (v.choices()) j["choices"] = *v.choices();
  return j;
}

Json encode(const Exemplar& v) {
  return {{"instance", encode(v.instance)}, {"answer_text", v.answer_text}};
}

Json encode(const GeneratedPrompt& v) {
  return {{"dataset_id", v.dataset_id()},
          {"model_id", v.model_id()},
          {"prompt_text", v.prompt_text()},
          {"template_digest", v.template_digest().hex()},
          {"created_at", v.created_at()}};
}

Json encode(const ChatRequest& v) {
  Json messages = Json::array();
  for (const auto& m : v.messages()) {
    Json parts = Json::array();
    for (const auto& p : m.parts) parts.push_back(encode_part(p));
    messages.push_back({{"role", to_string(m.role)}, {"parts", std::move(parts)}});
  }
  return {{"messages", std::move(messages)},
          {"model_id", v.model_id()},
          {"max_output_tokens", v.max_output_tokens()},
          {"temperature", v.temperature()}};
}

Json encode(const ModelResponse& v) {
  Json j = {{"text", v.text},
            {"finish_reason", to_string(v.finish_reason)},
            {"latency_ms", v.latency.count()}};
  if (v.usage) {
    j["usage"] = {{"input_tokens", v.usage->input_tokens},
                  {"output_tokens", v.usage->output_tokens}};
  }
  return j;
}

Json encode(const EvaluationRecord& v) {
  Json j = {{"dataset_id", v.dataset_id()},
            {"instance_id", v.instance_id()},
            {"shots_used", v.shots_used()},
            {"status", to_string(v.status())}};
  if (v.raw_answer()) j["raw_answer"] = *v.raw_answer();
  if (v.normalized_answer()) j["normalized_answer"] = *v.normalized_answer();
  if (v.score()) {
    std::visit([&](auto s) { j["score"] = s; }, *v.score());
  }
  if (v.request_digest()) j["request_digest"] = v.request_digest()->hex();
  if (v.error()) j["error"] = *v.error();
  return j;
}

Json encode(const ScoreTable& v) {
  Json cells = Json::array();
  for (const auto& c : v.cells()) {
    cells.push_back({{"dataset_id", c.dataset_id},
                     {"metric", to_string(c.metric)},
                     {"score", c.score ? Json(*c.score) : Json(nullptr)},
                     {"shots", c.shots}});
  }
  Json groups = Json::object();
  for (const auto& [kind, avg] : v.group_averages()) {
    groups[std::string(to_string(kind))] = avg ? Json(*avg) : Json(nullptr);
  }
  return {{"cells", std::move(cells)},
          {"group_averages", std::move(groups)},
          {"overall", v.overall()},
          {"overall_mode", to_string(v.overall_mode())}};
}

// --- decode ---

template <>
TaskSpec decode<TaskSpec>(const Json& j) {
  return TaskSpec(get<std::string>(j, "dataset_id"),
                  parse_task_type(get<std::string>(j, "task_type")),
                  parse_metric_kind(get<std::string>(j, "metric")), get<int>(j, "max_shots"),
                  get<int>(j, "images_per_instance_hint"), get<std::string>(j, "description_doc"),
                  get_opt<bool>(j, "exemplars_available").value_or(true));
}

template <>
TaskInstance decode<TaskInstance>(const Json& j) {
  return TaskInstance(get<std::string>(j, "instance_id"),
                      get<std::vector<std::string>>(j, "image_refs"),
                      get<std::string>(j, "question"),
                      get_opt<std::vector<std::string>>(j, "choices"),
                      get<std::string>(j, "gold_answer"));
}

template <>
Exemplar decode<Exemplar>(const Json& j) {
  return Exemplar(decode<TaskInstance>(require(j, "instance")), get<std::string>(j, "answer_text"));
}

template <>
GeneratedPrompt decode<GeneratedPrompt>(const Json& j) {
  return GeneratedPrompt(get<std::string>(j, "dataset_id"), get<std::string>(j, "model_id"),
                         get<std::string>(j, "prompt_text"),
                         Digest::from_hex(get<std::string>(j, "template_digest")),
                         get<std::string>(j, "created_at"));
}

template <>
ChatRequest decode<ChatRequest>(const Json& j) {
  std::vector<Message> messages;
  const Json& arr = require(j, "messages");
  if (!arr.is_array()) throw ValidationError("messages", "must be an array");
  for (const auto& m : arr) {
    Message msg{parse_role(get<std::string>(m, "role")), {}};
    const Json& parts = require(m, "parts");
    if (!parts.is_array()) throw ValidationError("parts", "must be an array");
    for (const auto& p : parts) msg.parts.push_back(decode_part(p));
    messages.push_back(std::move(msg));
  }
  return ChatRequest(std::move(messages), get<std::string>(j, "model_id"),
                     get<int>(j, "max_output_tokens"), get<double>(j, "temperature"));
}

template <>
ModelResponse decode<ModelResponse>(const Json& j) {
  ModelResponse r;
  r.text = get<std::string>(j, "text");
  r.finish_reason = parse_finish_reason(get<std::string>(j, "finish_reason"));
  r.latency = std::chrono::milliseconds(get_opt<std::int64_t>(j, "latency_ms").value_or(0));
  if (auto it = j.find("usage"); it != j.end() && !it->is_null()) {
    r.usage = Usage{get<std::int64_t>(*it, "input_tokens"), get<std::int64_t>(*it, "output_tokens")};
  }
  return r;
}

template <>
EvaluationRecord decode<EvaluationRecord>(const Json& j) {
  std::optional<InstanceScore> score;
  if (auto it = j.find("score"); it != j.end() && !it->is_null()) {
    if (it->is_boolean()) {
      score = it->get<bool>();
    } else if (it->is_number()) {
      score = it->get<double>();
    } else {
      throw ValidationError("score", "must be a boolean or a number");
    }
  }
  std::optional<Digest> digest;
  if (auto d = get_opt<std::string>(j, "request_digest")) digest = Digest::from_hex(*d);
  return EvaluationRecord(get<std::string>(j, "dataset_id"), get<std::string>(j, "instance_id"),
                          get<int>(j, "shots_used"),
                          parse_record_status(get<std::string>(j, "status")),
                          get_opt<std::string>(j, "raw_answer"),
                          get_opt<std::string>(j, "normalized_answer"), score, digest,
                          get_opt<std::string>(j, "error"));
}

template <>
ScoreTable decode<ScoreTable>(const Json& j) {
  std::vector<ScoreCell> cells;
  const Json& arr = require(j, "cells");
  if (!arr.is_array()) throw ValidationError("cells", "must be an array");
  for (const auto& c : arr) {
    cells.push_back(ScoreCell{get<std::string>(c, "dataset_id"),
                              parse_metric_kind(get<std::string>(c, "metric")),
                              get_opt<double>(c, "score"), get<int>(c, "shots")});
  }
  std::map<MetricKind, std::optional<double>> groups;
  const Json& g = require(j, "group_averages");
  if (!g.is_object()) throw ValidationError("group_averages", "must be an object");
  for (const auto& [key, value] : g.items()) {
    groups[parse_metric_kind(key)] =
        value.is_null() ? std::nullopt : std::optional<double>(value.get<double>());
  }
  return ScoreTable(std::move(cells), std::move(groups), get<double>(j, "overall"),
                    parse_overall_mode(get<std::string>(j, "overall_mode")));
}

std::string utc_timestamp() {
  const std::time_t now = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
  std::tm tm{};
  gmtime_r(&now, &tm);
  char buf[32];
  std::strftime(buf, sizeof(buf), "%Y-%m-%dT%H:%M:%SZ", &tm);
  return buf;
}

}  // namespace apr
