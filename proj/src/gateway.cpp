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

#include "apr/gateway.hpp"

#include "httplib.h"

#include <spdlog/spdlog.h>

#include <cstdlib>
#include <fstream>
#include <random>
#include <regex>
#include <sstream>
#include <thread>

#include "apr/encoding.hpp"

namespace apr::gateway {
namespace fs = std::filesystem;
namespace {

std::string data_url(const ImagePart& img) {
  return "data:" + std::string(mime_type(img.media_type)) + ";base64," + base64_encode(img.payload);
}

Json chat_completions_content(const Message& m) {
  Json content = Json::array();
  for (const auto& part : m.parts) {
    if (const auto* t = std::get_if<TextPart>(&part)) {
      content.push_back({{"type", "text"}, {"text", t->text}});
    } else {
      const auto& img = std::get<ImagePart>(part);
      content.push_back({{"type", "image_url"}, {"image_url", {{"url", data_url(img)}}}});
    }
  }
  return content;
}

Json messages_content(const Message& m) {
  Json content = Json::array();
  for (const auto& part : m.parts) {
    if (const auto* t = std::get_if<TextPart>(&part)) {
      content.push_back({{"type", "text"}, {"text", t->text}});
    } else {
      const auto& img = std::get<ImagePart>(part);
      content.push_back({{"type", "image"},
                         {"source",
                          {{"type", "base64"},
                           {"media_type", mime_type(img.media_type)},
                           {"data", base64_encode(img.payload)}}}});
    }
  }
  return content;
}

std::optional<std::int64_t> int_field(const Json& obj, const char* key) {
  auto it = obj.find(key);
  if (it == obj.end() || !it->is_number_integer()) return std::nullopt;
  return it->get<std::int64_t>();
}

ModelResponse parse_chat_completions(const Json& payload) {
  auto choices = payload.find("choices");
  if (choices == payload.end() || !choices->is_array() || choices->empty()) {
    throw DeserializeError("chat completions payload has no choices");
  }
  const Json& choice = choices->front();
  auto message = choice.find("message");
  if (message == choice.end() || !message->is_object()) {
    throw DeserializeError("chat completions choice has no message");
  }
  ModelResponse r;
  auto content = message->find("content");
  if (content != message->end() && content->is_string()) {
    r.text = content->get<std::string>();
  } else if (content != message->end() && content->is_array()) {
    for (const auto& block : *content) {
      if (block.value("type", "") == "text") r.text += block.value("text", "");
    }
  } else if (content == message->end() || !content->is_null()) {
    throw DeserializeError("chat completions message content has unexpected shape");
  }
  const std::string reason = choice.value("finish_reason", "");
  if (reason == "stop") {
    r.finish_reason = FinishReason::Complete;
  } else if (reason == "length") {
    r.finish_reason = FinishReason::Truncated;
  } else if (reason == "content_filter") {
    r.finish_reason = FinishReason::Refused;
  } else {
    r.finish_reason = FinishReason::Error;
  }
  if (auto usage = payload.find("usage"); usage != payload.end() && usage->is_object()) {
    r.usage = Usage{int_field(*usage, "prompt_tokens").value_or(0),
                    int_field(*usage, "completion_tokens").value_or(0)};
  }
  return r;
}

ModelResponse parse_messages(const Json& payload) {
  auto content = payload.find("content");
  if (content == payload.end() || !content->is_array()) {
    throw DeserializeError("messages payload has no content array");
  }
  ModelResponse r;
  for (const auto& block : *content) {
    if (!block.is_object()) throw DeserializeError("messages content block is not an object");
    if (block.value("type", "") == "text") r.text += block.value("text", "");
  }
  const std::string reason = payload.value("stop_reason", "");
  if (reason == "end_turn" || reason == "stop_sequence") {
    r.finish_reason = FinishReason::Complete;
  } else if (reason == "max_tokens") {
    r.finish_reason = FinishReason::Truncated;
  } else if (reason == "refusal") {
    r.finish_reason = FinishReason::Refused;
  } else {
    r.finish_reason = FinishReason::Error;
  }
  if (auto usage = payload.find("usage"); usage != payload.end() && usage->is_object()) {
    r.usage = Usage{int_field(*usage, "input_tokens").value_or(0),
                    int_field(*usage, "output_tokens").value_or(0)};
  }
  return r;
}

std::mt19937_64& jitter_engine() {
  thread_local std::mt19937_64 engine(std::random_device{}());
  return engine;
}

std::string read_text(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

}  // namespace

std::string_view to_string(WireStyle w) {
  return w == WireStyle::Messages ? "messages" : "chat_completions";
}

WireStyle parse_wire_style(std::string_view s) {
  if (s == "chat_completions") return WireStyle::ChatCompletions;
  if (s == "messages") return WireStyle::Messages;
  throw ValidationError("wire_style", "unknown value '" + std::string(s) + "'");
}

void ProviderProfile::validate() const {
  if (profile_id.empty()) throw ValidationError("profile_id", "must not be empty");
  parse_url(endpoint_url);
  if (model_id.empty()) throw ValidationError("model_id", "must not be empty");
  if (request_timeout.count() <= 0) throw ValidationError("request_timeout", "must be positive");
  if (max_retries < 0) throw ValidationError("max_retries", "must be >= 0");
  if (!(rate_limit_per_min >= 1.0)) throw ValidationError("rate_limit", "must be >= 1 per minute");
  if (backoff_base.count() < 0) throw ValidationError("backoff_base", "must be >= 0");
  if (max_output_tokens < 1) throw ValidationError("max_output_tokens", "must be >= 1");
  if (!(temperature >= 0.0)) throw ValidationError("temperature", "must be >= 0");
}

ParsedUrl parse_url(const std::string& url) {
  static const std::regex kUrl(R"(^(https?)://([A-Za-z0-9.\-]+|\[[0-9A-Fa-f:.]+\])(?::([0-9]{1,5}))?(/[^\s]*)?$)");
  std::smatch m;
  if (!std::regex_match(url, m, kUrl)) {
    throw ValidationError("endpoint_url", "not an absolute http(s) URL: '" + url + "'");
  }
  ParsedUrl out;
  out.scheme = m[1].str();
  out.host = m[2].str();
  out.port = m[3].matched ? std::stoi(m[3].str()) : (out.scheme == "https" ? 443 : 80);
  out.path = m[4].matched ? m[4].str() : "/";
  if (out.port < 1 || out.port > 65535) throw ValidationError("endpoint_url", "port out of range");
  return out;
}

Json canonical_form(const ChatRequest& request) {
  Json messages = Json::array();
  for (const auto& m : request.messages()) {
    Json parts = Json::array();
    for (const auto& part : m.parts) {
      if (const auto* t = std::get_if<TextPart>(&part)) {
        parts.push_back({{"type", "text"}, {"text", t->text}});
      } else {
        const auto& img = std::get<ImagePart>(part);
        parts.push_back({{"type", "image"},
                         {"media_type", to_string(img.media_type)},
                         {"sha256", sha256_hex(img.payload)}});
      }
    }
    messages.push_back({{"role", to_string(m.role)}, {"parts", std::move(parts)}});
  }
  return {{"messages", std::move(messages)},
          {"model_id", request.model_id()},
          {"max_output_tokens", request.max_output_tokens()},
          {"temperature", request.temperature()}};
}

Digest canonical_digest(const ChatRequest& request) {
  return Digest::of(canonical_form(request).dump());
}

Json to_wire(const ProviderProfile& profile, const ChatRequest& request) {
  if (profile.wire_style == WireStyle::ChatCompletions) {
    Json messages = Json::array();
    for (const auto& m : request.messages()) {
      messages.push_back({{"role", to_string(m.role)}, {"content", chat_completions_content(m)}});
    }
    return {{"model", request.model_id()},
            {"messages", std::move(messages)},
            {"max_tokens", request.max_output_tokens()},
            {"temperature", request.temperature()}};
  }
  // Messages style carries system text in a top-level field.
  Json messages = Json::array();
  std::string system;
  for (const auto& m : request.messages()) {
    if (m.role == Role::System) {
      for (const auto& part : m.parts) {
        if (const auto* t = std::get_if<TextPart>(&part)) {
          if (!system.empty()) system += "\n";
          system += t->text;
        }
      }
      continue;
    }
    messages.push_back({{"role", to_string(m.role)}, {"content", messages_content(m)}});
  }
  Json out = {{"model", request.model_id()},
              {"max_tokens", request.max_output_tokens()},
              {"messages", std::move(messages)},
              {"temperature", request.temperature()}};
  if (!system.empty()) out["system"] = system;
  return out;
}

ModelResponse from_wire(WireStyle style, const Json& payload) {
  if (!payload.is_object()) throw DeserializeError("provider payload is not a JSON object");
  return style == WireStyle::ChatCompletions ? parse_chat_completions(payload)
                                             : parse_messages(payload);
}

std::chrono::milliseconds backoff_ceiling(int retry, std::chrono::milliseconds base) {
  const int shift = std::clamp(retry, 0, 30);
  return base * (std::int64_t{1} << shift);
}

// --- RateLimiter ---

RateLimiter::RateLimiter(double per_minute)
    : rate_per_sec_(per_minute / 60.0),
      capacity_(std::max(1.0, per_minute / 60.0)),
      tokens_(capacity_),
      last_(Clock::now()) {
  if (!(per_minute >= 1.0)) throw ValidationError("rate_limit", "must be >= 1 per minute");
}

void RateLimiter::acquire() {
  std::chrono::duration<double> wait{0};
  {
    std::lock_guard lock(mu_);
    const auto now = Clock::now();
    const double elapsed = std::chrono::duration<double>(now - last_).count();
    tokens_ = std::min(capacity_, tokens_ + elapsed * rate_per_sec_);
    last_ = now;
    // Taking the token up front (possibly going negative) reserves a slot, so
    // waiters depart in arrival order.
    tokens_ -= 1.0;
    if (tokens_ < 0.0) wait = std::chrono::duration<double>(-tokens_ / rate_per_sec_);
  }
  if (wait.count() > 0) std::this_thread::sleep_for(wait);
}

// --- LiveGateway ---

LiveGateway::LiveGateway(ProviderProfile profile)
    : profile_((profile.validate(), std::move(profile))),
      url_(parse_url(profile_.endpoint_url)),
      limiter_(profile_.rate_limit_per_min) {}

ModelResponse LiveGateway::complete(const ChatRequest& request) {
  httplib::Headers headers;
  if (!profile_.auth_env.empty()) {
    const char* secret = std::getenv(profile_.auth_env.c_str());
    if (secret == nullptr || *secret == '\0') throw AuthMissing(profile_.auth_env);
    if (profile_.wire_style == WireStyle::ChatCompletions) {
      headers.emplace("Authorization", std::string("Bearer ") + secret);
    } else {
      headers.emplace("x-api-key", secret);
    }
  }
  if (profile_.wire_style == WireStyle::Messages) {
    headers.emplace("anthropic-version", "2023-06-01");
  }
  const std::string body = to_wire(profile_, request).dump();

  httplib::Client client(url_.scheme + "://" + url_.host + ":" + std::to_string(url_.port));
  client.set_connection_timeout(profile_.request_timeout);
  client.set_read_timeout(profile_.request_timeout);
  client.set_write_timeout(profile_.request_timeout);

  std::string last_cause;
  for (int attempt = 0; attempt <= profile_.max_retries; ++attempt) {
    if (attempt > 0) {
      const auto ceiling = backoff_ceiling(attempt - 1, profile_.backoff_base);
      std::uniform_int_distribution<std::int64_t> jitter(0, ceiling.count());
      std::this_thread::sleep_for(std::chrono::milliseconds(jitter(jitter_engine())));
    }
    limiter_.acquire();
    ++attempts_;
    const auto start = std::chrono::steady_clock::now();
    auto res = client.Post(url_.path, headers, body, "application/json");
    const auto latency = std::chrono::duration_cast<std::chrono::milliseconds>(
        std::chrono::steady_clock::now() - start);
    if (!res) {
      last_cause = "transport error: " + httplib::to_string(res.error());
      spdlog::warn("{}: attempt {} failed: {}", profile_.profile_id, attempt + 1, last_cause);
      continue;
    }
    if (res->status == 429 || res->status >= 500) {
      last_cause = "HTTP " + std::to_string(res->status);
      spdlog::warn("{}: attempt {} failed: {}", profile_.profile_id, attempt + 1, last_cause);
      continue;
    }
    if (res->status < 200 || res->status >= 300) {
      throw ProviderFailure(profile_.profile_id + ": HTTP " + std::to_string(res->status) + ": " +
                            res->body.substr(0, 512));
    }
    Json payload;
    try {
      payload = Json::parse(res->body);
    } catch (const Json::parse_error& e) {
      throw DeserializeError(profile_.profile_id + ": response is not JSON: " + e.what());
    }
    ModelResponse out = from_wire(profile_.wire_style, payload);
    out.latency = latency;
    return out;
  }
  throw ProviderFailure(profile_.profile_id + ": giving up after " +
                        std::to_string(profile_.max_retries + 1) + " attempts: " + last_cause);
}

// --- fixtures ---

fs::path fixture_path(const fs::path& fixture_dir, const Digest& digest) {
  return fixture_dir / "responses" / (digest.hex() + ".json");
}

void write_fixture(const fs::path& fixture_dir, const Fixture& fixture) {
  const fs::path target = fixture_path(fixture_dir, fixture.request_digest);
  fs::create_directories(target.parent_path());
  const Json j = {{"request_digest", fixture.request_digest.hex()},
                  {"response", encode(fixture.response)},
                  {"recorded_at", fixture.recorded_at}};
  std::ostringstream tid;
  tid << std::this_thread::get_id();
  const fs::path tmp = target.string() + ".tmp." + tid.str();
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    out << j.dump(2) << '\n';
    if (!out) throw Error("cannot write fixture " + tmp.string());
  }
  fs::rename(tmp, target);
}

std::optional<Fixture> read_fixture(const fs::path& fixture_dir, const Digest& digest) {
  const fs::path p = fixture_path(fixture_dir, digest);
  if (!fs::is_regular_file(p)) return std::nullopt;
  try {
    const Json j = Json::parse(read_text(p));
    Fixture f{Digest::from_hex(j.at("request_digest").get<std::string>()),
              decode<ModelResponse>(j.at("response")), j.value("recorded_at", "")};
    if (f.request_digest != digest) {
      throw ProviderFailure("fixture " + p.string() + " is keyed by a different digest");
    }
    return f;
  } catch (const Json::exception& e) {
    throw ProviderFailure("corrupt fixture " + p.string() + ": " + e.what());
  } catch (const ValidationError& e) {
    throw ProviderFailure("corrupt fixture " + p.string() + ": " + e.what());
  }
}

RecordingGateway::RecordingGateway(std::shared_ptr<Gateway> inner, fs::path fixture_dir)
    : inner_(std::move(inner)), fixture_dir_(std::move(fixture_dir)) {}

ModelResponse RecordingGateway::complete(const ChatRequest& request) {
  ModelResponse response = inner_->complete(request);
  write_fixture(fixture_dir_, Fixture{canonical_digest(request), response, utc_timestamp()});
  return response;
}

ReplayGateway::ReplayGateway(fs::path fixture_dir) : fixture_dir_(std::move(fixture_dir)) {}

ModelResponse ReplayGateway::complete(const ChatRequest& request) {
  ++calls_;
  const Digest digest = canonical_digest(request);
  auto fixture = read_fixture(fixture_dir_, digest);
  if (!fixture) throw ProviderFailure("no fixture for digest " + digest.hex());
  return fixture->response;
}

ModelResponse send(const ProviderProfile& profile, const ChatRequest& request) {
  return LiveGateway(profile).complete(request);
}

ModelResponse record(const ProviderProfile& profile, const ChatRequest& request,
                     const fs::path& fixture_dir) {
  return RecordingGateway(std::make_shared<LiveGateway>(profile), fixture_dir).complete(request);
}

ModelResponse replay(const ChatRequest& request, const fs::path& fixture_dir) {
  return ReplayGateway(fixture_dir).complete(request);
}

}  // namespace apr::gateway
