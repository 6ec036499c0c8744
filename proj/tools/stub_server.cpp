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

#include "stub_server.hpp"

#include <httplib.h>

#include <fstream>
#include <sstream>

namespace apr::stub {
namespace fs = std::filesystem;
namespace {

constexpr std::string_view kPromptEngineerMarker = "You are the PromptEngineer agent";
constexpr std::string_view kTestDivider = "Test instance";

std::uint64_t fnv1a(std::string_view s) {
  std::uint64_t h = 1469598103934665603ULL;
  for (unsigned char c : s) {
    h ^= c;
    h *= 1099511628211ULL;
  }
  return h;
}

void collect_text(const Json& content, std::string& out) {
  if (content.is_string()) {
    out += content.get<std::string>();
    out += '\n';
    return;
  }
  if (!content.is_array()) return;
  for (const auto& block : content) {
    if (block.is_object() && block.value("type", "") == "text") {
      out += block.value("text", "");
      out += '\n';
    }
  }
}

std::string fewshot_block(const std::string& meta) {
  const std::size_t end = meta.rfind("\n---\nOUTPUT");
  const std::size_t start = meta.rfind("### Examples\n", end);
  if (start == std::string::npos || end == std::string::npos) return "Q: ?\nA: ?";
  std::string block = meta.substr(start + 13, end - start - 13);
  while (!block.empty() && (block.back() == '\n' || block.back() == ' ')) block.pop_back();
  return block;
}

std::string generated_prompt(const std::string& meta) {
  return "Answer the question about the attached images.\n"
         "\n"
         "1. Inspect every image before answering.\n"
         "2. Reply with the answer only, in the format shown below.\n"
         "\n"
         "Question: {question}\n"
         "\n"
         "### Examples\n" +
         fewshot_block(meta) +
         "\n"
         "\n"
         "### Now answer:";
}

std::string test_question(const std::string& text) {
  const std::size_t divider = text.rfind(kTestDivider);
  const std::size_t q = text.find("Question: ", divider == std::string::npos ? 0 : divider);
  if (q == std::string::npos) return {};
  const std::size_t start = q + 10;
  const std::size_t end = text.find('\n', start);
  return text.substr(start, end == std::string::npos ? std::string::npos : end - start);
}

Json wire_reply(const std::string& path, const Json& body, const std::string& text) {
  const std::string model = body.value("model", "stub");
  const int in_tokens = static_cast<int>(body.dump().size() / 4);
  const int out_tokens = static_cast<int>(text.size() / 4 + 1);
  if (path == "/v1/messages") {
    return {{"id", "msg_stub"},
            {"type", "message"},
            {"role", "assistant"},
            {"model", model},
            {"content", Json::array({{{"type", "text"}, {"text", text}}})},
            {"stop_reason", "end_turn"},
            {"usage", {{"input_tokens", in_tokens}, {"output_tokens", out_tokens}}}};
  }
  return {{"id", "chatcmpl-stub"},
          {"object", "chat.completion"},
          {"model", model},
          {"choices", Json::array({{{"index", 0},
                                    {"message", {{"role", "assistant"}, {"content", text}}},
                                    {"finish_reason", "stop"}}})},
          {"usage", {{"prompt_tokens", in_tokens}, {"completion_tokens", out_tokens}}}};
}

void load_answers(const fs::path& dir,
                  std::map<std::string, std::pair<std::string, std::optional<std::vector<std::string>>>>& out) {
  for (const char* split : {"train.jsonl", "test.jsonl"}) {
    std::ifstream in(dir / split);
    std::string line;
    while (std::getline(in, line)) {
      if (line.empty()) continue;
      const Json j = Json::parse(line);
      std::optional<std::vector<std::string>> choices;
      if (j.contains("choices")) choices = j.at("choices").get<std::vector<std::string>>();
      out[j.at("question").get<std::string>()] = {j.at("gold_answer").get<std::string>(), choices};
    }
  }
}

}  // namespace

std::string request_text(const Json& body) {
  std::string out;
  if (body.contains("system")) collect_text(body.at("system"), out);
  if (body.contains("messages") && body.at("messages").is_array()) {
    for (const auto& m : body.at("messages")) {
      if (m.is_object() && m.contains("content")) collect_text(m.at("content"), out);
    }
  }
  return out;
}

StubServer::StubServer(StubOptions options) : options_(std::move(options)) {
  std::map<std::string, std::pair<std::string, std::optional<std::vector<std::string>>>> raw;
  for (const auto& d : options_.datasets) load_answers(d, raw);
  for (auto& [q, a] : raw) answers_.emplace(q, Answer{std::move(a.first), std::move(a.second)});
  server_ = std::make_unique<httplib::Server>();
  install_routes();
}

StubServer::~StubServer() { stop(); }

std::string StubServer::url(const std::string& path) const {
  return "http://127.0.0.1:" + std::to_string(port_) + path;
}

int StubServer::start(int port) {
  port_ = port == 0 ? server_->bind_to_any_port("127.0.0.1") : port;
  if (port != 0 && !server_->bind_to_port("127.0.0.1", port)) {
    throw Error("stub: cannot bind port " + std::to_string(port));
  }
  if (port_ < 0) throw Error("stub: cannot bind");
  thread_ = std::thread([this] { server_->listen_after_bind(); });
  server_->wait_until_ready();
  return port_;
}

void StubServer::serve_forever(const std::string& host, int port) {
  port_ = port;
  if (!server_->listen(host, port)) throw Error("stub: cannot listen on " + host + ":" + std::to_string(port));
}

void StubServer::stop() {
  if (server_) server_->stop();
  if (thread_.joinable()) thread_.join();
}

void StubServer::script(std::vector<ScriptedReply> replies) {
  std::lock_guard lock(mu_);
  for (auto& r : replies) script_.push_back(std::move(r));
}

void StubServer::set_answerer(std::function<std::string(const std::string&)> answerer) {
  std::lock_guard lock(mu_);
  answerer_ = std::move(answerer);
}

std::vector<LoggedRequest> StubServer::log() const {
  std::lock_guard lock(mu_);
  return log_;
}

std::size_t StubServer::request_count() const {
  std::lock_guard lock(mu_);
  return log_.size();
}

void StubServer::clear_log() {
  std::lock_guard lock(mu_);
  log_.clear();
}

std::string StubServer::answer_for(const std::string& text) const {
  const std::string question = test_question(text);
  auto it = answers_.find(question);
  if (it == answers_.end()) return "unknown";
  const Answer& a = it->second;
  if (static_cast<int>(fnv1a(question) % 100) >= options_.corrupt_percent) return a.gold;
  if (a.choices && a.choices->size() > 1) {
    for (const auto& c : *a.choices) {
      if (c != a.gold) return c;
    }
  }
  // Drop the last word for open answers, giving partial overlap.
  const std::size_t cut = a.gold.rfind(' ');
  return cut == std::string::npos ? "none" : a.gold.substr(0, cut);
}

std::string StubServer::respond_text(const std::string& text) const {
  if (text.find(kPromptEngineerMarker) != std::string::npos) return generated_prompt(text);
  {
    std::lock_guard lock(mu_);
    if (answerer_) return answerer_(text);
  }
  return answer_for(text);
}

void StubServer::install_routes() {
  auto handler = [this](const httplib::Request& req, httplib::Response& res) {
    LoggedRequest entry{req.path, Json(), {}, std::chrono::steady_clock::now()};
    for (const auto& [k, v] : req.headers) entry.headers.emplace(k, v);
    try {
      entry.body = Json::parse(req.body);
    } catch (const Json::parse_error&) {
      entry.body = nullptr;
    }
    std::optional<ScriptedReply> scripted;
    {
      std::lock_guard lock(mu_);
      log_.push_back(entry);
      if (!script_.empty()) {
        scripted = script_.front();
        script_.pop_front();
      }
    }
    if (options_.delay.count() > 0) std::this_thread::sleep_for(options_.delay);
    if (scripted) {
      res.status = scripted->status;
      res.set_content(scripted->body, "application/json");
      return;
    }
    if (!options_.required_key.empty()) {
      const std::string bearer = req.get_header_value("Authorization");
      const std::string key = req.get_header_value("x-api-key");
      if (bearer != "Bearer " + options_.required_key && key != options_.required_key) {
        res.status = 401;
        res.set_content(R"({"error":"unauthorized"})", "application/json");
        return;
      }
    }
    if (entry.body.is_null() || !entry.body.is_object()) {
      res.status = 400;
      res.set_content(R"({"error":"invalid json"})", "application/json");
      return;
    }
    const std::string text = respond_text(request_text(entry.body));
    res.set_content(wire_reply(req.path, entry.body, text).dump(), "application/json");
  };
  server_->Post("/v1/chat/completions", handler);
  server_->Post("/v1/messages", handler);
}

}  // namespace apr::stub
