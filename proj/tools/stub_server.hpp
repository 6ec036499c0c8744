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

// Local stand-in for a model provider. Serves both wire styles:
//   POST /v1/chat/completions   (chat_completions)
//   POST /v1/messages           (messages)
// Prompt-generation requests receive a well-formed task prompt built from the
// few-shot block in the meta-prompt. Answering requests are looked up in an
// answer key loaded from dataset directories; a deterministic share of them is
// answered wrongly so scores are not trivially 100.

#include <chrono>
#include <deque>
#include <filesystem>
#include <functional>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <string>
#include <thread>
#include <vector>

#include "apr/model.hpp"

namespace httplib {
class Server;
}

namespace apr::stub {

struct StubOptions {
  std::vector<std::filesystem::path> datasets;
  /// Percentage of answering requests that get a wrong answer.
  int corrupt_percent = 0;
  /// When set, requests must carry this key (Bearer or x-api-key).
  std::string required_key;
  /// Artificial latency per request.
  std::chrono::milliseconds delay{0};
};

struct LoggedRequest {
  std::string path;
  Json body;
  std::map<std::string, std::string> headers;
  std::chrono::steady_clock::time_point at;
};

/// Scripted reply that replaces the normal one: an HTTP status and body.
struct ScriptedReply {
  int status = 200;
  std::string body;
};

class StubServer {
 public:
  explicit StubServer(StubOptions options = {});
  ~StubServer();
  StubServer(const StubServer&) = delete;
  StubServer& operator=(const StubServer&) = delete;

  /// Binds 127.0.0.1 on `port` (0 picks a free one) and serves on a background
  /// thread. Returns the bound port.
  int start(int port = 0);
  /// Serves on the calling thread until stop().
  void serve_forever(const std::string& host, int port);
  void stop();

  int port() const noexcept { return port_; }
  std::string url(const std::string& path) const;

  /// Queued replies consumed in order before normal behavior resumes.
  void script(std::vector<ScriptedReply> replies);
  /// Replaces the text produced for answering requests.
  void set_answerer(std::function<std::string(const std::string& request_text)> answerer);

  std::vector<LoggedRequest> log() const;
  std::size_t request_count() const;
  void clear_log();

  /// Text the stub answers for a request whose concatenated text is `text`.
  std::string respond_text(const std::string& text) const;

 private:
  struct Answer {
    std::string gold;
    std::optional<std::vector<std::string>> choices;
  };
  void install_routes();
  std::string answer_for(const std::string& text) const;

  StubOptions options_;
  std::unique_ptr<httplib::Server> server_;
  std::thread thread_;
  int port_ = 0;
  std::map<std::string, Answer> answers_;
  mutable std::mutex mu_;
  std::deque<ScriptedReply> script_;
  std::vector<LoggedRequest> log_;
  std::function<std::string(const std::string&)> answerer_;
};

/// Concatenated text of a wire payload in either style.
std::string request_text(const Json& body);

}  // namespace apr::stub
