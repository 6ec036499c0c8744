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

// All model traffic goes through a Gateway. Live gateways speak one of two
// JSON wire styles over HTTP(S) with retry and a shared token-bucket rate
// limit; the recording gateway persists every response as a fixture keyed by
// the request's canonical digest; the replay gateway serves those fixtures
// without touching the network.
//
// Fixture layout: <fixture_dir>/responses/<digest>.json

#include <atomic>
#include <chrono>
#include <filesystem>
#include <functional>
#include <memory>
#include <mutex>
#include <string>

#include "apr/model.hpp"

namespace apr::gateway {

enum class WireStyle { ChatCompletions, Messages };
std::string_view to_string(WireStyle w);
WireStyle parse_wire_style(std::string_view s);

struct ProviderProfile {
  std::string profile_id;
  std::string endpoint_url;
  /// Name of the environment variable holding the secret; empty for endpoints
  /// that need no authentication (local servers).
  std::string auth_env;
  WireStyle wire_style = WireStyle::ChatCompletions;
  std::string model_id;
  std::chrono::milliseconds request_timeout{120'000};
  int max_retries = 4;
  double rate_limit_per_min = 60.0;
  std::chrono::milliseconds backoff_base{1000};
  int max_output_tokens = 4096;
  double temperature = 0.0;

  /// Throws ValidationError naming the bad field.
  void validate() const;
};

struct ParsedUrl {
  std::string scheme;  // "http" or "https"
  std::string host;
  int port = 0;
  std::string path;  // begins with '/'
};

/// Throws ValidationError unless `url` is an absolute http(s) URL.
ParsedUrl parse_url(const std::string& url);

/// Field-order-stable JSON of a request with image payloads replaced by their
/// SHA-256; this is what the digest covers.
Json canonical_form(const ChatRequest& request);
Digest canonical_digest(const ChatRequest& request);

/// Provider wire payload for the profile's style.
Json to_wire(const ProviderProfile& profile, const ChatRequest& request);
/// Throws DeserializeError if the payload shape is unrecognized.
ModelResponse from_wire(WireStyle style, const Json& payload);

/// Upper bound of the full-jitter backoff before attempt `retry` (0-based):
/// base * 2^retry.
std::chrono::milliseconds backoff_ceiling(int retry, std::chrono::milliseconds base);

/// Token bucket: `per_minute` refill rate, capacity of one second's worth of
/// tokens (at least 1). acquire() blocks until a token is available; callers
/// are served in arrival order.
class RateLimiter {
 public:
  explicit RateLimiter(double per_minute);
  void acquire();
  double capacity() const noexcept { return capacity_; }

 private:
  using Clock = std::chrono::steady_clock;
  std::mutex mu_;
  double rate_per_sec_;
  double capacity_;
  double tokens_;
  Clock::time_point last_;
};

class Gateway {
 public:
  virtual ~Gateway() = default;
  virtual ModelResponse complete(const ChatRequest& request) = 0;
};

class LiveGateway : public Gateway {
 public:
  explicit LiveGateway(ProviderProfile profile);
  ModelResponse complete(const ChatRequest& request) override;

  const ProviderProfile& profile() const noexcept { return profile_; }
  /// Total HTTP attempts made, including retries.
  std::size_t attempts() const noexcept { return attempts_.load(); }

 private:
  ProviderProfile profile_;
  ParsedUrl url_;
  RateLimiter limiter_;
  std::atomic<std::size_t> attempts_{0};
};

struct Fixture {
  Digest request_digest;
  ModelResponse response;
  std::string recorded_at;
};

std::filesystem::path fixture_path(const std::filesystem::path& fixture_dir, const Digest& digest);
/// Atomic write (temp file + rename).
void write_fixture(const std::filesystem::path& fixture_dir, const Fixture& fixture);
/// nullopt when no fixture exists for `digest`.
std::optional<Fixture> read_fixture(const std::filesystem::path& fixture_dir, const Digest& digest);

class RecordingGateway : public Gateway {
 public:
  RecordingGateway(std::shared_ptr<Gateway> inner, std::filesystem::path fixture_dir);
  ModelResponse complete(const ChatRequest& request) override;

 private:
  std::shared_ptr<Gateway> inner_;
  std::filesystem::path fixture_dir_;
};

class ReplayGateway : public Gateway {
 public:
  explicit ReplayGateway(std::filesystem::path fixture_dir);
  /// Throws ProviderFailure("no fixture for digest ...") on a miss.
  ModelResponse complete(const ChatRequest& request) override;
  std::size_t calls() const noexcept { return calls_.load(); }

 private:
  std::filesystem::path fixture_dir_;
  std::atomic<std::size_t> calls_{0};
};

ModelResponse send(const ProviderProfile& profile, const ChatRequest& request);
ModelResponse record(const ProviderProfile& profile, const ChatRequest& request,
                     const std::filesystem::path& fixture_dir);
ModelResponse replay(const ChatRequest& request, const std::filesystem::path& fixture_dir);

}  // namespace apr::gateway
