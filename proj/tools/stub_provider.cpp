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

// stub_provider: serves canned model responses on localhost for offline runs
// and fixture recording.

#include <CLI11.hpp>
#include <spdlog/spdlog.h>

#include "stub_server.hpp"

int main(int argc, char** argv) {
  CLI::App app{"Local provider stub"};
  int port = 8089;
  std::string host = "127.0.0.1";
  apr::stub::StubOptions options;
  app.add_option("--port", port, "Listen port");
  app.add_option("--host", host, "Listen address");
  app.add_option("--dataset", options.datasets, "Dataset directory for the answer key (repeatable)")
      ->check(CLI::ExistingDirectory);
  app.add_option("--corrupt-percent", options.corrupt_percent, "Share of answers made wrong")
      ->check(CLI::Range(0, 100));
  app.add_option("--require-key", options.required_key, "Reject requests without this key");
  CLI11_PARSE(app, argc, argv);

  apr::stub::StubServer server(options);
  spdlog::info("stub provider listening on {}:{}", host, port);
  try {
    server.serve_forever(host, port);
  } catch (const std::exception& e) {
    spdlog::error("{}", e.what());
    return 1;
  }
  return 0;
}
