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

#include <atomic>
#include <filesystem>
#include <fstream>
#include <functional>
#include <mutex>
#include <random>
#include <sstream>
#include <string>
#include <vector>

#include <unistd.h>

#include "apr/gateway.hpp"
#include "apr/model.hpp"

namespace apr::testing {

namespace fs = std::filesystem;

inline fs::path source_dir() { return fs::path(APR_TEST_SOURCE_DIR); }
inline fs::path fixtures_dir() { return source_dir() / "fixtures"; }

class TempDir {
 public:
  TempDir() {
    static std::atomic<int> counter{0};
    std::random_device rd;
    path_ = fs::temp_directory_path() /
            ("apr-test-" + std::to_string(::getpid()) + "-" + std::to_string(counter++) + "-" +
             std::to_string(rd() % 100000));
    fs::create_directories(path_);
  }
  ~TempDir() {
    std::error_code ec;
    fs::remove_all(path_, ec);
  }
  TempDir(const TempDir&) = delete;
  TempDir& operator=(const TempDir&) = delete;
  const fs::path& path() const { return path_; }
  fs::path operator/(const std::string& s) const { return path_ / s; }

 private:
  fs::path path_;
};

inline std::string read_file(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

inline void write_file(const fs::path& p, const std::string& content) {
  fs::create_directories(p.parent_path());
  std::ofstream out(p, std::ios::binary);
  out << content;
}

/// Some bytes with a PNG signature; enough for the harness, which never decodes.
inline std::string fake_png(int seed) {
  std::string bytes = "\x89PNG\r\n\x1a\n";
  bytes += "img-" + std::to_string(seed);
  return bytes;
}

struct SyntheticDataset {
  std::string dataset_id = "synth";
  std::string task_type = "multiple_choice";
  std::string metric = "accuracy";
  int max_shots = 3;
  int train = 12;
  int test = 4;
  int images_per_instance = 1;
  bool exemplars_available = true;
};

/// Writes a dataset directory with one image per reference. Multiple-choice
/// instances answer "B" out of {A, B, C}; open ones answer "answer <n>".
inline fs::path write_dataset(const fs::path& dir, const SyntheticDataset& d) {
  Json spec = {{"dataset_id", d.dataset_id},
               {"task_type", d.task_type},
               {"metric", d.metric},
               {"max_shots", d.max_shots},
               {"images_per_instance_hint", d.images_per_instance},
               {"description_doc", "description.md"},
               {"exemplars_available", d.exemplars_available}};
  write_file(dir / "spec.json", spec.dump(2));
  write_file(dir / "description.md", "# " + d.dataset_id + "\n\nA synthetic dataset.\n");
  auto rows = [&](const std::string& prefix, int count, int offset) {
    std::string out;
    for (int i = 0; i < count; ++i) {
      const int n = offset + i;
      Json refs = Json::array();
      for (int k = 0; k < d.images_per_instance; ++k) {
        const std::string ref = prefix + std::to_string(n) + "_" + std::to_string(k) + ".png";
        write_file(dir / "images" / ref, fake_png(n * 10 + k));
        refs.push_back(ref);
      }
      Json row = {{"instance_id", prefix + std::to_string(n)},
                  {"image_refs", refs},
                  {"question", "Question number " + std::to_string(n) + " of " + d.dataset_id + "?"}};
      if (d.task_type == "multiple_choice") {
        row["choices"] = {"A", "B", "C"};
        row["gold_answer"] = "B";
      } else {
        row["gold_answer"] = "answer " + std::to_string(n);
      }
      out += row.dump() + "\n";
    }
    return out;
  };
  write_file(dir / "train.jsonl", rows("tr", d.train, 0));
  write_file(dir / "test.jsonl", rows("te", d.test, d.train));
  return dir;
}

/// In-process gateway: prompt-generation requests get a valid task prompt,
/// other requests are answered by `answerer` (default "B").
class FakeGateway : public gateway::Gateway {
 public:
  std::function<ModelResponse(const ChatRequest&)> answerer;

  ModelResponse complete(const ChatRequest& request) override {
    ++calls_;
    std::string text;
    for (const auto& m : request.messages()) {
      for (const auto& p : m.parts) {
        if (const auto* t = std::get_if<TextPart>(&p)) text += t->text;
      }
    }
    {
      std::lock_guard lock(mu_);
      requests_.push_back(request);
    }
    if (text.find("You are the PromptEngineer agent") != std::string::npos) {
      ++prompt_calls_;
      return {"Answer the question.\nQuestion: {question}\n### Examples\nQ: x\nA: y\n### Now answer:",
              FinishReason::Complete, Usage{10, 10}, std::chrono::milliseconds(1)};
    }
    if (answerer) return answerer(request);
    return {"B", FinishReason::Complete, Usage{10, 1}, std::chrono::milliseconds(1)};
  }

  std::size_t calls() const { return calls_.load(); }
  std::size_t prompt_calls() const { return prompt_calls_.load(); }
  std::size_t reasoner_calls() const { return calls_.load() - prompt_calls_.load(); }
  std::vector<ChatRequest> requests() const {
    std::lock_guard lock(mu_);
    return requests_;
  }

 private:
  std::atomic<std::size_t> calls_{0};
  std::atomic<std::size_t> prompt_calls_{0};
  mutable std::mutex mu_;
  std::vector<ChatRequest> requests_;
};

/// Last text part of the request's last message.
inline std::string final_text(const ChatRequest& request) {
  const auto& parts = request.messages().back().parts;
  for (auto it = parts.rbegin(); it != parts.rend(); ++it) {
    if (const auto* t = std::get_if<TextPart>(&*it)) return t->text;
  }
  return {};
}

}  // namespace apr::testing
