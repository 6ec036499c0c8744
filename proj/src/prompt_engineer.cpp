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

#include "apr/prompt_engineer.hpp"

#include <fcntl.h>
#include <spdlog/spdlog.h>
#include <sys/file.h>
#include <unistd.h>

#include <array>
#include <fstream>
#include <regex>
#include <sstream>
#include <thread>

#include "embedded.hpp"

namespace apr::prompt {
namespace fs = std::filesystem;
namespace {

struct Slot {
  std::string_view token;
  const std::string* value;
};

// Exclusive flock held for the lifetime of the object.
class FileLock {
 public:
  explicit FileLock(const fs::path& path) {
    fd_ = ::open(path.c_str(), O_RDWR | O_CREAT | O_CLOEXEC, 0644);
    if (fd_ < 0) throw Error("cannot open lock file " + path.string());
    while (::flock(fd_, LOCK_EX) != 0) {
      if (errno != EINTR) {
        ::close(fd_);
        throw Error("cannot lock " + path.string());
      }
    }
  }
  ~FileLock() {
    ::flock(fd_, LOCK_UN);
    ::close(fd_);
  }
  FileLock(const FileLock&) = delete;
  FileLock& operator=(const FileLock&) = delete;

 private:
  int fd_ = -1;
};

std::string sanitize_component(std::string s) {
  for (char& c : s) {
    if (c == '/' || c == '\\') c = '_';
  }
  if (s == "." || s == "..") s = "_";
  return s;
}

void write_atomic(const fs::path& target, const std::string& content) {
  std::ostringstream tid;
  tid << std::this_thread::get_id();
  const fs::path tmp = target.string() + ".tmp." + tid.str();
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    out << content;
    if (!out) throw Error("cannot write " + tmp.string());
  }
  fs::rename(tmp, target);
}

}  // namespace

std::string_view meta_prompt_template() { return embedded::meta_prompt; }
std::string_view example_prompt_docvqa() { return embedded::example_prompt_docvqa; }
std::string_view vision_reasoner_template() { return embedded::vision_reasoner; }

std::string_view task_type_label(TaskType t) {
  switch (t) {
    case TaskType::Classification: return "classification";
    case TaskType::MultipleChoice: return "multiple-choice";
    case TaskType::OpenGeneration: return "open generation";
  }
  return "";
}

std::string render_fewshot(std::span<const QaPair> pairs) {
  std::string out;
  for (std::size_t i = 0; i < pairs.size(); ++i) {
    if (i > 0) out += "\n\n";
    out += "Q: " + pairs[i].question + "\nA: " + pairs[i].answer;
  }
  return out;
}

std::string assemble_meta_prompt(const MetaPromptInputs& inputs) {
  if (inputs.dataset_paper.empty()) throw EmptyField("dataset_paper");
  if (inputs.representative_question.empty()) throw EmptyField("representative_question");
  if (inputs.example_prompt.empty()) throw EmptyField("example_prompt");
  if (inputs.fewshot.empty()) throw EmptyField("fewshot_text");
  for (const auto& qa : inputs.fewshot) {
    if (qa.question.empty() || qa.answer.empty()) throw EmptyField("fewshot_text");
  }

  const std::string task_type(task_type_label(inputs.task_type));
  const std::string fewshot = render_fewshot(inputs.fewshot);
  const std::array<Slot, 5> slots{{
      {"<DATASET_PAPER>", &inputs.dataset_paper},
      {"<TASK_TYPE>", &task_type},
      {"<REPRESENTATIVE_Q>", &inputs.representative_question},
      {"<EXAMPLE_PROMPT>", &inputs.example_prompt},
      {"<FEW_SHOT_EXAMPLES>", &fewshot},
  }};

  // Single left-to-right pass: substituted text is never rescanned, so slot
  // tokens inside input values stay literal.
  const std::string_view tpl = meta_prompt_template();
  std::string out;
  out.reserve(tpl.size() + 4 * (inputs.dataset_paper.size() + fewshot.size()));
  std::size_t pos = 0;
  while (pos < tpl.size()) {
    const std::size_t lt = tpl.find('<', pos);
    if (lt == std::string_view::npos) {
      out.append(tpl.substr(pos));
      break;
    }
    out.append(tpl.substr(pos, lt - pos));
    const Slot* hit = nullptr;
    for (const auto& s : slots) {
      if (tpl.substr(lt).starts_with(s.token)) {
        hit = &s;
        break;
      }
    }
    if (hit) {
      out.append(*hit->value);
      pos = lt + hit->token.size();
    } else {
      out.push_back('<');
      pos = lt + 1;
    }
  }
  return out;
}

bool ValidationReport::has(Rule r) const {
  return std::any_of(violations.begin(), violations.end(),
                     [r](const Violation& v) { return v.rule == r; });
}

std::vector<Violation> ValidationReport::blocking() const {
  std::vector<Violation> out;
  for (const auto& v : violations) {
    if (!v.advisory) out.push_back(v);
  }
  return out;
}

ValidationReport validate_generated_prompt(std::string_view prompt_text,
                                           std::span<const std::string> placeholder_names) {
  ValidationReport report;
  std::string_view trimmed = prompt_text;
  while (!trimmed.empty() && std::isspace(static_cast<unsigned char>(trimmed.back()))) {
    trimmed.remove_suffix(1);
  }
  while (!trimmed.empty() && std::isspace(static_cast<unsigned char>(trimmed.front()))) {
    trimmed.remove_prefix(1);
  }

  if (prompt_text.find("### Examples") == std::string_view::npos) {
    report.violations.push_back({Rule::MissingExamplesMarker, "missing examples marker", false});
  }
  if (!trimmed.ends_with("### Now answer:")) {
    report.violations.push_back({Rule::MissingTerminalMarker, "missing terminal marker", false});
  }
  if (prompt_text.find("```") != std::string_view::npos) {
    report.violations.push_back({Rule::CodeFence, "code fence present", false});
  }
  if (trimmed.empty()) {
    report.violations.push_back({Rule::Empty, "empty prompt", false});
  }
  static const std::regex kPlaceholder(R"(\{[A-Za-z_][A-Za-z0-9_]*\})");
  bool placeholder = std::regex_search(prompt_text.begin(), prompt_text.end(), kPlaceholder);
  for (const auto& name : placeholder_names) {
    if (!name.empty() && prompt_text.find(name) != std::string_view::npos) placeholder = true;
  }
  if (!placeholder) {
    report.violations.push_back({Rule::NoPlaceholder, "no placeholder", true});
  }
  return report;
}

ChatRequest make_generation_request(std::string_view meta_prompt, const GenerationParams& params) {
  return ChatRequest({Message{Role::User, {TextPart{std::string(meta_prompt)}}}}, params.model_id,
                     params.max_output_tokens, params.temperature);
}

GeneratedPrompt generate_task_prompt(const std::string& dataset_id, const std::string& meta_prompt,
                                     gateway::Gateway& gateway, const GenerationParams& params) {
  const ModelResponse response = gateway.complete(make_generation_request(meta_prompt, params));
  if (response.finish_reason != FinishReason::Complete) {
    throw ProviderFailure("prompt generation for '" + dataset_id + "' finished with status " +
                          std::string(to_string(response.finish_reason)));
  }
  const ValidationReport report = validate_generated_prompt(response.text);
  std::vector<std::string> blocking;
  for (const auto& v : report.violations) {
    if (v.advisory) {
      spdlog::warn("generated prompt for '{}': {}", dataset_id, v.message);
    } else {
      blocking.push_back(v.message);
    }
  }
  if (!blocking.empty()) throw InvalidGeneratedPrompt(std::move(blocking));
  return GeneratedPrompt(dataset_id, params.model_id, response.text, Digest::of(meta_prompt),
                         utc_timestamp());
}

fs::path cache_entry_path(const fs::path& cache_dir, const std::string& dataset_id,
                          const std::string& model_id, const Digest& digest) {
  return cache_dir / "prompts" / sanitize_component(dataset_id) / sanitize_component(model_id) /
         (digest.hex() + ".json");
}

GeneratedPrompt get_or_generate(const std::string& dataset_id, const MetaPromptInputs& inputs,
                                gateway::Gateway& gateway, const GenerationParams& params,
                                const fs::path& cache_dir) {
  const std::string meta_prompt = assemble_meta_prompt(inputs);
  const Digest digest = Digest::of(meta_prompt);
  const fs::path entry = cache_entry_path(cache_dir, dataset_id, params.model_id, digest);
  fs::create_directories(entry.parent_path());
  FileLock lock(entry.string() + ".lock");

  if (fs::exists(entry)) {
    try {
      std::ifstream in(entry, std::ios::binary);
      std::ostringstream ss;
      ss << in.rdbuf();
      GeneratedPrompt cached = from_line<GeneratedPrompt>(ss.str());
      if (cached.template_digest() == digest && cached.model_id() == params.model_id &&
          cached.dataset_id() == dataset_id) {
        return cached;
      }
      spdlog::warn("prompt cache entry {} does not match its key; regenerating", entry.string());
    } catch (const ValidationError& e) {
      spdlog::warn("prompt cache entry {} is corrupt ({}); quarantining", entry.string(), e.what());
      fs::rename(entry, entry.string() + ".bad");
    }
  }

  GeneratedPrompt generated = generate_task_prompt(dataset_id, meta_prompt, gateway, params);
  write_atomic(entry, encode(generated).dump() + "\n");
  return generated;
}

}  // namespace apr::prompt
