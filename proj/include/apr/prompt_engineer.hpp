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

// The prompt-generation agent: fills the meta-prompt template, asks a text
// model for a task prompt, checks the prompt's structure and caches the result
// per (dataset, model, meta-prompt digest).

#include <filesystem>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "apr/gateway.hpp"
#include "apr/model.hpp"

namespace apr::prompt {

/// Template bytes shipped with the library (templates/*.txt).
std::string_view meta_prompt_template();
std::string_view example_prompt_docvqa();
std::string_view vision_reasoner_template();

struct QaPair {
  std::string question;
  std::string answer;
  bool operator==(const QaPair&) const = default;
};

struct MetaPromptInputs {
  std::string dataset_paper;
  TaskType task_type = TaskType::OpenGeneration;
  std::string representative_question;
  std::string example_prompt{example_prompt_docvqa()};
  std::vector<QaPair> fewshot;
};

/// "classification", "multiple-choice" or "open generation".
std::string_view task_type_label(TaskType t);

/// Pairs rendered as "Q: {question}\nA: {answer}", separated by one blank line.
std::string render_fewshot(std::span<const QaPair> pairs);

/// The meta-prompt template with every slot token replaced in a single pass.
/// Throws EmptyField naming the first empty input.
std::string assemble_meta_prompt(const MetaPromptInputs& inputs);

enum class Rule {
  MissingExamplesMarker = 1,
  MissingTerminalMarker = 2,
  CodeFence = 3,
  Empty = 4,
  NoPlaceholder = 5,
};

struct Violation {
  Rule rule;
  std::string message;
  /// Advisory violations are reported but do not reject the prompt.
  bool advisory = false;
  bool operator==(const Violation&) const = default;
};

struct ValidationReport {
  std::vector<Violation> violations;

  bool empty() const noexcept { return violations.empty(); }
  bool has(Rule r) const;
  std::vector<Violation> blocking() const;
  bool operator==(const ValidationReport&) const = default;
};

/// Checks every rule and reports all violations, in rule order. Rule 5 accepts
/// any `{name}` placeholder or any of `placeholder_names` appearing verbatim.
ValidationReport validate_generated_prompt(std::string_view prompt_text,
                                           std::span<const std::string> placeholder_names = {});

struct GenerationParams {
  std::string model_id;
  int max_output_tokens = 4096;
  double temperature = 0.0;
};

/// Single-user-message, text-only request for the meta-prompt.
ChatRequest make_generation_request(std::string_view meta_prompt, const GenerationParams& params);

/// Throws ProviderFailure (propagated) or InvalidGeneratedPrompt.
GeneratedPrompt generate_task_prompt(const std::string& dataset_id, const std::string& meta_prompt,
                                     gateway::Gateway& gateway, const GenerationParams& params);

/// <cache_dir>/prompts/<dataset_id>/<model_id>/<digest>.json
std::filesystem::path cache_entry_path(const std::filesystem::path& cache_dir,
                                       const std::string& dataset_id, const std::string& model_id,
                                       const Digest& digest);

/// Cached prompt when one exists for this exact meta-prompt and model,
/// otherwise generates and persists one. Concurrent callers with the same key
/// are serialized by an advisory file lock. A corrupt entry is renamed with a
/// `.bad` suffix and regenerated.
GeneratedPrompt get_or_generate(const std::string& dataset_id, const MetaPromptInputs& inputs,
                                gateway::Gateway& gateway, const GenerationParams& params,
                                const std::filesystem::path& cache_dir);

}  // namespace apr::prompt
