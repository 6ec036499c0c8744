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

// The answering agent: fits exemplars into the image/character budget,
// builds one interleaved user message following the reasoner template,
// calls the model and normalizes its answer.

#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "apr/gateway.hpp"
#include "apr/metrics.hpp"
#include "apr/model.hpp"

namespace apr::reasoner {

class Budget {
 public:
  static constexpr int kDefaultMaxImages = 20;
  static constexpr int kDefaultMaxPromptChars = 120'000;

  Budget(int max_images = kDefaultMaxImages, int max_prompt_chars = kDefaultMaxPromptChars);

  int max_images() const noexcept { return max_images_; }
  int max_prompt_chars() const noexcept { return max_prompt_chars_; }
  bool operator==(const Budget&) const = default;

 private:
  int max_images_;
  int max_prompt_chars_;
};

struct ShotPlan {
  int shots_used = 0;
  std::vector<Exemplar> exemplars;
  bool skipped = false;
  /// Instance images plus exemplar images. For a skipped plan, the instance's
  /// own image count.
  int total_images = 0;
  /// Code points of the fixed text plus instance and exemplar text parts.
  std::size_t total_chars = 0;
};

/// "Question: ...", followed by "Choices:" and one choice per line when present.
std::string render_instance_text(const TaskInstance& instance);
/// Instance text followed by "Answer: <answer_text>".
std::string render_exemplar_text(const Exemplar& exemplar);

/// Keeps the longest prefix of `exemplars` (at most `requested_shots`) whose
/// image and character totals fit `budget`. Skips only when the instance alone
/// exceeds max_images. `fixed_chars` accounts for prompt text outside the
/// instance and exemplar parts. Throws PreconditionError if requested_shots is
/// negative or exceeds |exemplars|.
ShotPlan plan_shots(const TaskInstance& instance, std::span<const Exemplar> exemplars,
                    int requested_shots, const Budget& budget, std::size_t fixed_chars = 0);

/// "0 examples", "1 example", "3 examples".
std::string num_examples_text(int n);

struct DecodingParams {
  std::string model_id;
  int max_output_tokens = 1024;
  double temperature = 0.0;
};

/// Reads an image file as an image part tagged by its extension. Throws
/// ImageLoadFailure.
ImagePart load_image(const std::filesystem::path& path);

/// One user message: template head with the generated prompt and
/// {num_examples_text} filled, each exemplar's images then its text, the
/// "Test instance" divider, then the instance's images and text. Image refs
/// resolve against `image_root`. Throws SkippedPlan or ImageLoadFailure.
ChatRequest assemble_reasoner_request(const GeneratedPrompt& prompt, const ShotPlan& plan,
                                      const TaskInstance& instance, const DecodingParams& params,
                                      const std::filesystem::path& image_root);

/// Forwards to the gateway unchanged; ProviderFailure propagates.
ModelResponse infer(gateway::Gateway& gateway, const ChatRequest& request);

/// Trims the raw answer. For multiple-choice tasks returns the first choice
/// that matches under `policy`, verbatim; an unmatched answer loses its
/// trailing periods under the default policy. Other tasks get the trimmed
/// text. Throws EmptyAnswer when nothing remains.
std::string parse_answer(std::string_view raw, const TaskSpec& spec,
                         const std::optional<std::vector<std::string>>& choices,
                         metrics::MatchPolicy policy = metrics::MatchPolicy::Default);

}  // namespace apr::reasoner
