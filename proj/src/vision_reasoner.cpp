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

#include "apr/vision_reasoner.hpp"

#include <fstream>
#include <iterator>

#include "apr/prompt_engineer.hpp"
#include "apr/text.hpp"

namespace apr::reasoner {
namespace {

constexpr std::string_view kPromptSlot = "<PROMPT GENERATED FROM PROMPT ENGINENER>";
constexpr std::string_view kExamplesSlot = "<FEW_SHOT_EXAMPLES>";
constexpr std::string_view kInstanceSlot = "<test instance>";
constexpr std::string_view kNumExamples = "{num_examples_text}";

void replace_all(std::string& s, std::string_view from, std::string_view to) {
  std::size_t pos = 0;
  while ((pos = s.find(from, pos)) != std::string::npos) {
    s.replace(pos, from.size(), to);
    pos += to.size();
  }
}

struct TemplateSections {
  std::string_view head;    // before the examples slot
  std::string_view middle;  // between the examples and instance slots
  std::string_view tail;    // after the instance slot
};

TemplateSections split_template() {
  const std::string_view tpl = prompt::vision_reasoner_template();
  const std::size_t ex = tpl.find(kExamplesSlot);
  const std::size_t inst = tpl.find(kInstanceSlot);
  if (ex == std::string_view::npos || inst == std::string_view::npos || inst < ex) {
    throw Error("reasoner template is missing its example or instance slot");
  }
  return {tpl.substr(0, ex), tpl.substr(ex + kExamplesSlot.size(), inst - ex - kExamplesSlot.size()),
          tpl.substr(inst + kInstanceSlot.size())};
}

void append_images(std::vector<Part>& parts, const TaskInstance& inst,
                   const std::filesystem::path& image_root) {
  for (const auto& ref : inst.image_refs()) parts.emplace_back(load_image(image_root / ref));
}

}  // namespace

Budget::Budget(int max_images, int max_prompt_chars)
    : max_images_(max_images), max_prompt_chars_(max_prompt_chars) {
  if (max_images_ < 1) throw ValidationError("max_images", "must be >= 1");
  if (max_prompt_chars_ < 1) throw ValidationError("max_prompt_chars", "must be >= 1");
}

std::string render_instance_text(const TaskInstance& instance) {
  std::string out = "Question: " + instance.question();
  if (instance.choices()) {
    out += "\nChoices:";
    for (const auto& c : *instance.choices()) out += "\n" + c;
  }
  return out;
}

std::string render_exemplar_text(const Exemplar& exemplar) {
  return render_instance_text(exemplar.instance) + "\nAnswer: " + exemplar.answer_text + "\n";
}

ShotPlan plan_shots(const TaskInstance& instance, std::span<const Exemplar> exemplars,
                    int requested_shots, const Budget& budget, std::size_t fixed_chars) {
  if (requested_shots < 0) throw PreconditionError("requested_shots must be >= 0");
  if (static_cast<std::size_t>(requested_shots) > exemplars.size()) {
    throw PreconditionError("requested " + std::to_string(requested_shots) + " shots but only " +
                            std::to_string(exemplars.size()) + " exemplars are available");
  }
  ShotPlan plan;
  const int instance_images = static_cast<int>(instance.image_refs().size());
  if (instance_images > budget.max_images()) {
    plan.skipped = true;
    plan.total_images = instance_images;
    return plan;
  }
  plan.total_images = instance_images;
  plan.total_chars = fixed_chars + text::code_point_count(render_instance_text(instance));
  for (int k = 0; k < requested_shots; ++k) {
    const Exemplar& ex = exemplars[static_cast<std::size_t>(k)];
    const int images = plan.total_images + static_cast<int>(ex.instance.image_refs().size());
    const std::size_t chars = plan.total_chars + text::code_point_count(render_exemplar_text(ex));
    if (images > budget.max_images() || chars > static_cast<std::size_t>(budget.max_prompt_chars())) {
      break;
    }
    plan.total_images = images;
    plan.total_chars = chars;
    plan.exemplars.push_back(ex);
  }
  plan.shots_used = static_cast<int>(plan.exemplars.size());
  return plan;
}

std::string num_examples_text(int n) {
  return std::to_string(n) + (n == 1 ? " example" : " examples");
}

ImagePart load_image(const std::filesystem::path& path) {
  const auto media = media_type_for_path(path.string());
  if (!media) throw ImageLoadFailure(path.string(), "unsupported file extension");
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ImageLoadFailure(path.string(), "cannot open file");
  std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(in)),
                                  std::istreambuf_iterator<char>());
  if (in.bad()) throw ImageLoadFailure(path.string(), "read error");
  if (bytes.empty()) throw ImageLoadFailure(path.string(), "file is empty");
  return ImagePart{std::move(bytes), *media};
}

ChatRequest assemble_reasoner_request(const GeneratedPrompt& prompt, const ShotPlan& plan,
                                      const TaskInstance& instance, const DecodingParams& params,
                                      const std::filesystem::path& image_root) {
  if (plan.skipped) throw SkippedPlan();
  const TemplateSections tpl = split_template();

  std::string head(tpl.head);
  replace_all(head, kPromptSlot, prompt.prompt_text());
  replace_all(head, kNumExamples, num_examples_text(plan.shots_used));

  std::vector<Part> parts;
  parts.emplace_back(TextPart{std::move(head)});
  for (const auto& ex : plan.exemplars) {
    append_images(parts, ex.instance, image_root);
    parts.emplace_back(TextPart{render_exemplar_text(ex)});
  }
  parts.emplace_back(TextPart{std::string(tpl.middle)});
  append_images(parts, instance, image_root);
  parts.emplace_back(TextPart{render_instance_text(instance) + std::string(tpl.tail)});

  return ChatRequest({Message{Role::User, std::move(parts)}}, params.model_id,
                     params.max_output_tokens, params.temperature);
}

ModelResponse infer(gateway::Gateway& gateway, const ChatRequest& request) {
  return gateway.complete(request);
}

std::string parse_answer(std::string_view raw, const TaskSpec& spec,
                         const std::optional<std::vector<std::string>>& choices,
                         metrics::MatchPolicy policy) {
  std::string trimmed = text::trim(raw);
  if (trimmed.empty()) throw EmptyAnswer();
  if (spec.task_type() == TaskType::MultipleChoice && choices) {
    for (const auto& c : *choices) {
      if (metrics::accuracy_match(trimmed, c, policy)) return c;
    }
    if (policy == metrics::MatchPolicy::Default) {
      // Strip the whole run of trailing periods.
      while (!trimmed.empty() && trimmed.back() == '.') {
        trimmed.pop_back();
        trimmed = text::trim(trimmed);
      }
      if (trimmed.empty()) throw EmptyAnswer();
      for (const auto& c : *choices) {
        if (metrics::accuracy_match(trimmed, c, policy)) return c;
      }
    }
  }
  return trimmed;
}

}  // namespace apr::reasoner
