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

// Prompt templates compiled into the library from templates/.

#include <string_view>

namespace apr::embedded {

extern const std::string_view meta_prompt;
extern const std::string_view example_prompt_docvqa;
extern const std::string_view vision_reasoner;

}  // namespace apr::embedded
