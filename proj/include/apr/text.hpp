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

#include <cstddef>
#include <string>
#include <string_view>
#include <vector>

// Unicode helpers over UTF-8 strings. nfc() and case_fold() replace invalid
// UTF-8 sequences with U+FFFD; the splitting helpers pass bytes through.
namespace apr::text {

std::string nfc(std::string_view utf8);
/// Full Unicode case folding.
std::string case_fold(std::string_view utf8);
/// Strips leading and trailing Unicode white space.
std::string trim(std::string_view utf8);
/// Splits on runs of Unicode white space; never yields empty pieces.
std::vector<std::string> split_whitespace(std::string_view utf8);
std::size_t code_point_count(std::string_view utf8);

}  // namespace apr::text
