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

#include "apr/text.hpp"

#include <unicode/normalizer2.h>
#include <unicode/uchar.h>
#include <unicode/unistr.h>
#include <unicode/utf8.h>

#include "apr/errors.hpp"

namespace apr::text {
namespace {

std::string to_utf8(const icu::UnicodeString& s) {
  std::string out;
  s.toUTF8String(out);
  return out;
}

icu::UnicodeString from_utf8(std::string_view s) {
  return icu::UnicodeString::fromUTF8(icu::StringPiece(s.data(), static_cast<int32_t>(s.size())));
}

// Iterates code points of `s`, calling f(cp, begin, end) with byte offsets.
template <class F>
void for_each_code_point(std::string_view s, F&& f) {
  const auto* p = reinterpret_cast<const uint8_t*>(s.data());
  const auto len = static_cast<int32_t>(s.size());
  int32_t i = 0;
  while (i < len) {
    const int32_t start = i;
    UChar32 c = 0;
    U8_NEXT(p, i, len, c);
    f(c, static_cast<std::size_t>(start), static_cast<std::size_t>(i));
  }
}

bool is_space(UChar32 c) { return c >= 0 && u_isUWhiteSpace(c); }

}  // namespace

std::string nfc(std::string_view utf8) {
  UErrorCode status = U_ZERO_ERROR;
  const icu::Normalizer2* norm = icu::Normalizer2::getNFCInstance(status);
  if (U_FAILURE(status)) throw Error("ICU NFC normalizer unavailable");
  icu::UnicodeString out = norm->normalize(from_utf8(utf8), status);
  if (U_FAILURE(status)) throw Error("ICU NFC normalization failed");
  return to_utf8(out);
}

std::string case_fold(std::string_view utf8) {
  icu::UnicodeString s = from_utf8(utf8);
  s.foldCase(U_FOLD_CASE_DEFAULT);
  return to_utf8(s);
}

std::string trim(std::string_view utf8) {
  std::size_t first = utf8.size();
  std::size_t last = 0;
  for_each_code_point(utf8, [&](UChar32 c, std::size_t b, std::size_t e) {
    if (is_space(c)) return;
    if (first == utf8.size()) first = b;
    last = e;
  });
  if (first == utf8.size()) return {};
  return std::string(utf8.substr(first, last - first));
}

std::vector<std::string> split_whitespace(std::string_view utf8) {
  std::vector<std::string> out;
  std::size_t start = std::string_view::npos;
  for_each_code_point(utf8, [&](UChar32 c, std::size_t b, std::size_t) {
    if (is_space(c)) {
      if (start != std::string_view::npos) out.emplace_back(utf8.substr(start, b - start));
      start = std::string_view::npos;
    } else if (start == std::string_view::npos) {
      start = b;
    }
  });
  if (start != std::string_view::npos) out.emplace_back(utf8.substr(start));
  return out;
}

std::size_t code_point_count(std::string_view utf8) {
  std::size_t n = 0;
  for_each_code_point(utf8, [&](UChar32, std::size_t, std::size_t) { ++n; });
  return n;
}

}  // namespace apr::text
