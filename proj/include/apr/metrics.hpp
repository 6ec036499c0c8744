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

// Accuracy and ROUGE-L F1 scoring plus the per-dataset / per-group / overall
// aggregation used by the report tables.

#include <algorithm>
#include <cstddef>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "apr/model.hpp"

namespace apr::metrics {

using TokenSeq = std::vector<std::string>;

/// NFC, case-fold, split on Unicode white space, strip leading/trailing ASCII
/// punctuation from each token, drop tokens that become empty.
TokenSeq tokenize(std::string_view text);

/// Length of the longest common subsequence. O(|a|*|b|) time and
/// O(min(|a|, |b|)) space.
template <class T>
std::size_t lcs_length(std::span<const T> a, std::span<const T> b) {
  if (a.size() < b.size()) std::swap(a, b);
  // row[j] holds the LCS of the processed prefix of `a` with b[0, j).
  std::vector<std::size_t> row(b.size() + 1, 0);
  for (const auto& x : a) {
    std::size_t diag = 0;
    for (std::size_t j = 1; j <= b.size(); ++j) {
      const std::size_t up = row[j];
      row[j] = (x == b[j - 1]) ? diag + 1 : std::max(up, row[j - 1]);
      diag = up;
    }
  }
  return row.back();
}

inline std::size_t lcs_length(const TokenSeq& a, const TokenSeq& b) {
  return lcs_length(std::span<const std::string>(a), std::span<const std::string>(b));
}

/// Precision, recall and F1 in [0, 1].
struct RougeScore {
  double precision = 0.0;
  double recall = 0.0;
  double f1 = 0.0;
};

RougeScore rouge_l_from_tokens(const TokenSeq& candidate, const TokenSeq& reference);
RougeScore rouge_l_f1(std::string_view candidate, std::string_view reference);

enum class MatchPolicy {
  Default,  // NFC, trim, case-fold, strip one trailing '.'
  Strict,   // byte equality after trimming
};

std::string_view to_string(MatchPolicy p);
MatchPolicy parse_match_policy(std::string_view s);

std::string normalize_answer(std::string_view text, MatchPolicy policy);
bool accuracy_match(std::string_view prediction, std::string_view gold,
                    MatchPolicy policy = MatchPolicy::Default);

/// Percentage score over the Scored records, or nullopt ("missing") when no
/// record was scored. Throws MixedDataset if records span several datasets.
std::optional<double> dataset_score(std::span<const EvaluationRecord> records, MetricKind metric);

/// Builds a table column. Cell order is preserved. Throws AllMissing when no
/// cell has a score.
ScoreTable aggregate(std::vector<ScoreCell> cells, OverallMode mode = OverallMode::GroupMean);

/// Half-up rounding at report time.
double round_half_up(double value, int decimals = 2);
/// "66.67" style rendering; "-" for a missing value.
std::string render_score(std::optional<double> value);

}  // namespace apr::metrics
