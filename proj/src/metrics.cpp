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

#include "apr/metrics.hpp"

#include <cmath>
#include <cstdio>
#include <set>

#include "apr/text.hpp"

namespace apr::metrics {
namespace {

bool is_ascii_punct(char c) {
  const auto u = static_cast<unsigned char>(c);
  return u < 0x80 && std::ispunct(u);
}

double mean(const std::vector<double>& v) {
  double sum = 0.0;
  for (double x : v) sum += x;
  return sum / static_cast<double>(v.size());
}

}  // namespace

TokenSeq tokenize(std::string_view text) {
  TokenSeq out;
  for (auto& piece : text::split_whitespace(text::case_fold(text::nfc(text)))) {
    std::size_t b = 0;
    std::size_t e = piece.size();
    while (b < e && is_ascii_punct(piece[b])) ++b;
    while (e > b && is_ascii_punct(piece[e - 1])) --e;
    if (b < e) out.emplace_back(piece.substr(b, e - b));
  }
  return out;
}

RougeScore rouge_l_from_tokens(const TokenSeq& candidate, const TokenSeq& reference) {
  const auto lcs = static_cast<double>(lcs_length(candidate, reference));
  RougeScore s;
  s.precision = candidate.empty() ? 0.0 : lcs / static_cast<double>(candidate.size());
  s.recall = reference.empty() ? 0.0 : lcs / static_cast<double>(reference.size());
  // beta = 1
  if (s.precision + s.recall > 0.0) {
    s.f1 = 2.0 * s.precision * s.recall / (s.precision + s.recall);
  }
  return s;
}

RougeScore rouge_l_f1(std::string_view candidate, std::string_view reference) {
  return rouge_l_from_tokens(tokenize(candidate), tokenize(reference));
}

std::string_view to_string(MatchPolicy p) {
  return p == MatchPolicy::Strict ? "strict" : "default";
}

MatchPolicy parse_match_policy(std::string_view s) {
  if (s == "default") return MatchPolicy::Default;
  if (s == "strict") return MatchPolicy::Strict;
  throw ValidationError("match_policy", "unknown value '" + std::string(s) + "'");
}

std::string normalize_answer(std::string_view text, MatchPolicy policy) {
  if (policy == MatchPolicy::Strict) return text::trim(text);
  std::string s = text::case_fold(text::trim(text::nfc(text)));
  if (!s.empty() && s.back() == '.') s.pop_back();
  return s;
}

bool accuracy_match(std::string_view prediction, std::string_view gold, MatchPolicy policy) {
  return normalize_answer(prediction, policy) == normalize_answer(gold, policy);
}

std::optional<double> dataset_score(std::span<const EvaluationRecord> records,
                                    MetricKind metric) {
  if (records.empty()) return std::nullopt;
  const std::string& id = records.front().dataset_id();
  std::size_t scored = 0;
  double total = 0.0;
  for (const auto& r : records) {
    if (r.dataset_id() != id) {
      throw MixedDataset("records from '" + id + "' and '" + r.dataset_id() + "' mixed");
    }
    if (r.status() != RecordStatus::Scored) continue;
    const InstanceScore& s = *r.score();
    if (metric == MetricKind::Accuracy) {
      const bool* hit = std::get_if<bool>(&s);
      if (!hit) throw PreconditionError("accuracy record '" + r.instance_id() + "' has no boolean");
      total += *hit ? 1.0 : 0.0;
    } else {
      const double* f = std::get_if<double>(&s);
      if (!f) throw PreconditionError("ROUGE-L record '" + r.instance_id() + "' has no F1 value");
      total += *f / 100.0;
    }
    ++scored;
  }
  if (scored == 0) return std::nullopt;
  return 100.0 * total / static_cast<double>(scored);
}

ScoreTable aggregate(std::vector<ScoreCell> cells, OverallMode mode) {
  std::set<std::string> seen;
  std::map<MetricKind, std::vector<double>> by_kind;
  std::vector<double> all;
  for (const auto& c : cells) {
    if (!seen.insert(c.dataset_id).second) {
      throw PreconditionError("dataset '" + c.dataset_id + "' appears twice in one column");
    }
    by_kind[c.metric];  // a kind with only missing cells still gets a (missing) group entry
    if (c.score) {
      by_kind[c.metric].push_back(*c.score);
      all.push_back(*c.score);
    }
  }
  if (all.empty()) throw AllMissing();

  std::map<MetricKind, std::optional<double>> groups;
  std::vector<double> group_means;
  for (const auto& [kind, scores] : by_kind) {
    if (scores.empty()) {
      groups[kind] = std::nullopt;
    } else {
      groups[kind] = mean(scores);
      group_means.push_back(*groups[kind]);
    }
  }
  const double overall = mode == OverallMode::GroupMean ? mean(group_means) : mean(all);
  return ScoreTable(std::move(cells), std::move(groups), overall, mode);
}

double round_half_up(double value, int decimals) {
  const double scale = std::pow(10.0, decimals);
  // The epsilon absorbs binary representation error on exact halves such as 45.815.
  return std::floor(value * scale + 0.5 + 1e-7) / scale;
}

std::string render_score(std::optional<double> value) {
  if (!value) return "-";
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%.2f", round_half_up(*value, 2));
  return buf;
}

}  // namespace apr::metrics
