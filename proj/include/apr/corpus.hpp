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

// Dataset ingestion, validation-split carving and fixed exemplar selection.
//
// On-disk layout of one dataset:
//   <dir>/spec.json      TaskSpec
//   <dir>/train.jsonl    one TaskInstance per line
//   <dir>/test.jsonl     one TaskInstance per line
//   <dir>/images/        image files; image_refs are relative to this directory

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "apr/model.hpp"

namespace apr::corpus {

inline constexpr std::uint64_t kDefaultSeed = 42;
/// Validation pool size as a multiple of the test split.
inline constexpr std::size_t kValidationMultiplier = 3;

struct DatasetBundle {
  TaskSpec spec;
  std::vector<TaskInstance> train;
  std::vector<TaskInstance> test;
  std::filesystem::path root;

  std::filesystem::path image_root() const { return root / "images"; }
  std::filesystem::path image_path(const std::string& ref) const { return image_root() / ref; }
  std::filesystem::path description_path() const { return root / spec.description_doc(); }
  /// Instance by id from either partition; nullptr if absent.
  const TaskInstance* find(const std::string& instance_id) const;
};

struct SplitPlan {
  std::vector<std::string> validation_ids;
  /// Seeded permutation of train minus validation; exemplars are its prefix.
  std::vector<std::string> exemplar_ids;
  std::uint64_t seed = kDefaultSeed;
  std::vector<std::string> warnings;

  bool operator==(const SplitPlan&) const = default;
};

Json encode(const SplitPlan& plan);

/// Loads a dataset directory (or the path of its spec.json). Throws
/// ParseError, MissingImage, DuplicateInstanceId or ValidationError.
DatasetBundle load_manifest(const std::filesystem::path& manifest_path);

/// Draws the validation pool from train: min(3 * |test|, |train| - max_shots)
/// ids, uniformly without replacement. Records a warning when train is too
/// small for the full pool. Throws EmptyTrain.
SplitPlan carve_validation_split(const DatasetBundle& bundle, std::uint64_t seed = kDefaultSeed);

/// The first k ids of the plan's exemplar permutation, as exemplars whose
/// answer is the gold answer verbatim. Throws PreconditionError when k exceeds
/// spec.max_shots and InsufficientTrain when the remainder is smaller than k.
std::vector<Exemplar> select_exemplars(const DatasetBundle& bundle, const SplitPlan& split, int k);

/// Instances of `bundle.train` listed in split.validation_ids, in plan order.
std::vector<TaskInstance> validation_instances(const DatasetBundle& bundle, const SplitPlan& split);

/// Uniform integer in [0, bound) from a 64-bit engine output stream, with
/// rejection so the result is unbiased and identical on every platform.
template <class Engine>
std::uint64_t uniform_below(Engine& engine, std::uint64_t bound) {
  const std::uint64_t threshold = (0 - bound) % bound;
  for (;;) {
    const std::uint64_t r = engine();
    if (r >= threshold) return r % bound;
  }
}

}  // namespace apr::corpus
