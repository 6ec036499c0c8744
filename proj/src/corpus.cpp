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

#include "apr/corpus.hpp"

#include <spdlog/spdlog.h>

#include <fstream>
#include <random>
#include <set>
#include <sstream>
#include <unordered_map>

namespace apr::corpus {
namespace fs = std::filesystem;
namespace {

// Separate stream for the exemplar permutation so it does not depend on how
// many draws the validation sample consumed.
constexpr std::uint64_t kExemplarStreamSalt = 0x9e3779b97f4a7c15ULL;

std::string read_file(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  if (!in) throw ParseError(p.string(), 0, "cannot open file");
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

bool escapes_root(const std::string& ref) {
  const fs::path p = fs::path(ref).lexically_normal();
  if (p.is_absolute()) return true;
  for (const auto& part : p) {
    if (part == "..") return true;
  }
  return false;
}

std::vector<TaskInstance> load_instances(const fs::path& file, const TaskSpec& spec,
                                         const fs::path& image_root,
                                         std::set<std::string>& seen_ids) {
  std::ifstream in(file);
  if (!in) throw ParseError(file.string(), 0, "cannot open file");
  std::vector<TaskInstance> out;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    std::optional<TaskInstance> inst;
    try {
      inst = from_line<TaskInstance>(line);
    } catch (const ValidationError& e) {
      throw ParseError(file.string(), line_no, e.what());
    }
    const bool has_choices = inst->choices().has_value();
    if (has_choices != (spec.task_type() == TaskType::MultipleChoice)) {
      throw ParseError(file.string(), line_no,
                       "choices must be present exactly for multiple_choice tasks");
    }
    if (!seen_ids.insert(inst->instance_id()).second) {
      throw DuplicateInstanceId(inst->instance_id());
    }
    for (const auto& ref : inst->image_refs()) {
      const fs::path p = image_root / ref;
      if (escapes_root(ref) || !fs::is_regular_file(p)) {
        throw MissingImage(inst->instance_id(), p.string());
      }
      if (!media_type_for_path(ref)) {
        throw ParseError(file.string(), line_no, "unsupported image type: " + ref);
      }
    }
    out.push_back(std::move(*inst));
  }
  return out;
}

// Fisher-Yates over the first `count` positions.
void partial_shuffle(std::vector<std::size_t>& idx, std::size_t count, std::mt19937_64& rng) {
  for (std::size_t i = 0; i < count && i + 1 < idx.size(); ++i) {
    const std::size_t j = i + uniform_below(rng, idx.size() - i);
    std::swap(idx[i], idx[j]);
  }
}

}  // namespace

const TaskInstance* DatasetBundle::find(const std::string& instance_id) const {
  for (const auto* part : {&train, &test}) {
    for (const auto& inst : *part) {
      if (inst.instance_id() == instance_id) return &inst;
    }
  }
  return nullptr;
}

Json encode(const SplitPlan& plan) {
  return {{"validation_ids", plan.validation_ids},
          {"exemplar_ids", plan.exemplar_ids},
          {"seed", plan.seed},
          {"warnings", plan.warnings}};
}

DatasetBundle load_manifest(const fs::path& manifest_path) {
  const fs::path root = manifest_path.filename() == "spec.json" ? manifest_path.parent_path()
                                                                : manifest_path;
  const fs::path spec_file = root / "spec.json";
  Json spec_json;
  try {
    spec_json = Json::parse(read_file(spec_file));
  } catch (const Json::parse_error& e) {
    throw ParseError(spec_file.string(), 1, e.what());
  }
  std::optional<TaskSpec> spec;
  try {
    spec = decode<TaskSpec>(spec_json);
  } catch (const ValidationError& e) {
    throw ParseError(spec_file.string(), 1, e.what());
  }
  if (!fs::is_regular_file(root / spec->description_doc())) {
    throw ValidationError("description_doc",
                          "file not found: " + (root / spec->description_doc()).string());
  }

  std::set<std::string> seen;
  const fs::path images = root / "images";
  auto train = load_instances(root / "train.jsonl", *spec, images, seen);
  auto test = load_instances(root / "test.jsonl", *spec, images, seen);
  return DatasetBundle{std::move(*spec), std::move(train), std::move(test), root};
}

SplitPlan carve_validation_split(const DatasetBundle& bundle, std::uint64_t seed) {
  const std::size_t n = bundle.train.size();
  if (n == 0) throw EmptyTrain("dataset '" + bundle.spec.dataset_id() + "' has no train instances");

  const std::size_t reserve =
      bundle.spec.exemplars_available() ? static_cast<std::size_t>(bundle.spec.max_shots()) : 0;
  const std::size_t wanted = kValidationMultiplier * bundle.test.size();
  const std::size_t available = n > reserve ? n - reserve : 0;
  const std::size_t size = std::min(wanted, available);

  SplitPlan plan;
  plan.seed = seed;
  if (size < wanted) {
    plan.warnings.push_back("dataset '" + bundle.spec.dataset_id() + "': train has " +
                            std::to_string(n) + " instances; validation pool reduced from " +
                            std::to_string(wanted) + " to " + std::to_string(size));
    spdlog::warn(plan.warnings.back());
  }

  std::vector<std::size_t> idx(n);
  for (std::size_t i = 0; i < n; ++i) idx[i] = i;
  std::mt19937_64 rng(seed);
  partial_shuffle(idx, size, rng);
  for (std::size_t i = 0; i < size; ++i) {
    plan.validation_ids.push_back(bundle.train[idx[i]].instance_id());
  }

  // The remainder in file order, then permuted on an independent stream.
  std::vector<bool> taken(n, false);
  for (std::size_t i = 0; i < size; ++i) taken[idx[i]] = true;
  std::vector<std::size_t> rest;
  for (std::size_t i = 0; i < n; ++i) {
    if (!taken[i]) rest.push_back(i);
  }
  std::mt19937_64 ex_rng(seed ^ kExemplarStreamSalt);
  partial_shuffle(rest, rest.size(), ex_rng);
  for (std::size_t i : rest) plan.exemplar_ids.push_back(bundle.train[i].instance_id());
  return plan;
}

std::vector<Exemplar> select_exemplars(const DatasetBundle& bundle, const SplitPlan& split, int k) {
  if (k < 0) throw PreconditionError("k must be >= 0");
  if (k > bundle.spec.max_shots()) {
    throw PreconditionError("k=" + std::to_string(k) + " exceeds max_shots=" +
                            std::to_string(bundle.spec.max_shots()) + " for '" +
                            bundle.spec.dataset_id() + "'");
  }
  if (k > 0 && !bundle.spec.exemplars_available()) {
    throw PreconditionError("dataset '" + bundle.spec.dataset_id() + "' has no usable exemplars");
  }
  const auto count = static_cast<std::size_t>(k);
  if (split.exemplar_ids.size() < count) {
    throw InsufficientTrain("need " + std::to_string(k) + " exemplars but only " +
                            std::to_string(split.exemplar_ids.size()) + " train instances remain");
  }
  std::unordered_map<std::string, const TaskInstance*> by_id;
  for (const auto& inst : bundle.train) by_id.emplace(inst.instance_id(), &inst);

  std::vector<Exemplar> out;
  out.reserve(count);
  for (std::size_t i = 0; i < count; ++i) {
    auto it = by_id.find(split.exemplar_ids[i]);
    if (it == by_id.end()) {
      throw PreconditionError("split plan references unknown train id '" + split.exemplar_ids[i] + "'");
    }
    out.emplace_back(*it->second);
  }
  return out;
}

std::vector<TaskInstance> validation_instances(const DatasetBundle& bundle, const SplitPlan& split) {
  std::unordered_map<std::string, const TaskInstance*> by_id;
  for (const auto& inst : bundle.train) by_id.emplace(inst.instance_id(), &inst);
  std::vector<TaskInstance> out;
  out.reserve(split.validation_ids.size());
  for (const auto& id : split.validation_ids) {
    auto it = by_id.find(id);
    if (it == by_id.end()) throw PreconditionError("split plan references unknown train id '" + id + "'");
    out.push_back(*it->second);
  }
  return out;
}

}  // namespace apr::corpus
