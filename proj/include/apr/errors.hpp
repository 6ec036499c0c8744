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
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

namespace apr {

/// Base class for every error raised by the harness.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// A domain value was constructed with a violated invariant.
class ValidationError : public Error {
 public:
  ValidationError(std::string field, const std::string& what)
      : Error(field + ": " + what), field_(std::move(field)) {}
  const std::string& field() const noexcept { return field_; }

 private:
  std::string field_;
};

class ParseError : public Error {
 public:
  ParseError(std::string source, std::size_t line, const std::string& what)
      : Error(source + ":" + std::to_string(line) + ": " + what),
        source_(std::move(source)),
        line_(line) {}
  const std::string& source() const noexcept { return source_; }
  std::size_t line() const noexcept { return line_; }

 private:
  std::string source_;
  std::size_t line_;
};

class MissingImage : public Error {
 public:
  MissingImage(std::string instance_id, std::string path)
      : Error("instance '" + instance_id + "' references missing image " + path),
        instance_id_(std::move(instance_id)),
        path_(std::move(path)) {}
  const std::string& instance_id() const noexcept { return instance_id_; }
  const std::string& path() const noexcept { return path_; }

 private:
  std::string instance_id_;
  std::string path_;
};

class DuplicateInstanceId : public Error {
 public:
  explicit DuplicateInstanceId(std::string id)
      : Error("duplicate instance_id '" + id + "'"), id_(std::move(id)) {}
  const std::string& id() const noexcept { return id_; }

 private:
  std::string id_;
};

class EmptyTrain : public Error {
 public:
  using Error::Error;
};

class InsufficientTrain : public Error {
 public:
  using Error::Error;
};

/// An operation was called with arguments outside its documented domain.
class PreconditionError : public Error {
 public:
  using Error::Error;
};

class EmptyField : public Error {
 public:
  explicit EmptyField(std::string field)
      : Error("empty field '" + field + "'"), field_(std::move(field)) {}
  const std::string& field() const noexcept { return field_; }

 private:
  std::string field_;
};

class InvalidGeneratedPrompt : public Error {
 public:
  explicit InvalidGeneratedPrompt(std::vector<std::string> violations)
      : Error(join(violations)), violations_(std::move(violations)) {}
  const std::vector<std::string>& violations() const noexcept { return violations_; }

 private:
  static std::string join(const std::vector<std::string>& v) {
    std::string out = "generated prompt rejected:";
    for (const auto& s : v) out += " [" + s + "]";
    return out;
  }
  std::vector<std::string> violations_;
};

class ProviderFailure : public Error {
 public:
  using Error::Error;
};

class AuthMissing : public Error {
 public:
  explicit AuthMissing(std::string variable)
      : Error("auth secret missing: environment variable " + variable + " is not set"),
        variable_(std::move(variable)) {}
  const std::string& variable() const noexcept { return variable_; }

 private:
  std::string variable_;
};

class DeserializeError : public Error {
 public:
  using Error::Error;
};

class ImageLoadFailure : public Error {
 public:
  ImageLoadFailure(std::string path, const std::string& cause)
      : Error("cannot load image " + path + ": " + cause), path_(std::move(path)) {}
  const std::string& path() const noexcept { return path_; }

 private:
  std::string path_;
};

class SkippedPlan : public Error {
 public:
  SkippedPlan() : Error("cannot assemble a request from a skipped shot plan") {}
};

class EmptyAnswer : public Error {
 public:
  EmptyAnswer() : Error("model answer is empty after trimming") {}
};

class MixedDataset : public Error {
 public:
  using Error::Error;
};

class AllMissing : public Error {
 public:
  AllMissing() : Error("every dataset score is missing") {}
};

class ManifestMismatch : public Error {
 public:
  using Error::Error;
};

class ConfigError : public Error {
 public:
  using Error::Error;
};

}  // namespace apr
