// Copyright 2026 The bayesspec Authors.
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//      http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

#pragma once

#include <stdexcept>
#include <string>

namespace bayesspec {

/// Coarse error category. The CLI maps these onto its exit codes.
enum class ErrorKind {
  kConfig,    // bad parameters or usage
  kData,      // malformed or unusable input data
  kInternal,  // numerical failure or broken invariant
};

class Error : public std::runtime_error {
 public:
  Error(ErrorKind kind, const std::string& what)
      : std::runtime_error(what), kind_(kind) {}

  ErrorKind kind() const noexcept { return kind_; }

 private:
  ErrorKind kind_;
};

namespace detail {

template <ErrorKind Kind>
class TypedError : public Error {
 public:
  explicit TypedError(const std::string& what) : Error(Kind, what) {}
};

}  // namespace detail

// gpa
struct NoAcceptingRun : detail::TypedError<ErrorKind::kData> {
  using TypedError::TypedError;
};
struct SamplingBudgetExceeded : detail::TypedError<ErrorKind::kData> {
  using TypedError::TypedError;
};
struct EnumerationTruncated : detail::TypedError<ErrorKind::kData> {
  using TypedError::TypedError;
};

// symexec
struct SyntaxError : detail::TypedError<ErrorKind::kData> {
  SyntaxError(const std::string& msg, int line, int column)
      : TypedError(std::to_string(line) + ":" + std::to_string(column) + ": " +
                   msg),
        line(line),
        column(column) {}
  int line;
  int column;
};
struct UndeclaredVariable : detail::TypedError<ErrorKind::kData> {
  using TypedError::TypedError;
};
struct NoAcceptingState : detail::TypedError<ErrorKind::kData> {
  using TypedError::TypedError;
};
struct UnrollBoundZero : detail::TypedError<ErrorKind::kConfig> {
  using TypedError::TypedError;
};

// topics
struct EmptyCorpus : detail::TypedError<ErrorKind::kData> {
  using TypedError::TypedError;
};
struct EmptyDocument : detail::TypedError<ErrorKind::kData> {
  using TypedError::TypedError;
};
struct UnknownFeatures : detail::TypedError<ErrorKind::kData> {
  using TypedError::TypedError;
};

// seqmodel
struct DimensionMismatch : detail::TypedError<ErrorKind::kInternal> {
  using TypedError::TypedError;
};
struct SymbolOutOfVocab : detail::TypedError<ErrorKind::kData> {
  using TypedError::TypedError;
};
struct NonFiniteLoss : detail::TypedError<ErrorKind::kInternal> {
  using TypedError::TypedError;
};

// scorer
struct DegenerateEstimate : detail::TypedError<ErrorKind::kInternal> {
  using TypedError::TypedError;
};

// corpus
struct NoMutableCall : detail::TypedError<ErrorKind::kData> {
  using TypedError::TypedError;
};
struct TemplateParseError : detail::TypedError<ErrorKind::kData> {
  using TypedError::TypedError;
};

struct ConfigError : detail::TypedError<ErrorKind::kConfig> {
  using TypedError::TypedError;
};
struct DataError : detail::TypedError<ErrorKind::kData> {
  using TypedError::TypedError;
};

}  // namespace bayesspec
