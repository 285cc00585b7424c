// Copyright 2026 The lnseg Authors
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//     http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace lnseg {

enum class Errc {
  MalformedFile,
  SpecMismatch,
  SchemaError,
  RangeError,
  MissingMask,
  LabelError,
  CurationListMissing,
  DuplicateId,
  ShapeMismatch,
  SpecError,
  ShapeError,
  ResourceError,
  NonFiniteLoss,
  InsufficientHistory,
  PartialFailure,
  MissingCheckpoint,
  EmptySet,
  IoError,
  ConfigError,
  StageDependencyError,
};

constexpr std::string_view to_string(Errc code) {
  switch (code) {
    case Errc::MalformedFile: return "MalformedFile";
    case Errc::SpecMismatch: return "SpecMismatch";
    case Errc::SchemaError: return "SchemaError";
    case Errc::RangeError: return "RangeError";
    case Errc::MissingMask: return "MissingMask";
    case Errc::LabelError: return "LabelError";
    case Errc::CurationListMissing: return "CurationListMissing";
    case Errc::DuplicateId: return "DuplicateId";
    case Errc::ShapeMismatch: return "ShapeMismatch";
    case Errc::SpecError: return "SpecError";
    case Errc::ShapeError: return "ShapeError";
    case Errc::ResourceError: return "ResourceError";
    case Errc::NonFiniteLoss: return "NonFiniteLoss";
    case Errc::InsufficientHistory: return "InsufficientHistory";
    case Errc::PartialFailure: return "PartialFailure";
    case Errc::MissingCheckpoint: return "MissingCheckpoint";
    case Errc::EmptySet: return "EmptySet";
    case Errc::IoError: return "IoError";
    case Errc::ConfigError: return "ConfigError";
    case Errc::StageDependencyError: return "StageDependencyError";
  }
  return "Unknown";
}

/// Every failure raised by the library carries one of the codes above so
/// callers (the CLI in particular) can map them onto exit statuses.
class Error : public std::runtime_error {
 public:
  Error(Errc code, const std::string& what)
      : std::runtime_error(std::string(to_string(code)) + ": " + what), code_(code) {}

  Errc code() const noexcept { return code_; }

 private:
  Errc code_;
};

}  // namespace lnseg
