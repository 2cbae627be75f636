// Copyright 2026 The Unpose Authors
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

#include <cstdint>
#include <stdexcept>
#include <string>
#include <string_view>

namespace unpose {

enum class ErrorKind {
  kParse,
  kValidation,
  kPrecondition,
  kDimensionMismatch,
  kNonFinite,
  kDivergence,
  kCorruptFile,
  kVersionMismatch,
  kFingerprintMismatch,
  kIo,
};

inline std::string_view to_string(ErrorKind kind) {
  switch (kind) {
    case ErrorKind::kParse: return "parse error";
    case ErrorKind::kValidation: return "validation error";
    case ErrorKind::kPrecondition: return "precondition violated";
    case ErrorKind::kDimensionMismatch: return "dimension mismatch";
    case ErrorKind::kNonFinite: return "non-finite value";
    case ErrorKind::kDivergence: return "training diverged";
    case ErrorKind::kCorruptFile: return "corrupt file";
    case ErrorKind::kVersionMismatch: return "version mismatch";
    case ErrorKind::kFingerprintMismatch: return "fingerprint mismatch";
    case ErrorKind::kIo: return "i/o error";
  }
  return "error";
}

/// Every failure raised by the library carries a kind so callers (and the
/// CLI exit-code mapping) can distinguish them without parsing messages.
class Error : public std::runtime_error {
 public:
  Error(ErrorKind kind, const std::string& message)
      : std::runtime_error(message), kind_(kind) {}

  ErrorKind kind() const noexcept { return kind_; }

 private:
  ErrorKind kind_;
};

/// Raised when a pipeline stage fails; wraps the underlying error with the
/// stage name.
class StageError : public Error {
 public:
  StageError(std::string stage, const Error& cause)
      : Error(cause.kind(), stage + ": " + cause.what()),
        stage_(std::move(stage)) {}

  const std::string& stage() const noexcept { return stage_; }

 private:
  std::string stage_;
};

namespace detail {

// 64-bit FNV-1a.
class Fnv1a {
 public:
  void update(const void* data, std::size_t size) {
    const auto* bytes = static_cast<const unsigned char*>(data);
    for (std::size_t i = 0; i < size; ++i) {
      state_ ^= bytes[i];
      state_ *= 0x100000001b3ULL;
    }
  }
  void update(std::string_view s) {
    update(s.data(), s.size());
    const char sep = '\0';
    update(&sep, 1);
  }
  template <typename T>
  void update_pod(const T& value) {
    update(&value, sizeof(T));
  }
  std::uint64_t digest() const { return state_; }

 private:
  std::uint64_t state_ = 0xcbf29ce484222325ULL;
};

}  // namespace detail
}  // namespace unpose
