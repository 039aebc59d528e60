// Copyright 2026 The coopsense Authors. All Rights Reserved.
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

#include <stdexcept>
#include <string>
#include <utility>

namespace coopsense {

enum class ErrorCode {
  kInvalidArgument,
  kDegenerateWindow,
  kUnlocalizable,
  kInfeasibleEpsilon,
  kRestorationRequired,
  kNumericalFailure,
  kNonConvergence,
  kConfig,
  kIo,
};

// Base exception for every library failure. The code lets callers (the CLI,
// the Monte Carlo harness) classify failures without string matching.
class Error : public std::runtime_error {
 public:
  Error(ErrorCode code, const std::string& what)
      : std::runtime_error(what), code_(code) {}

  ErrorCode code() const noexcept { return code_; }

 private:
  ErrorCode code_;
};

inline const char* to_string(ErrorCode code) {
  switch (code) {
    case ErrorCode::kInvalidArgument: return "invalid-argument";
    case ErrorCode::kDegenerateWindow: return "degenerate-window";
    case ErrorCode::kUnlocalizable: return "unlocalizable";
    case ErrorCode::kInfeasibleEpsilon: return "infeasible-epsilon";
    case ErrorCode::kRestorationRequired: return "restoration-required";
    case ErrorCode::kNumericalFailure: return "numerical-failure";
    case ErrorCode::kNonConvergence: return "non-convergence";
    case ErrorCode::kConfig: return "config";
    case ErrorCode::kIo: return "io";
  }
  return "unknown";
}

[[noreturn]] inline void fail(ErrorCode code, const std::string& what) {
  throw Error(code, what);
}

inline void require(bool ok, const std::string& what) {
  if (!ok) fail(ErrorCode::kInvalidArgument, what);
}

}  // namespace coopsense
