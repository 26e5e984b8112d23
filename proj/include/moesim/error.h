/**
 * Copyright 2026 The moesim Authors
 *
 * Licensed under the Apache License, Version 2.0 (the "License");
 * you may not use this file except in compliance with the License.
 * You may obtain a copy of the License at
 *
 * http://www.apache.org/licenses/LICENSE-2.0
 *
 * Unless required by applicable law or agreed to in writing, software
 * distributed under the License is distributed on an "AS IS" BASIS,
 * WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
 * See the License for the specific language governing permissions and
 * limitations under the License.
 */

#ifndef MOESIM_ERROR_H_
#define MOESIM_ERROR_H_

#include <stdexcept>
#include <string>

namespace moesim {

enum class ErrorKind {
  kInvalidArgument,
  kEmptySpace,
  kInfeasibleChunking,
  kNonDivisible,
  kDeadlockDetected,
  kInfeasible,
  kEmptyWindow,
  kZeroMean,
  kSlotMismatch,
  kParseError,
  kIoError,
};

const char *error_kind_name(ErrorKind kind);

class SimError : public std::runtime_error {
 public:
  SimError(ErrorKind kind, const std::string &message)
      : std::runtime_error(std::string(error_kind_name(kind)) + ": " + message), kind_(kind) {}

  ErrorKind kind() const { return kind_; }

 private:
  ErrorKind kind_;
};

}  // namespace moesim

#endif  // MOESIM_ERROR_H_
