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

#ifndef MOESIM_CLI_H_
#define MOESIM_CLI_H_

#include <iosfwd>

namespace moesim::cli {

constexpr int kExitOk = 0;
constexpr int kExitInvalid = 1;  // infeasible or invalid input
constexpr int kExitIo = 2;

// Subcommands: simulate, search, balance, trace-stats, validate, generate-trace.
// Primary output goes to `out` (or the --out file); diagnostics to `err`.
int run(int argc, const char *const *argv, std::ostream &out, std::ostream &err);

}  // namespace moesim::cli

#endif  // MOESIM_CLI_H_
