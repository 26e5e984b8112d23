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

#ifndef MOESIM_CONFIG_IO_H_
#define MOESIM_CONFIG_IO_H_

// Strict JSON ingestion: unknown fields and wrong types raise
// SimError(kParseError) naming the offending field.

#include <string>
#include <vector>

#include "json.hpp"
#include "moesim/cluster_spec.h"
#include "moesim/model_spec.h"
#include "moesim/moe_balance.h"
#include "moesim/parallel_plan.h"
#include "moesim/search.h"

namespace moesim {

using Json = nlohmann::ordered_json;

// Throws kIoError when unreadable, kParseError (with line) when malformed.
Json load_json_file(const std::string &path);
Json parse_json_text(const std::string &text, const std::string &origin);

ModelConfig model_from_json(const Json &j);
Json to_json(const ModelConfig &cfg);

HardwareDescription hardware_from_json(const Json &j);
Json to_json(const HardwareDescription &hw);

ParallelPlan plan_from_json(const Json &j);
Json to_json(const ParallelPlan &plan);

DesignSpace design_space_from_json(const Json &j);
Json to_json(const DesignSpace &space);

TraceSpec trace_spec_from_json(const Json &j);
Json to_json(const TraceSpec &spec);

// {"models": DesignSpace, "plans": [ParallelPlan...], "options": {...}}
struct SearchFile {
  DesignSpace models;
  std::vector<ParallelPlan> plans;
  SearchOptions options;
};
SearchFile search_file_from_json(const Json &j);

// {"options": {...}} for the balance command.
BalanceOptions balance_options_from_json(const Json &j);

Json to_json(const MemoryReport &r);
Json to_json(const MemoryPlan &p);
Json to_json(const StepReport &r);
Json to_json(const CostReport &r);

// CSV with a leading "# moesim-<table> v<N>" schema line.
std::string cost_report_csv(const std::vector<CostReport> &reports);

}  // namespace moesim

#endif  // MOESIM_CONFIG_IO_H_
