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

#ifndef MOESIM_MEMORY_MODEL_H_
#define MOESIM_MEMORY_MODEL_H_

#include <cstdint>
#include <map>
#include <set>
#include <string>
#include <vector>

#include "moesim/cluster_spec.h"
#include "moesim/model_spec.h"
#include "moesim/parallel_plan.h"

namespace moesim {

enum class MemoryOption { kMlaQkv, kMlaKvOnly, kPermute, kSwigluActivation, kProbsSwap };

const char *memory_option_name(MemoryOption option);
MemoryOption parse_memory_option(const std::string &name);

// bytes_saved: drop in peak activation bytes when the option is enabled alone.
// time_added: extra seconds per MoE layer per micro-batch backward pass.
// transfer_bytes: host traffic per MoE layer per micro-batch (each direction).
struct OptionCost {
  double bytes_saved = 0.0;
  double time_added = 0.0;
  double transfer_bytes = 0.0;
};

struct MemoryPlan {
  std::set<MemoryOption> recompute;  // kMlaQkv, kMlaKvOnly, kPermute, kSwigluActivation
  std::set<MemoryOption> swap;       // kProbsSwap
  std::map<MemoryOption, OptionCost> per_option;
  // Baseline toggle: recompute whole layers instead of the fine-grained options.
  bool full_layer_recompute = false;

  bool has(MemoryOption option) const { return recompute.count(option) > 0 || swap.count(option) > 0; }
  bool valid() const { return !(recompute.count(MemoryOption::kMlaQkv) && recompute.count(MemoryOption::kMlaKvOnly)); }
  double time_added_per_layer() const;
};

MemoryPlan make_memory_plan(std::initializer_list<MemoryOption> options);

struct MemoryReport {
  double static_bytes = 0.0;
  double activation_peak_bytes = 0.0;
  double headroom = 0.0;
  bool feasible = false;
};

// One activation kept for backward, per layer per micro-batch on one device.
struct StoredTensor {
  std::string name;
  double bytes = 0.0;
  std::vector<MemoryOption> freed_by;  // empty: a recompute checkpoint, always stored
};

std::vector<StoredTensor> layer_activation_tensors(const ModelConfig &cfg, const ParallelPlan &plan, bool moe_layer);

// Mixed-precision footprint: bf16 weights and grads plus fp32 master weights and
// two moments sharded by the distributed optimizer.
double static_memory_bytes(double dense_params, double expert_params, int64_t dp, int64_t expert_dp);

// Parameters held by one device of the heaviest pipeline stage.
struct StageParams {
  double dense = 0.0;   // sharded over tp
  double expert = 0.0;  // routed experts, sharded over tp * ep
};
StageParams stage_params(const ModelConfig &cfg, const ParallelPlan &plan, int64_t pp_stage,
                         const ChunkWeights &weights = {});

double static_memory(const ModelConfig &cfg, const ParallelPlan &plan, const HardwareDescription &hw);

// Chunk forward passes whose activations a stage holds at its 1F1B peak.
int64_t inflight_passes(const ParallelPlan &plan, int64_t pp_stage);

double activation_peak(const ModelConfig &cfg, const ParallelPlan &plan, const MemoryPlan &mem_plan);

MemoryReport memory_report(const ModelConfig &cfg, const ParallelPlan &plan, const HardwareDescription &hw,
                           const MemoryPlan &mem_plan);

OptionCost option_cost(MemoryOption option, const ModelConfig &cfg, const ParallelPlan &plan,
                       const HardwareDescription &hw);

// Every valid combination of the fine-grained options (24 plans).
std::vector<MemoryPlan> memory_plan_lattice();

// Cheapest feasible option set; ties prefer fewer options. Throws SimError(kInfeasible).
MemoryPlan select_memory_plan(const ModelConfig &cfg, const ParallelPlan &plan, const HardwareDescription &hw);

}  // namespace moesim

#endif  // MOESIM_MEMORY_MODEL_H_
