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

#ifndef MOESIM_PARALLEL_PLAN_H_
#define MOESIM_PARALLEL_PLAN_H_

#include <cstdint>
#include <string>
#include <vector>

#include "moesim/cluster_spec.h"
#include "moesim/model_spec.h"

namespace moesim {

// dp == 0 means "derive from the world size" (world / (tp * pp * cp)).
struct ParallelPlan {
  int64_t tp = 1;
  int64_t pp = 1;
  int64_t vpp = 1;
  int64_t ep = 1;
  int64_t dp = 0;
  int64_t cp = 1;
  int64_t micro_batch_size = 1;
  int64_t global_batch_size = 1;

  bool operator==(const ParallelPlan &) const = default;
};

struct PlanValidation {
  std::vector<std::string> errors;
  ParallelPlan resolved;  // dp filled in when derivable

  bool ok() const { return errors.empty(); }
};

PlanValidation validate_plan(const ParallelPlan &plan, const ModelConfig &cfg, const HardwareDescription &hw);

// Validates and returns the resolved plan, or throws SimError(kInvalidArgument).
ParallelPlan resolve_plan(const ParallelPlan &plan, const ModelConfig &cfg, const HardwareDescription &hw);

// Micro-batches per pipeline per step. Throws SimError(kNonDivisible).
int64_t micro_batch_count(const ParallelPlan &plan);

struct ChunkWeights {
  double moe = 1.0;
  double dense = 0.6;
  double mtp_body = 1.05;
  double head_loss = 1.5;
};

struct ChunkItem {
  std::string name;
  double weight = 0.0;
};

struct Chunk {
  int64_t pp_stage = 0;
  int64_t vpp_stage = 0;
  std::vector<ChunkItem> items;

  double weight() const;
};

struct StageAssignment {
  std::vector<Chunk> chunks;  // in model order; chunk c lives on pp stage c % pp
  double max_chunk_weight = 0.0;
  double baseline_weight = 0.0;

  double overflow_ratio() const { return baseline_weight > 0.0 ? max_chunk_weight / baseline_weight : 1.0; }
};

// Splits `weights` into exactly `num_chunks` non-empty contiguous runs minimizing
// the heaviest run. Returns the run start indices (size num_chunks, first is 0).
// Among optimal splits the earliest split position wins.
std::vector<size_t> partition_contiguous(const std::vector<double> &weights, size_t num_chunks);

// Model items in execution order: dense layers, MoE layers, MTP bodies, head+loss.
std::vector<ChunkItem> model_items(const ModelConfig &cfg, const ChunkWeights &weights);

// Assigns model items to pp * vpp virtual chunks. The head+loss item gets the
// last chunk to itself and the MTP body shares the penultimate chunk with at
// most one preceding layer; the remaining layers are min-max partitioned.
StageAssignment assign_chunks(const ModelConfig &cfg, const ParallelPlan &plan, const ChunkWeights &weights);

// Generic contiguous assignment over arbitrary items, no placement constraints.
StageAssignment assign_items(const std::vector<ChunkItem> &items, int64_t pp, int64_t vpp);

}  // namespace moesim

#endif  // MOESIM_PARALLEL_PLAN_H_
