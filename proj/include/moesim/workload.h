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

#ifndef MOESIM_WORKLOAD_H_
#define MOESIM_WORKLOAD_H_

// Per-micro-batch operator costs of model items on one device, and their
// aggregation into the chunk cost table consumed by the pipeline simulator.

#include <cstdint>
#include <vector>

#include "moesim/cluster_spec.h"
#include "moesim/comm_model.h"
#include "moesim/memory_model.h"
#include "moesim/model_spec.h"
#include "moesim/parallel_plan.h"
#include "moesim/pipeline_sim.h"

namespace moesim {

struct WorkloadOptions {
  OverlapPolicy policy;
  bool fine_grained_recompute = true;
  int64_t coc_tiles = 4;
  DispatchMechanism dispatch = DispatchMechanism::kHierarchical;
  ChunkWeights chunk_weights;
};

// Tokens of one micro-batch held by one device under sequence parallelism.
double tokens_per_device(const ModelConfig &cfg, const ParallelPlan &plan);

struct ItemCost {
  double pre = 0.0;   // attention, router, norms, exposed TP comm
  double gmm = 0.0;   // expert / FFN matmuls
  double post = 0.0;  // permute, unpermute, activation, loss
  double expert_matmul = 0.0;
  bool moe = false;
  int64_t host_ops_pre = 0;
  int64_t host_ops_gmm = 0;
  int64_t host_ops_post = 0;
  std::vector<PassComm> fwd_comm;
  std::vector<PassComm> bwd_comm;

  double fwd() const { return pre + gmm + post; }
};

// Forward cost of one chunk item ("moe_3", "dense_0", "mtp_0", "head_loss").
ItemCost item_cost(const ChunkItem &item, const ModelConfig &cfg, const ParallelPlan &plan,
                   const HardwareDescription &hw, const WorkloadOptions &options);

// Token dispatch + combine collectives of one MoE layer in one direction.
std::vector<PassComm> moe_layer_comm(const ModelConfig &cfg, const ParallelPlan &plan, const HardwareDescription &hw,
                                     DispatchMechanism mechanism);

double p2p_seconds(const ModelConfig &cfg, const ParallelPlan &plan, const HardwareDescription &hw);

ChunkCostTable build_chunk_costs(const ModelConfig &cfg, const ParallelPlan &plan, const HardwareDescription &hw,
                                 const StageAssignment &assignment, const MemoryPlan &mem_plan,
                                 const WorkloadOptions &options);

// Gradient reduce-scatter plus parameter all-gather after the last backward.
double dp_sync_time(const ModelConfig &cfg, const ParallelPlan &plan, const HardwareDescription &hw);

}  // namespace moesim

#endif  // MOESIM_WORKLOAD_H_
