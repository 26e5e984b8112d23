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

#ifndef MOESIM_COMM_MODEL_H_
#define MOESIM_COMM_MODEL_H_

#include <cstdint>
#include <vector>

#include "moesim/cluster_spec.h"
#include "moesim/model_spec.h"
#include "moesim/parallel_plan.h"

namespace moesim {

enum class DispatchMechanism { kAllGather, kAllToAll, kHierarchical };

const char *dispatch_name(DispatchMechanism mechanism);

// Token counts crossing each tier for one dispatch of `tokens` local tokens.
struct DispatchTokenUnits {
  int64_t inter_node = 0;
  int64_t intra_node = 0;
};

DispatchTokenUnits dispatch_token_units(DispatchMechanism mechanism, int64_t tokens, int64_t topk, int64_t tp,
                                        int64_t ep);

struct DispatchVolumes {
  double inter_node_bytes = 0.0;
  double intra_node_bytes = 0.0;
  DispatchMechanism mechanism = DispatchMechanism::kHierarchical;
};

// Token units scaled by hidden * dtype_bytes. `tokens` is per device per micro-batch.
DispatchVolumes dispatch_volumes(DispatchMechanism mechanism, int64_t tokens, int64_t hidden, int64_t dtype_bytes,
                                 int64_t topk, int64_t tp, int64_t ep);

enum class LinkResource { kInterLink, kIntraLink };
enum class Direction { kForward, kBackward };

struct CommEvent {
  int id = 0;
  CollectiveKind kind = CollectiveKind::kAllGather;
  LinkResource resource = LinkResource::kInterLink;
  double bytes = 0.0;
  Direction direction = Direction::kForward;
  std::vector<int> dependencies;
  int phase = 1;  // 1: inter-node allgather, 2: intra-node alltoall
};

// Number of nodes one EP group (tp * ep consecutive ranks) touches.
int64_t ep_nodes_spanned(const ParallelPlan &plan, const HardwareDescription &hw);

// Two-phase token dispatch for one MoE layer, forward and backward. Phase 1
// gathers tokens among same-rank devices of the other nodes in the EP group;
// phase 2 redistributes them inside the node. Phase 2 depends on phase 1 of the
// same direction only.
std::vector<CommEvent> hierarchical_events(int64_t tokens, const ModelConfig &cfg, const ParallelPlan &plan,
                                           const HardwareDescription &hw);

// Seconds a single event occupies its link.
double event_time(const CommEvent &event, const ParallelPlan &plan, const HardwareDescription &hw);

// Exposed TP communication after tiling a matmul+collective into `tiles` pieces.
double tp_exposed_time(double comm_time, int64_t tiles);

}  // namespace moesim

#endif  // MOESIM_COMM_MODEL_H_
