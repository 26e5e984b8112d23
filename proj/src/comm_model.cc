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

#include "moesim/comm_model.h"

#include <algorithm>

#include "moesim/error.h"

namespace moesim {

const char *dispatch_name(DispatchMechanism mechanism) {
  switch (mechanism) {
    case DispatchMechanism::kAllGather: return "allgather";
    case DispatchMechanism::kAllToAll: return "alltoall";
    case DispatchMechanism::kHierarchical: return "hierarchical";
  }
  return "unknown";
}

DispatchTokenUnits dispatch_token_units(DispatchMechanism mechanism, int64_t tokens, int64_t topk, int64_t tp,
                                        int64_t ep) {
  if (tokens < 1 || topk < 1 || tp < 1 || ep < 1) {
    throw SimError(ErrorKind::kInvalidArgument, "dispatch parameters must be >= 1");
  }
  DispatchTokenUnits u;
  switch (mechanism) {
    case DispatchMechanism::kAllGather:
      u.inter_node = tokens * tp * ep;
      break;
    case DispatchMechanism::kAllToAll:
      u.inter_node = tokens * topk;
      break;
    case DispatchMechanism::kHierarchical:
      u.inter_node = tokens * (ep - 1);
      u.intra_node = tokens * topk;
      break;
  }
  return u;
}

DispatchVolumes dispatch_volumes(DispatchMechanism mechanism, int64_t tokens, int64_t hidden, int64_t dtype_bytes,
                                 int64_t topk, int64_t tp, int64_t ep) {
  if (hidden < 1 || dtype_bytes < 1) throw SimError(ErrorKind::kInvalidArgument, "hidden and dtype_bytes must be >= 1");
  const auto u = dispatch_token_units(mechanism, tokens, topk, tp, ep);
  const double token_bytes = static_cast<double>(hidden) * static_cast<double>(dtype_bytes);
  DispatchVolumes v;
  v.mechanism = mechanism;
  v.inter_node_bytes = static_cast<double>(u.inter_node) * token_bytes;
  v.intra_node_bytes = static_cast<double>(u.intra_node) * token_bytes;
  return v;
}

int64_t ep_nodes_spanned(const ParallelPlan &plan, const HardwareDescription &hw) {
  if (hw.num_nodes <= 1) return 1;
  const int64_t ranks = plan.tp * plan.ep;
  const int64_t nodes = (ranks + hw.devices_per_node - 1) / hw.devices_per_node;
  return std::min(nodes, hw.num_nodes);
}

std::vector<CommEvent> hierarchical_events(int64_t tokens, const ModelConfig &cfg, const ParallelPlan &plan,
                                           const HardwareDescription &hw) {
  const double token_bytes = static_cast<double>(cfg.hidden_size) * static_cast<double>(cfg.dtype_bytes);
  const int64_t nodes = ep_nodes_spanned(plan, hw);
  std::vector<CommEvent> events;
  int next_id = 0;
  for (Direction dir : {Direction::kForward, Direction::kBackward}) {
    std::vector<int> phase1_ids;
    if (nodes > 1) {
      CommEvent gather;
      gather.id = next_id++;
      gather.kind = CollectiveKind::kAllGather;
      gather.resource = LinkResource::kInterLink;
      gather.bytes = static_cast<double>(tokens * (nodes - 1)) * token_bytes;
      gather.direction = dir;
      gather.phase = 1;
      phase1_ids.push_back(gather.id);
      events.push_back(gather);
    }
    CommEvent redistribute;
    redistribute.id = next_id++;
    redistribute.kind = CollectiveKind::kAllToAll;
    redistribute.resource = LinkResource::kIntraLink;
    redistribute.bytes = static_cast<double>(tokens * cfg.top_k) * token_bytes;
    redistribute.direction = dir;
    redistribute.dependencies = phase1_ids;
    redistribute.phase = 2;
    events.push_back(redistribute);
  }
  return events;
}

double event_time(const CommEvent &event, const ParallelPlan &plan, const HardwareDescription &hw) {
  if (event.bytes <= 0.0) return 0.0;
  if (event.kind == CollectiveKind::kP2P) {
    CommGroup g = make_comm_group(hw, 2, hw.devices_per_node);
    if (event.resource == LinkResource::kIntraLink) g = make_comm_group(hw, 2, 1);
    return collective_time(CollectiveKind::kP2P, event.bytes, g);
  }
  if (event.resource == LinkResource::kInterLink) {
    const int64_t nodes = std::max<int64_t>(ep_nodes_spanned(plan, hw), 2);
    CommGroup g = make_comm_group(hw, nodes, hw.devices_per_node);
    const double n = static_cast<double>(nodes);
    // bytes is what each member receives; the ring moves (g-1)/g of the full buffer.
    const double full = event.bytes * n / (n - 1.0);
    return collective_time(event.kind, full, g);
  }
  const int64_t local = std::max<int64_t>(std::min(plan.tp * plan.ep, hw.devices_per_node), 2);
  CommGroup g = make_comm_group(hw, local, 1);
  return collective_time(event.kind, event.bytes, g);
}

double tp_exposed_time(double comm_time, int64_t tiles) {
  if (tiles < 1) throw SimError(ErrorKind::kInvalidArgument, "tiles must be >= 1");
  return comm_time / static_cast<double>(tiles);
}

}  // namespace moesim
