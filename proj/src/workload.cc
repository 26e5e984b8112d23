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

#include "moesim/workload.h"

#include <algorithm>

#include "moesim/error.h"

namespace moesim {

namespace {

// Host launches per pass segment.
constexpr int64_t kAttentionHostOps = 24;
constexpr int64_t kRouterHostOps = 6;
constexpr int64_t kGroupedMatmulHostOps = 2;
constexpr int64_t kMoePostHostOps = 16;
constexpr int64_t kDenseFfnHostOps = 6;
constexpr int64_t kHeadHostOps = 8;

double d(int64_t x) { return static_cast<double>(x); }

bool starts_with(const std::string &s, const char *prefix) { return s.rfind(prefix, 0) == 0; }

struct Shape {
  double s;      // sequence-parallel tokens per device
  double t;      // tokens seen by the TP group
  double tp;
  double dtype;
  double h;
};

Shape shape_of(const ModelConfig &cfg, const ParallelPlan &plan) {
  Shape sh;
  sh.s = tokens_per_device(cfg, plan);
  sh.t = sh.s * d(plan.tp);
  sh.tp = d(plan.tp);
  sh.dtype = d(cfg.dtype_bytes);
  sh.h = d(cfg.hidden_size);
  return sh;
}

double vector_time(double flops, double bytes, const HardwareDescription &hw) {
  return kernel_time(flops, bytes, hw, hw.vector_efficiency);
}

// Sequence-parallel allgather before and reduce-scatter after a TP region.
double tp_region_comm(const Shape &sh, const HardwareDescription &hw, int64_t tp, int64_t tiles) {
  if (tp <= 1) return 0.0;
  const CommGroup g = make_comm_group(hw, tp, 1);
  const double volume = sh.t * sh.h * sh.dtype;
  const double comm = collective_time(CollectiveKind::kAllGather, volume, g) +
                      collective_time(CollectiveKind::kReduceScatter, volume, g);
  return tp_exposed_time(comm, tiles);
}

void add_attention(ItemCost &c, const ModelConfig &cfg, const ParallelPlan &plan, const HardwareDescription &hw,
                   const Shape &sh, int64_t tiles) {
  const auto &mla = cfg.mla_dims;
  const double heads = d(cfg.num_attention_heads);
  const double flops = sh.t * attention_flops_per_token(cfg, cfg.seq_len) / sh.tp;
  const double act_elems =
      sh.t * (sh.h + d(mla.q_rank + mla.kv_rank + mla.rope_dim)) +
      sh.t * heads * d(3 * mla.head_dim + 2 * mla.rope_dim) / sh.tp;
  const double bytes = (d(attention_params(cfg)) / sh.tp + act_elems) * sh.dtype;
  c.pre += kernel_time(flops, bytes, hw, hw.matmul_efficiency);
  // Input norm and residual add.
  c.pre += vector_time(8.0 * sh.s * sh.h, 4.0 * sh.s * sh.h * sh.dtype, hw);
  c.pre += tp_region_comm(sh, hw, plan.tp, tiles);
  c.host_ops_pre += kAttentionHostOps;
}

void add_moe_ffn(ItemCost &c, const ModelConfig &cfg, const ParallelPlan &plan, const HardwareDescription &hw,
                 const Shape &sh, const WorkloadOptions &options) {
  const double n = d(cfg.num_routed_experts);
  const double routed = sh.s * d(cfg.top_k);
  const double shared = sh.s * d(cfg.num_shared_experts);
  const double inter = d(cfg.expert_intermediate_size);
  const double ep_params = d(expert_params(cfg));

  // Router on the local shard.
  c.pre += kernel_time(2.0 * sh.s * sh.h * n, (sh.h * n + sh.s * (sh.h + n)) * sh.dtype, hw, hw.matmul_efficiency);
  c.pre += vector_time(8.0 * sh.s * sh.h, 4.0 * sh.s * sh.h * sh.dtype, hw);
  c.host_ops_pre += kRouterHostOps;
  if (cfg.num_shared_experts > 0) c.pre += tp_region_comm(sh, hw, plan.tp, options.coc_tiles);

  const double local_experts = n / (sh.tp * d(plan.ep));
  const double flops = 2.0 * (routed + shared) * 3.0 * sh.h * inter;
  const double weight_bytes = (local_experts + d(cfg.num_shared_experts) / sh.tp) * ep_params * sh.dtype;
  const double act_bytes = (routed + shared) * (sh.h + 3.0 * inter) * sh.dtype;
  const double gmm = kernel_time(flops, weight_bytes + act_bytes, hw, hw.matmul_efficiency);
  c.gmm += gmm;
  c.expert_matmul += gmm;
  c.host_ops_gmm += kGroupedMatmulHostOps;

  // Permute, unpermute and the SwiGLU activation.
  c.post += vector_time(2.0 * routed * sh.h, 4.0 * routed * sh.h * sh.dtype, hw);
  const double act = (routed + shared) * inter;
  c.post += vector_time(4.0 * act, 3.0 * act * sh.dtype, hw);
  c.host_ops_post += kMoePostHostOps;
  c.moe = true;

  const auto comm = moe_layer_comm(cfg, plan, hw, options.dispatch);
  for (auto *list : {&c.fwd_comm, &c.bwd_comm}) {
    const int offset = static_cast<int>(list->size());
    for (auto e : comm) {
      for (int &dep : e.deps) dep += offset;
      list->push_back(std::move(e));
    }
  }
}

void add_dense_ffn(ItemCost &c, const ModelConfig &cfg, const ParallelPlan &plan, const HardwareDescription &hw,
                   const Shape &sh, int64_t tiles) {
  const double inter = d(cfg.dense_ffn_intermediate_size) / sh.tp;
  const double flops = 2.0 * sh.t * 3.0 * sh.h * inter;
  const double bytes = (3.0 * sh.h * inter + sh.t * (sh.h + 3.0 * inter)) * sh.dtype;
  c.pre += vector_time(8.0 * sh.s * sh.h, 4.0 * sh.s * sh.h * sh.dtype, hw);
  c.gmm += kernel_time(flops, bytes, hw, hw.matmul_efficiency);
  c.post += vector_time(4.0 * sh.t * inter, 3.0 * sh.t * inter * sh.dtype, hw);
  c.pre += tp_region_comm(sh, hw, plan.tp, tiles);
  c.host_ops_pre += kDenseFfnHostOps;
  c.host_ops_post += kDenseFfnHostOps;
}

void add_head(ItemCost &c, const ModelConfig &cfg, const HardwareDescription &hw, const Shape &sh) {
  const double vocab = d(cfg.vocab_size) / sh.tp;
  c.pre += vector_time(8.0 * sh.s * sh.h, 4.0 * sh.s * sh.h * sh.dtype, hw);
  c.gmm += kernel_time(2.0 * sh.t * sh.h * vocab, (sh.h * vocab + sh.t * (sh.h + vocab)) * sh.dtype, hw,
                       hw.matmul_efficiency);
  // Softmax cross-entropy in fp32.
  c.post += vector_time(6.0 * sh.t * vocab, 3.0 * sh.t * vocab * 4.0, hw);
  c.host_ops_pre += kHeadHostOps / 2;
  c.host_ops_post += kHeadHostOps;
}

// Recompute seconds added to the backward pass of one item.
double recompute_time(const std::string &name, const ItemCost &cost, const MemoryPlan &mem_plan) {
  if (name == "head_loss") return 0.0;
  if (mem_plan.full_layer_recompute) return cost.fwd();
  if (!cost.moe) {
    double t = 0.0;
    for (MemoryOption o : {MemoryOption::kMlaQkv, MemoryOption::kMlaKvOnly}) {
      auto it = mem_plan.per_option.find(o);
      if (it != mem_plan.per_option.end() && mem_plan.has(o)) t += it->second.time_added;
    }
    return t;
  }
  return mem_plan.time_added_per_layer();
}

}  // namespace

double tokens_per_device(const ModelConfig &cfg, const ParallelPlan &plan) {
  if (plan.tp < 1 || plan.cp < 1) throw SimError(ErrorKind::kInvalidArgument, "tp and cp must be >= 1");
  return d(plan.micro_batch_size) * d(cfg.seq_len) / (d(plan.cp) * d(plan.tp));
}

std::vector<PassComm> moe_layer_comm(const ModelConfig &cfg, const ParallelPlan &plan, const HardwareDescription &hw,
                                     DispatchMechanism mechanism) {
  const double s = tokens_per_device(cfg, plan);
  const double token_bytes = d(cfg.hidden_size) * d(cfg.dtype_bytes);
  const int64_t ranks = plan.tp * plan.ep;
  std::vector<PassComm> out;
  if (ranks <= 1) return out;
  const int64_t nodes = ep_nodes_spanned(plan, hw);

  switch (mechanism) {
    case DispatchMechanism::kHierarchical: {
      CommEvent gather;
      gather.kind = CollectiveKind::kAllGather;
      gather.resource = LinkResource::kInterLink;
      gather.bytes = s * d(nodes - 1) * token_bytes;
      CommEvent a2a;
      a2a.kind = CollectiveKind::kAllToAll;
      a2a.resource = LinkResource::kIntraLink;
      a2a.bytes = s * d(cfg.top_k) * token_bytes;
      const double t_gather = nodes > 1 ? event_time(gather, plan, hw) : 0.0;
      const double t_a2a = event_time(a2a, plan, hw);
      if (nodes > 1) out.push_back({LinkResource::kInterLink, t_gather, {}, "dispatch_allgather"});
      const int a = static_cast<int>(out.size());
      out.push_back({LinkResource::kIntraLink, t_a2a, nodes > 1 ? std::vector<int>{0} : std::vector<int>{},
                     "dispatch_alltoall"});
      out.push_back({LinkResource::kIntraLink, t_a2a, {a}, "combine_alltoall"});
      if (nodes > 1) out.push_back({LinkResource::kInterLink, t_gather, {a + 1}, "combine_reducescatter"});
      break;
    }
    case DispatchMechanism::kAllToAll: {
      const CommGroup g = make_comm_group(hw, ranks, 1);
      const LinkResource r = g.spans_nodes ? LinkResource::kInterLink : LinkResource::kIntraLink;
      // The full exchanged buffer: every rank's routed copies.
      const double volume = s * d(cfg.top_k) * token_bytes * d(ranks) / d(ranks - 1);
      const double t = collective_time(CollectiveKind::kAllToAll, volume, g);
      out.push_back({r, t, {}, "dispatch_alltoall"});
      out.push_back({r, t, {0}, "combine_alltoall"});
      break;
    }
    case DispatchMechanism::kAllGather: {
      const CommGroup g = make_comm_group(hw, ranks, 1);
      const LinkResource r = g.spans_nodes ? LinkResource::kInterLink : LinkResource::kIntraLink;
      const double volume = s * d(ranks) * token_bytes;
      out.push_back({r, collective_time(CollectiveKind::kAllGather, volume, g), {}, "dispatch_allgather"});
      out.push_back({r, collective_time(CollectiveKind::kReduceScatter, volume, g), {0}, "combine_reducescatter"});
      break;
    }
  }
  return out;
}

ItemCost item_cost(const ChunkItem &item, const ModelConfig &cfg, const ParallelPlan &plan,
                   const HardwareDescription &hw, const WorkloadOptions &options) {
  const Shape sh = shape_of(cfg, plan);
  const bool moe_body = cfg.num_routed_experts > 0;
  ItemCost c;
  if (starts_with(item.name, "dense_")) {
    add_attention(c, cfg, plan, hw, sh, options.coc_tiles);
    add_dense_ffn(c, cfg, plan, hw, sh, options.coc_tiles);
  } else if (starts_with(item.name, "moe_")) {
    add_attention(c, cfg, plan, hw, sh, options.coc_tiles);
    add_moe_ffn(c, cfg, plan, hw, sh, options);
  } else if (starts_with(item.name, "mtp_")) {
    // Two norms, the eh projection, one transformer block and a pass through the shared head.
    const double proj = 2.0 * sh.h * sh.h / sh.tp;
    c.pre += vector_time(16.0 * sh.s * sh.h, 8.0 * sh.s * sh.h * sh.dtype, hw);
    c.pre += kernel_time(2.0 * sh.t * proj, (proj + sh.t * 3.0 * sh.h) * sh.dtype, hw, hw.matmul_efficiency);
    add_attention(c, cfg, plan, hw, sh, options.coc_tiles);
    if (moe_body) {
      add_moe_ffn(c, cfg, plan, hw, sh, options);
    } else {
      add_dense_ffn(c, cfg, plan, hw, sh, options.coc_tiles);
    }
    add_head(c, cfg, hw, sh);
  } else if (item.name == "head_loss") {
    add_head(c, cfg, hw, sh);
  } else {
    throw SimError(ErrorKind::kInvalidArgument, "unknown chunk item '" + item.name + "'");
  }
  return c;
}

double p2p_seconds(const ModelConfig &cfg, const ParallelPlan &plan, const HardwareDescription &hw) {
  const Shape sh = shape_of(cfg, plan);
  // Scatter-gather over TP: each rank ships its sequence shard.
  double bytes = sh.s * sh.h * sh.dtype;
  if (cfg.num_mtp_layers > 0) bytes *= 2.0;  // the MTP stream travels alongside
  const int64_t world = hw.world_size();
  const CommGroup g = make_comm_group(hw, 2, std::max<int64_t>(1, world / std::max<int64_t>(plan.pp, 1)));
  return collective_time(CollectiveKind::kP2P, bytes, g);
}

ChunkCostTable build_chunk_costs(const ModelConfig &cfg, const ParallelPlan &plan, const HardwareDescription &hw,
                                 const StageAssignment &assignment, const MemoryPlan &mem_plan,
                                 const WorkloadOptions &options) {
  ChunkCostTable table(static_cast<size_t>(plan.vpp), std::vector<ChunkCost>(static_cast<size_t>(plan.pp)));
  const double p2p = p2p_seconds(cfg, plan, hw);
  const double swap_per_layer =
      mem_plan.has(MemoryOption::kProbsSwap)
          ? tokens_per_device(cfg, plan) * d(cfg.top_k) * d(cfg.hidden_size) * d(cfg.dtype_bytes) /
                hw.host_to_device_bandwidth
          : 0.0;
  for (const auto &chunk : assignment.chunks) {
    ChunkCost cc;
    double pre = 0.0, gmm = 0.0, fwd = 0.0, dw = 0.0, recompute = 0.0;
    for (const auto &item : chunk.items) {
      const ItemCost ic = item_cost(item, cfg, plan, hw, options);
      pre += ic.pre;
      gmm += ic.gmm;
      fwd += ic.fwd();
      dw += ic.expert_matmul;
      recompute += recompute_time(item.name, ic, mem_plan);
      cc.has_moe = cc.has_moe || ic.moe;
      cc.host_ops_pre += ic.host_ops_pre;
      cc.host_ops_gmm += ic.host_ops_gmm;
      cc.host_ops_post += ic.host_ops_post;
      auto append = [](std::vector<PassComm> &dst, const std::vector<PassComm> &src) {
        const int offset = static_cast<int>(dst.size());
        for (auto e : src) {
          for (int &dep : e.deps) dep += offset;
          dst.push_back(std::move(e));
        }
      };
      append(cc.fwd_comm, ic.fwd_comm);
      append(cc.bwd_comm, ic.bwd_comm);
      if (mem_plan.full_layer_recompute) append(cc.bwd_comm, ic.fwd_comm);
      if (ic.moe) cc.swap_seconds += swap_per_layer;
    }
    cc.fwd = fwd;
    cc.bwd = 2.0 * fwd + recompute;
    cc.bwd_dw_fraction = cc.bwd > 0.0 ? dw / cc.bwd : 0.0;
    cc.pre_fraction = fwd > 0.0 ? pre / fwd : 0.0;
    cc.gmm_fraction = fwd > 0.0 ? gmm / fwd : 0.0;
    cc.p2p_seconds = p2p;
    table[static_cast<size_t>(chunk.vpp_stage)][static_cast<size_t>(chunk.pp_stage)] = std::move(cc);
  }
  return table;
}

double dp_sync_time(const ModelConfig &cfg, const ParallelPlan &plan, const HardwareDescription &hw) {
  if (plan.dp < 1) throw SimError(ErrorKind::kInvalidArgument, "dp must be resolved before the gradient sync");
  double worst = 0.0;
  const double dtype = d(cfg.dtype_bytes);
  const int64_t edp = std::max<int64_t>(1, plan.dp / plan.ep);
  for (int64_t s = 0; s < plan.pp; ++s) {
    const auto sp = stage_params(cfg, plan, s);
    double t = 0.0;
    if (plan.dp > 1) {
      const CommGroup g = make_comm_group(hw, plan.dp, plan.tp * plan.cp);
      t += collective_time(CollectiveKind::kReduceScatter, sp.dense * dtype, g) +
           collective_time(CollectiveKind::kAllGather, sp.dense * dtype, g);
    }
    if (edp > 1) {
      const CommGroup g = make_comm_group(hw, edp, plan.tp * plan.cp * plan.ep);
      t += collective_time(CollectiveKind::kReduceScatter, sp.expert * dtype, g) +
           collective_time(CollectiveKind::kAllGather, sp.expert * dtype, g);
    }
    worst = std::max(worst, t);
  }
  return worst;
}

}  // namespace moesim
