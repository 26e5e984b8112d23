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

#include "moesim/memory_model.h"

#include <algorithm>
#include <tuple>

#include "moesim/error.h"
#include "moesim/workload.h"

namespace moesim {

namespace {

constexpr MemoryOption kAllOptions[] = {MemoryOption::kMlaQkv, MemoryOption::kMlaKvOnly, MemoryOption::kPermute,
                                        MemoryOption::kSwigluActivation, MemoryOption::kProbsSwap};

bool starts_with(const std::string &s, const char *prefix) { return s.rfind(prefix, 0) == 0; }

double d(int64_t x) { return static_cast<double>(x); }

bool is_freed(const StoredTensor &t, const MemoryPlan &plan) {
  return std::any_of(t.freed_by.begin(), t.freed_by.end(), [&](MemoryOption o) { return plan.has(o); });
}

// Activation bytes of one item for one micro-batch.
double item_activation(const std::string &name, const ModelConfig &cfg, const ParallelPlan &plan,
                       const MemoryPlan &mem_plan) {
  const double s = tokens_per_device(cfg, plan);
  const double dtype = d(cfg.dtype_bytes);
  if (name == "head_loss") {
    // fp32 logits shard kept for the cross-entropy backward.
    return s * d(cfg.vocab_size) * 4.0;
  }
  const bool moe = !starts_with(name, "dense_") && cfg.num_routed_experts > 0;
  const auto tensors = layer_activation_tensors(cfg, plan, moe);
  double bytes = 0.0;
  if (mem_plan.full_layer_recompute) {
    bytes = tensors.front().bytes;  // the layer input checkpoint
  } else {
    for (const auto &t : tensors) {
      if (!is_freed(t, mem_plan)) bytes += t.bytes;
    }
  }
  if (starts_with(name, "mtp_")) bytes += 2.0 * s * d(cfg.hidden_size) * dtype;  // concatenated eh_proj input
  return bytes;
}

// Largest single-layer working set, rematerialized during full-layer recompute.
double full_layer_working_set(const ModelConfig &cfg, const ParallelPlan &plan) {
  double worst = 0.0;
  for (bool moe : {false, true}) {
    if (moe && cfg.num_routed_experts == 0) continue;
    double sum = 0.0;
    for (const auto &t : layer_activation_tensors(cfg, plan, moe)) sum += t.bytes;
    worst = std::max(worst, sum);
  }
  return worst;
}

double stage_activation(const ModelConfig &cfg, const ParallelPlan &plan, const StageAssignment &assignment,
                        int64_t pp_stage, const MemoryPlan &mem_plan) {
  double per_pass = 0.0;
  for (const auto &chunk : assignment.chunks) {
    if (chunk.pp_stage != pp_stage) continue;
    double bytes = 0.0;
    for (const auto &item : chunk.items) bytes += item_activation(item.name, cfg, plan, mem_plan);
    per_pass = std::max(per_pass, bytes);
  }
  double peak = per_pass * d(inflight_passes(plan, pp_stage));
  if (mem_plan.full_layer_recompute) peak += full_layer_working_set(cfg, plan);
  return peak;
}

}  // namespace

const char *memory_option_name(MemoryOption option) {
  switch (option) {
    case MemoryOption::kMlaQkv: return "mla_qkv";
    case MemoryOption::kMlaKvOnly: return "mla_kv_only";
    case MemoryOption::kPermute: return "permute";
    case MemoryOption::kSwigluActivation: return "swiglu_activation";
    case MemoryOption::kProbsSwap: return "probs";
  }
  return "unknown";
}

MemoryOption parse_memory_option(const std::string &name) {
  for (MemoryOption o : kAllOptions) {
    if (name == memory_option_name(o)) return o;
  }
  throw SimError(ErrorKind::kParseError, "unknown memory option '" + name + "'");
}

double MemoryPlan::time_added_per_layer() const {
  double t = 0.0;
  for (const auto &[option, cost] : per_option) {
    if (has(option)) t += cost.time_added;
  }
  return t;
}

MemoryPlan make_memory_plan(std::initializer_list<MemoryOption> options) {
  MemoryPlan plan;
  for (MemoryOption o : options) {
    if (o == MemoryOption::kProbsSwap) {
      plan.swap.insert(o);
    } else {
      plan.recompute.insert(o);
    }
  }
  if (!plan.valid()) throw SimError(ErrorKind::kInvalidArgument, "mla_qkv and mla_kv_only are mutually exclusive");
  return plan;
}

std::vector<StoredTensor> layer_activation_tensors(const ModelConfig &cfg, const ParallelPlan &plan, bool moe_layer) {
  const double s = tokens_per_device(cfg, plan);
  const double t = s * d(plan.tp);
  const double tp = d(plan.tp);
  const double dtype = d(cfg.dtype_bytes);
  const double h = d(cfg.hidden_size);
  const double heads = d(cfg.num_attention_heads);
  const auto &mla = cfg.mla_dims;
  using O = MemoryOption;

  // The first entry must stay the layer input: full-layer recompute keeps only it.
  std::vector<StoredTensor> out;
  out.push_back({"layer_input", s * h * dtype, {}});
  out.push_back({"mla_latent", t * d(mla.q_rank + mla.kv_rank + mla.rope_dim) * dtype, {}});
  out.push_back({"q", t * heads * d(mla.head_dim + mla.rope_dim) / tp * dtype, {O::kMlaQkv}});
  out.push_back({"k", t * heads * d(mla.head_dim + mla.rope_dim) / tp * dtype, {O::kMlaQkv, O::kMlaKvOnly}});
  out.push_back({"v", t * heads * d(mla.head_dim) / tp * dtype, {O::kMlaQkv, O::kMlaKvOnly}});
  out.push_back({"attn_context", t * heads * d(mla.head_dim) / tp * dtype, {}});
  out.push_back({"ffn_input", s * h * dtype, {}});
  if (moe_layer) {
    const double routed = s * d(cfg.top_k);
    const double ffn_tokens = routed + s * d(cfg.num_shared_experts);
    const double inter = d(cfg.expert_intermediate_size);
    out.push_back({"permuted_tokens", routed * h * dtype, {O::kPermute}});
    out.push_back({"expert_gate_up", ffn_tokens * 2.0 * inter * dtype, {}});
    out.push_back({"swiglu_out", ffn_tokens * inter * dtype, {O::kSwigluActivation}});
    out.push_back({"probs_weighted_out", routed * h * dtype, {O::kProbsSwap}});
  } else {
    const double inter = d(cfg.dense_ffn_intermediate_size) / tp;
    out.push_back({"ffn_gate_up", t * 2.0 * inter * dtype, {}});
    out.push_back({"swiglu_out", t * inter * dtype, {O::kSwigluActivation}});
  }
  return out;
}

double static_memory_bytes(double dense_params, double expert_params, int64_t dp, int64_t expert_dp) {
  if (dp < 1 || expert_dp < 1) throw SimError(ErrorKind::kInvalidArgument, "data-parallel sizes must be >= 1");
  const double params = dense_params + expert_params;
  return 4.0 * params + 12.0 * dense_params / d(dp) + 12.0 * expert_params / d(expert_dp);
}

StageParams stage_params(const ModelConfig &cfg, const ParallelPlan &plan, int64_t pp_stage,
                         const ChunkWeights &weights) {
  const auto assignment = assign_chunks(cfg, plan, weights);
  const double routed = d(cfg.num_routed_experts) * d(expert_params(cfg));
  StageParams sp;
  for (const auto &chunk : assignment.chunks) {
    if (chunk.pp_stage != pp_stage) continue;
    for (const auto &item : chunk.items) {
      if (starts_with(item.name, "dense_")) {
        sp.dense += d(dense_layer_params(cfg));
      } else if (starts_with(item.name, "moe_")) {
        sp.dense += d(moe_layer_params(cfg)) - routed;
        sp.expert += routed;
      } else if (starts_with(item.name, "mtp_")) {
        const double body = d(mtp_module_params(cfg));
        const double experts = cfg.num_routed_experts > 0 ? routed : 0.0;
        sp.dense += body - experts;
        sp.expert += experts;
      } else if (item.name == "head_loss") {
        sp.dense += d(cfg.vocab_size) * d(cfg.hidden_size);
        if (cfg.num_layers > 0) sp.dense += d(cfg.hidden_size);
      }
    }
  }
  if (pp_stage == 0) sp.dense += d(cfg.vocab_size) * d(cfg.hidden_size);
  sp.dense /= d(plan.tp);
  sp.expert /= d(plan.tp) * d(plan.ep);
  return sp;
}

double static_memory(const ModelConfig &cfg, const ParallelPlan &plan, const HardwareDescription &hw) {
  const ParallelPlan resolved = resolve_plan(plan, cfg, hw);
  const int64_t edp = std::max<int64_t>(1, resolved.dp / resolved.ep);
  double worst = 0.0;
  for (int64_t s = 0; s < resolved.pp; ++s) {
    const auto sp = stage_params(cfg, resolved, s);
    worst = std::max(worst, static_memory_bytes(sp.dense, sp.expert, resolved.dp, edp));
  }
  return worst;
}

int64_t inflight_passes(const ParallelPlan &plan, int64_t pp_stage) {
  const int64_t p = plan.pp;
  const int64_t v = plan.vpp;
  const int64_t m = micro_batch_count(plan);
  const int64_t total = m * v;
  if (v == 1) return std::min(p - pp_stage, m);
  if (m % p != 0) return total;
  return std::min((p - pp_stage - 1) * 2 + (v - 1) * p + 1, total);
}

double activation_peak(const ModelConfig &cfg, const ParallelPlan &plan, const MemoryPlan &mem_plan) {
  if (!mem_plan.valid()) throw SimError(ErrorKind::kInvalidArgument, "mla_qkv and mla_kv_only are mutually exclusive");
  const auto assignment = assign_chunks(cfg, plan, ChunkWeights{});
  double worst = 0.0;
  for (int64_t s = 0; s < plan.pp; ++s) {
    worst = std::max(worst, stage_activation(cfg, plan, assignment, s, mem_plan));
  }
  return worst;
}

MemoryReport memory_report(const ModelConfig &cfg, const ParallelPlan &plan, const HardwareDescription &hw,
                           const MemoryPlan &mem_plan) {
  const ParallelPlan resolved = resolve_plan(plan, cfg, hw);
  MemoryReport r;
  r.static_bytes = static_memory(cfg, resolved, hw);
  r.activation_peak_bytes = activation_peak(cfg, resolved, mem_plan);
  r.headroom = hw.hbm_bytes_per_device - r.static_bytes - r.activation_peak_bytes;
  r.feasible = r.headroom >= 0.0;
  return r;
}

OptionCost option_cost(MemoryOption option, const ModelConfig &cfg, const ParallelPlan &plan,
                       const HardwareDescription &hw) {
  const ParallelPlan resolved = resolve_plan(plan, cfg, hw);
  const double s = tokens_per_device(cfg, resolved);
  const double t = s * d(resolved.tp);
  const double tp = d(resolved.tp);
  const double dtype = d(cfg.dtype_bytes);
  const double h = d(cfg.hidden_size);
  const double heads = d(cfg.num_attention_heads);
  const auto &mla = cfg.mla_dims;
  const double routed = s * d(cfg.top_k);

  OptionCost cost;
  cost.bytes_saved =
      activation_peak(cfg, resolved, MemoryPlan{}) - activation_peak(cfg, resolved, make_memory_plan({option}));
  const double kv_weights = d(mla.kv_rank) * heads * 2.0 * d(mla.head_dim) / tp;
  const double q_in = mla.q_rank > 0 ? d(mla.q_rank) : h;
  const double q_weights = q_in * heads * d(mla.head_dim + mla.rope_dim) / tp;
  switch (option) {
    case MemoryOption::kMlaQkv:
      cost.time_added = kernel_time(2.0 * t * (q_weights + kv_weights),
                                    (q_weights + kv_weights) * dtype + t * (q_in + d(mla.kv_rank)) * dtype,
                                    hw, hw.matmul_efficiency);
      break;
    case MemoryOption::kMlaKvOnly:
      cost.time_added = kernel_time(2.0 * t * kv_weights, kv_weights * dtype + t * d(mla.kv_rank) * dtype, hw,
                                    hw.matmul_efficiency);
      break;
    case MemoryOption::kPermute:
      cost.time_added = kernel_time(0.0, 2.0 * routed * h * dtype, hw, hw.vector_efficiency);
      break;
    case MemoryOption::kSwigluActivation: {
      const double elems = (routed + s * d(cfg.num_shared_experts)) * d(cfg.expert_intermediate_size);
      cost.time_added = kernel_time(4.0 * elems, 3.0 * elems * dtype, hw, hw.vector_efficiency);
      break;
    }
    case MemoryOption::kProbsSwap: {
      cost.transfer_bytes = routed * h * dtype;
      const double transfer = cost.transfer_bytes / hw.host_to_device_bandwidth;
      // Prefetch is hidden when it fits under the backward compute of one MoE layer.
      WorkloadOptions wo;
      const double slack = 2.0 * item_cost(ChunkItem{"moe_0", 1.0}, cfg, resolved, hw, wo).fwd();
      cost.time_added = std::max(0.0, transfer - slack);
      break;
    }
  }
  return cost;
}

std::vector<MemoryPlan> memory_plan_lattice() {
  std::vector<MemoryPlan> plans;
  for (int mla = 0; mla < 3; ++mla) {
    for (int mask = 0; mask < 8; ++mask) {
      MemoryPlan p;
      if (mla == 1) p.recompute.insert(MemoryOption::kMlaKvOnly);
      if (mla == 2) p.recompute.insert(MemoryOption::kMlaQkv);
      if (mask & 1) p.recompute.insert(MemoryOption::kPermute);
      if (mask & 2) p.recompute.insert(MemoryOption::kSwigluActivation);
      if (mask & 4) p.swap.insert(MemoryOption::kProbsSwap);
      plans.push_back(std::move(p));
    }
  }
  return plans;
}

MemoryPlan select_memory_plan(const ModelConfig &cfg, const ParallelPlan &plan, const HardwareDescription &hw) {
  const ParallelPlan resolved = resolve_plan(plan, cfg, hw);
  std::map<MemoryOption, OptionCost> costs;
  for (MemoryOption o : kAllOptions) costs[o] = option_cost(o, cfg, resolved, hw);
  const double static_bytes = static_memory(cfg, resolved, hw);

  const MemoryPlan *best = nullptr;
  std::tuple<double, size_t> best_key;
  auto lattice = memory_plan_lattice();
  for (auto &candidate : lattice) {
    for (MemoryOption o : kAllOptions) {
      if (candidate.has(o)) candidate.per_option[o] = costs[o];
    }
    if (static_bytes + activation_peak(cfg, resolved, candidate) > hw.hbm_bytes_per_device) continue;
    const std::tuple<double, size_t> key{candidate.time_added_per_layer(),
                                         candidate.recompute.size() + candidate.swap.size()};
    if (best == nullptr || key < best_key) {
      best = &candidate;
      best_key = key;
    }
  }
  if (best == nullptr) {
    throw SimError(ErrorKind::kInfeasible, "no memory plan fits in " + std::to_string(hw.hbm_bytes_per_device) +
                                               " bytes per device");
  }
  return *best;
}

}  // namespace moesim
