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

#include "moesim/search.h"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <optional>
#include <thread>

#include "moesim/error.h"
#include "moesim/workload.h"

namespace moesim {

namespace {

double d(int64_t x) { return static_cast<double>(x); }

// Activation reads and writes per token per layer during decode.
constexpr double kDecodeActivationTraffic = 12.0;

double main_model_forward_flops(const ModelConfig &cfg) {
  ModelConfig main = cfg;
  main.num_mtp_layers = 0;
  return flops_per_token(main, cfg.seq_len).forward_per_token;
}

CostReport score_training(const ModelConfig &cfg, const ParallelPlan &plan, const HardwareDescription &hw,
                          const SearchOptions &options) {
  CostReport r;
  r.model_id = model_id(cfg);
  r.model = cfg;
  r.plan = plan;

  if (options.features.fine_grained_recompute) {
    r.memory_plan = select_memory_plan(cfg, plan, hw);
  } else {
    r.memory_plan.full_layer_recompute = true;
  }
  r.memory_report = memory_report(cfg, plan, hw, r.memory_plan);
  if (!r.memory_report.feasible) {
    throw SimError(ErrorKind::kInfeasible, "full-layer recompute does not fit in device memory");
  }

  WorkloadOptions wo;
  wo.policy.overlap_comm = options.features.overlap;
  wo.policy.decouple_dw = options.features.overlap;
  wo.policy.host_gmm_first = options.features.host_optimization;
  wo.fine_grained_recompute = options.features.fine_grained_recompute;
  wo.coc_tiles = options.coc_tiles;
  wo.dispatch = options.dispatch;

  const auto assignment = assign_chunks(cfg, plan, wo.chunk_weights);
  const auto table = build_chunk_costs(cfg, plan, hw, assignment, r.memory_plan, wo);
  const auto schedule = build_1f1b_schedule(plan.pp, micro_batch_count(plan), plan.vpp);
  const auto sim = simulate_timeline(schedule, table, wo.policy, hw);

  r.step_report = sim.report;
  r.step_report.step_time = sim.report.step_time + dp_sync_time(cfg, plan, hw);
  const auto thr = summarize(r.step_report.step_time, cfg, plan, hw);
  r.step_report.mfu = thr.mfu;
  r.step_report.tps = thr.tps;
  r.training_throughput = thr.tps;
  return r;
}

void fill_inference(CostReport &r, const ModelConfig &cfg, const ParallelPlan &plan, const HardwareDescription &hw,
                    const SearchOptions &options) {
  const int64_t instance = plan.tp * plan.pp * plan.ep;
  const double batch = d(options.decode_batch_per_device) * d(instance);
  const double context = d(cfg.seq_len);
  const double dtype = d(cfg.dtype_bytes);
  const double layers = d(cfg.num_layers);
  const double moe_layers = cfg.num_routed_experts > 0 ? d(cfg.num_moe_layers()) : 0.0;

  const double flops = batch * main_model_forward_flops(cfg);
  const double routed = d(cfg.num_routed_experts) * d(expert_params(cfg));
  // Weights read once per step: everything but the input embedding and untouched experts.
  const double always_read = d(count_parameters(cfg).total) - d(cfg.vocab_size) * d(cfg.hidden_size) -
                             moe_layers * routed - d(cfg.num_mtp_layers) * d(mtp_module_params(cfg));
  const double touched =
      moe_layers * expected_experts_touched(cfg.num_routed_experts, cfg.top_k, batch) * d(expert_params(cfg));
  const double kv = batch * context * d(cfg.mla_dims.kv_rank + cfg.mla_dims.rope_dim) * layers * dtype;
  const double act = batch * d(cfg.hidden_size) * layers * kDecodeActivationTraffic * dtype;
  const double bytes = (always_read + touched) * dtype + kv + act;

  double step = kernel_time(flops / d(instance), bytes / d(instance), hw, hw.matmul_efficiency);
  const int64_t ranks = plan.tp * plan.ep;
  if (ranks > 1 && moe_layers > 0) {
    const CommGroup g = make_comm_group(hw, ranks, 1);
    const double volume = batch / d(plan.pp) * d(cfg.top_k) * d(cfg.hidden_size) * dtype;
    step += moe_layers / d(plan.pp) * 2.0 * collective_time(CollectiveKind::kAllToAll, volume, g);
  }
  const double replicas = d(hw.world_size()) / d(instance);
  r.inference_throughput = batch / step * replicas;
  r.inference_utilization =
      r.inference_throughput * main_model_forward_flops(cfg) / (d(hw.world_size()) * hw.peak_flops_per_device);
}

std::string plan_key(const ParallelPlan &p) {
  return std::to_string(p.tp) + "." + std::to_string(p.pp) + "." + std::to_string(p.vpp) + "." +
         std::to_string(p.ep) + "." + std::to_string(p.dp) + "." + std::to_string(p.cp) + "." +
         std::to_string(p.micro_batch_size) + "." + std::to_string(p.global_batch_size);
}

}  // namespace

const char *score_mode_name(ScoreMode mode) { return mode == ScoreMode::kTraining ? "training" : "inference"; }

ScoreMode parse_score_mode(const std::string &name) {
  if (name == "training") return ScoreMode::kTraining;
  if (name == "inference") return ScoreMode::kInference;
  throw SimError(ErrorKind::kParseError, "mode must be training or inference, got '" + name + "'");
}

double expected_experts_touched(int64_t num_experts, int64_t top_k, double tokens) {
  if (num_experts <= 0) return 0.0;
  const double miss = 1.0 - d(top_k) / d(num_experts);
  return d(num_experts) * (1.0 - std::pow(miss, tokens));
}

CostReport score_config(const ModelConfig &cfg, const ParallelPlan &plan, const HardwareDescription &hw,
                        ScoreMode mode, const SearchOptions &options) {
  require_valid(cfg);
  require_valid(hw);
  const ParallelPlan resolved = resolve_plan(plan, cfg, hw);
  if (mode == ScoreMode::kTraining) {
    CostReport r = score_training(cfg, resolved, hw, options);
    r.score = ranking_score(r, options);
    return r;
  }
  CostReport r;
  r.model_id = model_id(cfg);
  r.model = cfg;
  r.plan = resolved;
  fill_inference(r, cfg, resolved, hw, options);
  r.score = ranking_score(r, options);
  return r;
}

CostReport score_both(const ModelConfig &cfg, const ParallelPlan &plan, const HardwareDescription &hw,
                      const SearchOptions &options) {
  CostReport r = score_config(cfg, plan, hw, ScoreMode::kTraining, options);
  fill_inference(r, cfg, r.plan, hw, options);
  r.score = ranking_score(r, options);
  return r;
}

double ranking_score(const CostReport &report, const SearchOptions &options) {
  return options.training_weight * report.step_report.mfu + options.inference_weight * report.inference_utilization;
}

std::vector<CostReport> search_space(const DesignSpace &space, const std::vector<ParallelPlan> &plans,
                                     const HardwareDescription &hw, size_t top_k, const SearchOptions &options) {
  if (top_k < 1) throw SimError(ErrorKind::kInvalidArgument, "top_k must be >= 1");
  const auto configs = enumerate_design_space(space);

  struct Candidate {
    const ModelConfig *cfg;
    ParallelPlan plan;
  };
  std::vector<Candidate> candidates;
  for (const auto &cfg : configs) {
    for (const auto &plan : plans) {
      const auto v = validate_plan(plan, cfg, hw);
      if (v.ok()) candidates.push_back({&cfg, v.resolved});
    }
  }
  if (candidates.empty()) throw SimError(ErrorKind::kEmptySpace, "no (model, plan) pair passes validation");

  std::vector<std::optional<CostReport>> results(candidates.size());
  std::atomic<size_t> next{0};
  auto worker = [&] {
    for (size_t i = next++; i < candidates.size(); i = next++) {
      try {
        results[i] = score_both(*candidates[i].cfg, candidates[i].plan, hw, options);
      } catch (const SimError &e) {
        // Infeasible memory or an unplaceable chunking drops the candidate.
        if (e.kind() != ErrorKind::kInfeasible && e.kind() != ErrorKind::kInfeasibleChunking &&
            e.kind() != ErrorKind::kNonDivisible) {
          throw;
        }
      }
    }
  };
  const int64_t n_workers = std::clamp<int64_t>(options.workers, 1, static_cast<int64_t>(candidates.size()));
  if (n_workers == 1) {
    worker();
  } else {
    std::vector<std::thread> pool;
    std::vector<std::exception_ptr> errors(static_cast<size_t>(n_workers));
    for (int64_t w = 0; w < n_workers; ++w) {
      pool.emplace_back([&, w] {
        try {
          worker();
        } catch (...) {
          errors[static_cast<size_t>(w)] = std::current_exception();
          next = candidates.size();
        }
      });
    }
    for (auto &t : pool) t.join();
    for (auto &e : errors) {
      if (e) std::rethrow_exception(e);
    }
  }

  std::vector<CostReport> ranked;
  for (auto &r : results) {
    if (r) ranked.push_back(std::move(*r));
  }
  if (ranked.empty()) throw SimError(ErrorKind::kEmptySpace, "every candidate is infeasible");
  std::stable_sort(ranked.begin(), ranked.end(), [](const CostReport &a, const CostReport &b) {
    if (a.score != b.score) return a.score > b.score;
    if (a.model_id != b.model_id) return a.model_id < b.model_id;
    return plan_key(a.plan) < plan_key(b.plan);
  });
  if (ranked.size() > top_k) ranked.resize(top_k);
  for (size_t i = 0; i < ranked.size(); ++i) ranked[i].rank = static_cast<int64_t>(i) + 1;
  return ranked;
}

}  // namespace moesim
