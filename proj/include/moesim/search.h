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

#ifndef MOESIM_SEARCH_H_
#define MOESIM_SEARCH_H_

#include <cstdint>
#include <string>
#include <vector>

#include "moesim/cluster_spec.h"
#include "moesim/comm_model.h"
#include "moesim/memory_model.h"
#include "moesim/model_spec.h"
#include "moesim/parallel_plan.h"
#include "moesim/pipeline_sim.h"

namespace moesim {

enum class ScoreMode { kTraining, kInference };

const char *score_mode_name(ScoreMode mode);
ScoreMode parse_score_mode(const std::string &name);

struct FeatureToggles {
  bool overlap = true;                 // comm overlap and decoupled expert dW
  bool fine_grained_recompute = true;  // false: whole-layer recomputation
  bool host_optimization = true;       // GMM dispatched ahead of the host sync
};

struct SearchOptions {
  double training_weight = 0.5;
  double inference_weight = 0.5;
  int64_t workers = 1;
  FeatureToggles features;
  DispatchMechanism dispatch = DispatchMechanism::kHierarchical;
  int64_t coc_tiles = 4;
  int64_t decode_batch_per_device = 32;
};

struct CostReport {
  std::string model_id;
  ModelConfig model;
  ParallelPlan plan;  // resolved
  StepReport step_report;
  MemoryReport memory_report;
  MemoryPlan memory_plan;
  double training_throughput = 0.0;   // tokens/s, whole cluster
  double inference_throughput = 0.0;  // decode tokens/s, whole cluster
  double inference_utilization = 0.0; // useful decode FLOP rate over peak
  double score = 0.0;
  int64_t rank = 0;
};

// Training: pipeline simulation under the selected memory plan.
// Inference: one decode step as a roofline over touched weights and KV cache.
// Throws SimError(kInfeasible) when memory cannot be made to fit.
CostReport score_config(const ModelConfig &cfg, const ParallelPlan &plan, const HardwareDescription &hw,
                        ScoreMode mode, const SearchOptions &options = {});

// Both modes merged into one report with its ranking score.
CostReport score_both(const ModelConfig &cfg, const ParallelPlan &plan, const HardwareDescription &hw,
                      const SearchOptions &options = {});

// Weighted sum of training MFU and decode utilization.
double ranking_score(const CostReport &report, const SearchOptions &options);

// Expected number of distinct experts touched when `tokens` tokens each pick
// top_k of num_experts uniformly.
double expected_experts_touched(int64_t num_experts, int64_t top_k, double tokens);

// Scores every valid (cfg, plan) pair and returns the best top_k, ranked by
// descending score with ties broken by model_id. Throws SimError(kEmptySpace).
std::vector<CostReport> search_space(const DesignSpace &space, const std::vector<ParallelPlan> &plans,
                                     const HardwareDescription &hw, size_t top_k, const SearchOptions &options = {});

}  // namespace moesim

#endif  // MOESIM_SEARCH_H_
