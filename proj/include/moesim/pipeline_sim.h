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

#ifndef MOESIM_PIPELINE_SIM_H_
#define MOESIM_PIPELINE_SIM_H_

#include <cstdint>
#include <string>
#include <vector>

#include "moesim/cluster_spec.h"
#include "moesim/comm_model.h"
#include "moesim/model_spec.h"
#include "moesim/parallel_plan.h"

namespace moesim {

enum class Phase { kForward, kBackward };

struct ScheduleSlot {
  int64_t pp_stage = 0;
  int64_t vpp_stage = 0;
  int64_t micro_batch = 0;
  Phase phase = Phase::kForward;

  bool operator==(const ScheduleSlot &) const = default;
};

// Execution order of chunk passes, one list per pipeline stage.
using Schedule = std::vector<std::vector<ScheduleSlot>>;

double analytic_bubble_ratio(int64_t p, int64_t m, int64_t v);

// Interleaved 1F1B: per stage, a warmup of forwards followed by strict F/B
// alternation and a backward cooldown. Micro-batches advance through virtual
// chunks in groups of p.
Schedule build_1f1b_schedule(int64_t p, int64_t m, int64_t v);

// ---------------------------------------------------------------------------
// Generic task-graph engine.
//
// Each task runs on one (device, resource) pair. Tasks sharing a pair execute
// in insertion order; a task starts once its resource predecessor and all of
// its dependencies have finished.

enum class Resource { kCompute, kInterLink, kIntraLink, kHost, kSwapOut, kSwapIn };

const char *resource_name(Resource r);

struct Task {
  int64_t device = 0;
  Resource resource = Resource::kCompute;
  double duration = 0.0;
  std::vector<int> deps;
  int host_dep = -1;  // the dispatching host task, if any (also present in deps)
  std::string label;
};

struct TaskGraph {
  int64_t num_devices = 1;
  std::vector<Task> tasks;

  int add(Task task);
};

struct Timeline {
  TaskGraph graph;
  std::vector<double> start;
  std::vector<double> end;
  std::vector<double> host_wait;  // per task: delay attributable to host dispatch
  double makespan = 0.0;
};

// Throws SimError(kDeadlockDetected) when dependencies and resource order cycle.
Timeline run_task_graph(TaskGraph graph);

struct StepReport {
  double step_time = 0.0;
  double bubble_ratio = 0.0;
  double comm_overlap_rate = 1.0;
  double exposed_comm = 0.0;  // seconds, summed over devices
  double total_comm = 0.0;    // seconds, summed over devices
  double host_idle = 0.0;     // device seconds spent waiting on host dispatch
  double swap_stall = 0.0;    // seconds a dependent compute waited on a prefetch
  double mfu = 0.0;
  double tps = 0.0;
};

// Bubble ratio, overlap rate, exposed comm and host idle of a timeline.
StepReport measure_timeline(const Timeline &timeline);

// ---------------------------------------------------------------------------
// Pipeline simulation.

struct PassComm {
  LinkResource resource = LinkResource::kIntraLink;
  double seconds = 0.0;
  std::vector<int> deps;  // indices into the same pass list
  std::string label;
};

// Cost of one pass of one virtual chunk for one micro-batch.
struct ChunkCost {
  double fwd = 0.0;
  double bwd = 0.0;
  double bwd_dw_fraction = 0.0;  // movable expert weight-gradient share of bwd
  double pre_fraction = 0.4;     // attention, router, preprocess
  double gmm_fraction = 0.5;     // grouped expert matmul; the rest is post-processing
  bool has_moe = false;
  int64_t host_ops_pre = 0;
  int64_t host_ops_gmm = 0;
  int64_t host_ops_post = 0;
  std::vector<PassComm> fwd_comm;
  std::vector<PassComm> bwd_comm;
  double p2p_seconds = 0.0;  // activation (or gradient) hand-off to the neighbouring chunk
  double swap_seconds = 0.0; // probs offload in forward, prefetch in backward
};

// Indexed [vpp_stage][pp_stage].
using ChunkCostTable = std::vector<std::vector<ChunkCost>>;

struct OverlapPolicy {
  bool overlap_comm = true;    // comm runs beside compute of later passes
  bool decouple_dw = true;     // expert dW no longer gates the backward hand-off
  bool host_gmm_first = true;  // GMM dispatched ahead of the preprocess sync
};

struct SimulationResult {
  StepReport report;
  Timeline timeline;
};

SimulationResult simulate_timeline(const Schedule &schedule, const ChunkCostTable &chunk_costs,
                                   const OverlapPolicy &policy, const HardwareDescription &hw);

struct Throughput {
  double mfu = 0.0;
  double tps = 0.0;
};

// mfu = tps * 3 * forward_flops_per_token / (world_size * peak).
Throughput summarize(double step_time, double tokens_per_step, double forward_flops_per_token, int64_t world_size,
                     double peak_flops_per_device);
Throughput summarize(double step_time, const ModelConfig &cfg, const ParallelPlan &plan,
                     const HardwareDescription &hw);

}  // namespace moesim

#endif  // MOESIM_PIPELINE_SIM_H_
