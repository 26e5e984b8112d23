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

#include "moesim/pipeline_sim.h"

#include <algorithm>
#include <map>
#include <queue>
#include <utility>

#include "moesim/error.h"

namespace moesim {

double analytic_bubble_ratio(int64_t p, int64_t m, int64_t v) {
  if (p < 1 || m < 1 || v < 1) throw SimError(ErrorKind::kInvalidArgument, "p, m, v must be >= 1");
  const double bubble = static_cast<double>(p - 1);
  return bubble / (static_cast<double>(v * m) + bubble);
}

Schedule build_1f1b_schedule(int64_t p, int64_t m, int64_t v) {
  if (p < 1 || m < 1 || v < 1) throw SimError(ErrorKind::kInvalidArgument, "p, m, v must be >= 1");
  // Order in which a stage visits (chunk, micro-batch) pairs.
  std::vector<std::pair<int64_t, int64_t>> forward_order;
  for (int64_t group = 0; group < m; group += p) {
    const int64_t group_size = std::min(p, m - group);
    for (int64_t chunk = 0; chunk < v; ++chunk) {
      for (int64_t j = 0; j < group_size; ++j) forward_order.emplace_back(chunk, group + j);
    }
  }
  auto backward_at = [&](size_t k) {
    auto [chunk, mb] = forward_order[k];
    return std::make_pair(v - 1 - chunk, mb);
  };

  const int64_t total = m * v;
  Schedule schedule(static_cast<size_t>(p));
  for (int64_t s = 0; s < p; ++s) {
    int64_t warmup = v == 1 ? p - s - 1 : (p - s - 1) * 2 + (v - 1) * p;
    // A partial micro-batch group breaks the interleaved warmup accounting and can
    // deadlock; run all forwards first in that case.
    if (v > 1 && m % p != 0) warmup = total;
    warmup = std::min(warmup, total);
    auto &slots = schedule[static_cast<size_t>(s)];
    auto push = [&](std::pair<int64_t, int64_t> cm, Phase phase) {
      slots.push_back(ScheduleSlot{s, cm.first, cm.second, phase});
    };
    for (int64_t k = 0; k < warmup; ++k) push(forward_order[static_cast<size_t>(k)], Phase::kForward);
    const int64_t steady = total - warmup;
    for (int64_t r = 0; r < steady; ++r) {
      push(forward_order[static_cast<size_t>(warmup + r)], Phase::kForward);
      push(backward_at(static_cast<size_t>(r)), Phase::kBackward);
    }
    for (int64_t r = steady; r < total; ++r) push(backward_at(static_cast<size_t>(r)), Phase::kBackward);
  }
  return schedule;
}

const char *resource_name(Resource r) {
  switch (r) {
    case Resource::kCompute: return "compute";
    case Resource::kInterLink: return "inter_link";
    case Resource::kIntraLink: return "intra_link";
    case Resource::kHost: return "host";
    case Resource::kSwapOut: return "swap_out";
    case Resource::kSwapIn: return "swap_in";
  }
  return "unknown";
}

int TaskGraph::add(Task task) {
  tasks.push_back(std::move(task));
  return static_cast<int>(tasks.size()) - 1;
}

namespace {

constexpr int kNumResources = 6;

int64_t resource_key(const Task &t) { return t.device * kNumResources + static_cast<int64_t>(t.resource); }

bool is_comm(Resource r) { return r == Resource::kInterLink || r == Resource::kIntraLink; }

}  // namespace

Timeline run_task_graph(TaskGraph graph) {
  const size_t n = graph.tasks.size();
  std::vector<int> resource_pred(n, -1);
  {
    std::map<int64_t, int> last;
    for (size_t i = 0; i < n; ++i) {
      const Task &t = graph.tasks[i];
      if (t.duration < 0.0) throw SimError(ErrorKind::kInvalidArgument, "task duration must be >= 0: " + t.label);
      auto it = last.find(resource_key(t));
      if (it != last.end()) resource_pred[i] = it->second;
      last[resource_key(t)] = static_cast<int>(i);
    }
  }
  std::vector<std::vector<int>> successors(n);
  std::vector<int> indegree(n, 0);
  for (size_t i = 0; i < n; ++i) {
    for (int d : graph.tasks[i].deps) {
      if (d < 0 || static_cast<size_t>(d) >= n) {
        throw SimError(ErrorKind::kInvalidArgument, "dependency out of range in task " + graph.tasks[i].label);
      }
      successors[static_cast<size_t>(d)].push_back(static_cast<int>(i));
      ++indegree[i];
    }
    if (resource_pred[i] >= 0) {
      successors[static_cast<size_t>(resource_pred[i])].push_back(static_cast<int>(i));
      ++indegree[i];
    }
  }

  Timeline tl;
  tl.start.assign(n, 0.0);
  tl.end.assign(n, 0.0);
  tl.host_wait.assign(n, 0.0);
  std::queue<int> ready;
  for (size_t i = 0; i < n; ++i) {
    if (indegree[i] == 0) ready.push(static_cast<int>(i));
  }
  size_t processed = 0;
  while (!ready.empty()) {
    const int i = ready.front();
    ready.pop();
    ++processed;
    const Task &t = graph.tasks[static_cast<size_t>(i)];
    double other = resource_pred[static_cast<size_t>(i)] >= 0 ? tl.end[static_cast<size_t>(resource_pred[i])] : 0.0;
    double host = 0.0;
    for (int d : t.deps) {
      if (d == t.host_dep) {
        host = std::max(host, tl.end[static_cast<size_t>(d)]);
      } else {
        other = std::max(other, tl.end[static_cast<size_t>(d)]);
      }
    }
    const double start = std::max(other, host);
    tl.start[static_cast<size_t>(i)] = start;
    tl.end[static_cast<size_t>(i)] = start + t.duration;
    if (t.host_dep >= 0) tl.host_wait[static_cast<size_t>(i)] = std::max(0.0, host - other);
    tl.makespan = std::max(tl.makespan, start + t.duration);
    for (int s : successors[static_cast<size_t>(i)]) {
      if (--indegree[static_cast<size_t>(s)] == 0) ready.push(s);
    }
  }
  if (processed != n) {
    throw SimError(ErrorKind::kDeadlockDetected,
                   std::to_string(n - processed) + " tasks blocked by cyclic dependencies or resource order");
  }
  tl.graph = std::move(graph);
  return tl;
}

StepReport measure_timeline(const Timeline &tl) {
  StepReport r;
  r.step_time = tl.makespan;
  const auto &tasks = tl.graph.tasks;
  const size_t devices = static_cast<size_t>(std::max<int64_t>(tl.graph.num_devices, 1));
  std::vector<std::vector<std::pair<double, double>>> compute(devices);
  double busy = 0.0;
  for (size_t i = 0; i < tasks.size(); ++i) {
    if (tasks[i].resource != Resource::kCompute) continue;
    if (tasks[i].duration > 0.0) compute[static_cast<size_t>(tasks[i].device)].emplace_back(tl.start[i], tl.end[i]);
    busy += tasks[i].duration;
    r.host_idle += tl.host_wait[i];
  }
  for (auto &intervals : compute) std::sort(intervals.begin(), intervals.end());
  if (tl.makespan > 0.0) r.bubble_ratio = 1.0 - busy / (static_cast<double>(devices) * tl.makespan);

  double overlapped = 0.0;
  for (size_t i = 0; i < tasks.size(); ++i) {
    if (!is_comm(tasks[i].resource) || tasks[i].duration <= 0.0) continue;
    r.total_comm += tasks[i].duration;
    const auto &intervals = compute[static_cast<size_t>(tasks[i].device)];
    const double a = tl.start[i];
    const double b = tl.end[i];
    // Compute intervals on one device never overlap each other, so sorted by start is sorted by end.
    auto it = std::lower_bound(intervals.begin(), intervals.end(), std::make_pair(a, a),
                               [](const auto &x, const auto &y) { return x.second < y.first; });
    for (; it != intervals.end() && it->first < b; ++it) {
      overlapped += std::max(0.0, std::min(b, it->second) - std::max(a, it->first));
    }
  }
  r.exposed_comm = std::max(0.0, r.total_comm - overlapped);
  r.comm_overlap_rate = r.total_comm > 0.0 ? overlapped / r.total_comm : 1.0;
  return r;
}

namespace {

struct PassTasks {
  int h_gmm = -1;
  int c_pre = -1;
  int c_gmm = -1;
  int prefetch = -1;
  int offload = -1;
  int p2p = -1;
  std::vector<int> output;    // tasks whose completion makes the pass result available locally
  std::vector<int> comm_all;  // all link tasks of the pass, including p2p
};

}  // namespace

SimulationResult simulate_timeline(const Schedule &schedule, const ChunkCostTable &chunk_costs,
                                   const OverlapPolicy &policy, const HardwareDescription &hw) {
  const int64_t p = static_cast<int64_t>(schedule.size());
  if (p == 0) throw SimError(ErrorKind::kInvalidArgument, "empty schedule");
  const int64_t v = static_cast<int64_t>(chunk_costs.size());
  if (v == 0) throw SimError(ErrorKind::kInvalidArgument, "empty chunk cost table");
  int64_t m = 0;
  for (const auto &row : chunk_costs) {
    if (static_cast<int64_t>(row.size()) != p) {
      throw SimError(ErrorKind::kInvalidArgument, "chunk cost table must be [vpp][pp]");
    }
    for (const auto &c : row) {
      if (c.fwd < 0.0 || c.bwd < 0.0 || c.p2p_seconds < 0.0 || c.swap_seconds < 0.0) {
        throw SimError(ErrorKind::kInvalidArgument, "chunk costs must be >= 0");
      }
    }
  }
  for (const auto &stage : schedule) {
    for (const auto &slot : stage) {
      if (slot.vpp_stage < 0 || slot.vpp_stage >= v) {
        throw SimError(ErrorKind::kInvalidArgument, "schedule references a chunk outside the cost table");
      }
      m = std::max(m, slot.micro_batch + 1);
    }
  }
  const int64_t last_chunk = p * v - 1;
  auto key = [&](int64_t global_chunk, int64_t mb, Phase phase) {
    return ((phase == Phase::kForward ? 0 : 1) * (last_chunk + 1) + global_chunk) * m + mb;
  };
  std::vector<PassTasks> passes(static_cast<size_t>(2 * (last_chunk + 1) * m));
  std::vector<bool> present(passes.size(), false);

  TaskGraph graph;
  graph.num_devices = p;
  const double host_op = hw.host_dispatch_time;

  for (int64_t s = 0; s < p; ++s) {
    const PassTasks *prev = nullptr;
    int prev_backward_pre = -1;
    for (const auto &slot : schedule[static_cast<size_t>(s)]) {
      if (slot.pp_stage != s) throw SimError(ErrorKind::kInvalidArgument, "slot listed under the wrong stage");
      const ChunkCost &cost = chunk_costs[static_cast<size_t>(slot.vpp_stage)][static_cast<size_t>(s)];
      const bool fwd = slot.phase == Phase::kForward;
      const int64_t global = slot.vpp_stage * p + s;
      const std::string tag = std::string(fwd ? "F" : "B") + "c" + std::to_string(global) + "m" +
                              std::to_string(slot.micro_batch);
      const auto k = static_cast<size_t>(key(global, slot.micro_batch, slot.phase));
      if (present[k]) throw SimError(ErrorKind::kInvalidArgument, "duplicate schedule slot " + tag);
      present[k] = true;
      PassTasks &pt = passes[k];

      const double dw = fwd ? 0.0 : cost.bwd * cost.bwd_dw_fraction;
      const double work = fwd ? cost.fwd : cost.bwd - dw;
      const double pre = work * cost.pre_fraction;
      const double gmm = work * cost.gmm_fraction;
      const double post = std::max(0.0, work - pre - gmm);

      auto host_task = [&](int64_t ops, std::vector<int> deps, const char *what) {
        return graph.add(Task{s, Resource::kHost, static_cast<double>(ops) * host_op, std::move(deps), -1,
                              tag + ".host_" + what});
      };
      auto compute_task = [&](double dur, std::vector<int> deps, int host, const char *what) {
        if (host >= 0) deps.push_back(host);
        return graph.add(Task{s, Resource::kCompute, dur, std::move(deps), host, tag + "." + what});
      };

      const int h_pre = host_task(cost.host_ops_pre, {}, "pre");
      std::vector<int> pre_deps;
      if (!policy.overlap_comm && prev != nullptr) {
        pre_deps.insert(pre_deps.end(), prev->comm_all.begin(), prev->comm_all.end());
      }
      pt.c_pre = compute_task(pre, pre_deps, h_pre, "pre");

      const bool sync_gmm = cost.has_moe && !policy.host_gmm_first;
      pt.h_gmm = host_task(cost.host_ops_gmm, sync_gmm ? std::vector<int>{pt.c_pre} : std::vector<int>{}, "gmm");

      const auto &comm = fwd ? cost.fwd_comm : cost.bwd_comm;
      std::vector<int> comm_ids;
      for (const auto &c : comm) {
        std::vector<int> deps{pt.c_pre};
        for (int d : c.deps) {
          if (d < 0 || static_cast<size_t>(d) >= comm_ids.size()) {
            throw SimError(ErrorKind::kDeadlockDetected, "comm event depends on a later or unknown event in " + tag);
          }
          deps.push_back(comm_ids[static_cast<size_t>(d)]);
        }
        const Resource r = c.resource == LinkResource::kInterLink ? Resource::kInterLink : Resource::kIntraLink;
        comm_ids.push_back(graph.add(Task{s, r, c.seconds, std::move(deps), -1, tag + "." + c.label}));
      }

      if (!fwd && cost.swap_seconds > 0.0) {
        std::vector<int> deps;
        const auto fk = static_cast<size_t>(key(global, slot.micro_batch, Phase::kForward));
        if (present[fk] && passes[fk].offload >= 0) deps.push_back(passes[fk].offload);
        if (prev_backward_pre >= 0) deps.push_back(prev_backward_pre);
        pt.prefetch = graph.add(Task{s, Resource::kSwapIn, cost.swap_seconds, std::move(deps), -1, tag + ".prefetch"});
      }

      std::vector<int> gmm_deps;
      if (!policy.overlap_comm) gmm_deps = comm_ids;
      if (pt.prefetch >= 0) gmm_deps.push_back(pt.prefetch);
      pt.c_gmm = compute_task(gmm, gmm_deps, pt.h_gmm, "gmm");

      const int h_post = host_task(cost.host_ops_post, cost.has_moe ? std::vector<int>{pt.c_pre} : std::vector<int>{},
                                   "post");
      const int c_post = compute_task(post, {}, h_post, "post");
      pt.output = {c_post};
      pt.output.insert(pt.output.end(), comm_ids.begin(), comm_ids.end());
      if (dw > 0.0) {
        const int c_dw = compute_task(dw, {}, -1, "dw");
        if (!policy.decouple_dw) pt.output.push_back(c_dw);
      }
      if (fwd && cost.swap_seconds > 0.0) {
        pt.offload = graph.add(Task{s, Resource::kSwapOut, cost.swap_seconds, {c_post}, -1, tag + ".offload"});
      }

      // Hand-off to the next pass in the dependency chain.
      int64_t next_chunk = -1;
      if (fwd) {
        next_chunk = global == last_chunk ? global : global + 1;
      } else if (global > 0) {
        next_chunk = global - 1;
      }
      const bool handoff_remote = next_chunk >= 0 && (next_chunk % p) != s;
      if (handoff_remote) {
        pt.p2p = graph.add(Task{s, Resource::kInterLink, cost.p2p_seconds, pt.output, -1, tag + ".p2p"});
      }
      pt.comm_all = comm_ids;
      if (pt.p2p >= 0) pt.comm_all.push_back(pt.p2p);
      if (!fwd) prev_backward_pre = pt.c_pre;
      prev = &pt;
    }
  }

  for (size_t k = 0; k < passes.size(); ++k) {
    if (!present[k]) throw SimError(ErrorKind::kInvalidArgument, "schedule is missing chunk passes");
  }

  // Cross-pass data dependencies.
  auto arrival = [&](const PassTasks &from) { return from.p2p >= 0 ? std::vector<int>{from.p2p} : from.output; };
  for (int64_t g = 0; g <= last_chunk; ++g) {
    for (int64_t mb = 0; mb < m; ++mb) {
      auto &f = passes[static_cast<size_t>(key(g, mb, Phase::kForward))];
      auto &b = passes[static_cast<size_t>(key(g, mb, Phase::kBackward))];
      if (g > 0) {
        auto deps = arrival(passes[static_cast<size_t>(key(g - 1, mb, Phase::kForward))]);
        auto &target = graph.tasks[static_cast<size_t>(f.c_pre)].deps;
        target.insert(target.end(), deps.begin(), deps.end());
      }
      const auto &pred = g == last_chunk ? f : passes[static_cast<size_t>(key(g + 1, mb, Phase::kBackward))];
      auto deps = arrival(pred);
      auto &target = graph.tasks[static_cast<size_t>(b.c_pre)].deps;
      target.insert(target.end(), deps.begin(), deps.end());
    }
  }

  SimulationResult result;
  result.timeline = run_task_graph(std::move(graph));
  result.report = measure_timeline(result.timeline);
  const auto &tl = result.timeline;
  for (const auto &pt : passes) {
    if (pt.prefetch < 0) continue;
    const double wanted = std::max(tl.end[static_cast<size_t>(pt.c_pre)], tl.end[static_cast<size_t>(pt.h_gmm)]);
    result.report.swap_stall += std::max(0.0, tl.end[static_cast<size_t>(pt.prefetch)] - wanted);
  }
  return result;
}

Throughput summarize(double step_time, double tokens_per_step, double forward_flops_per_token, int64_t world_size,
                     double peak_flops_per_device) {
  if (!(step_time > 0.0)) throw SimError(ErrorKind::kInvalidArgument, "step_time must be > 0");
  Throughput t;
  t.tps = tokens_per_step / step_time;
  t.mfu = t.tps * forward_flops_per_token * 3.0 / (static_cast<double>(world_size) * peak_flops_per_device);
  return t;
}

Throughput summarize(double step_time, const ModelConfig &cfg, const ParallelPlan &plan,
                     const HardwareDescription &hw) {
  const double tokens = static_cast<double>(plan.global_batch_size) * static_cast<double>(cfg.seq_len);
  const auto flops = flops_per_token(cfg, cfg.seq_len);
  return summarize(step_time, tokens, flops.forward_per_token, hw.world_size(), hw.peak_flops_per_device);
}

}  // namespace moesim
