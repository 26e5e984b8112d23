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

#include "moesim/parallel_plan.h"

#include <algorithm>
#include <cmath>
#include <limits>

#include "moesim/error.h"

namespace moesim {

namespace {

std::string kv(const char *name, int64_t v) { return std::string(name) + "=" + std::to_string(v); }

}  // namespace

PlanValidation validate_plan(const ParallelPlan &plan, const ModelConfig &cfg, const HardwareDescription &hw) {
  PlanValidation out;
  out.resolved = plan;
  auto &errors = out.errors;

  bool factors_ok = true;
  auto at_least_one = [&](const char *name, int64_t v) {
    if (v < 1) {
      errors.push_back(std::string(name) + " must be >= 1, got " + std::to_string(v));
      factors_ok = false;
    }
  };
  at_least_one("tp", plan.tp);
  at_least_one("pp", plan.pp);
  at_least_one("vpp", plan.vpp);
  at_least_one("ep", plan.ep);
  at_least_one("cp", plan.cp);
  at_least_one("micro_batch_size", plan.micro_batch_size);
  at_least_one("global_batch_size", plan.global_batch_size);
  if (plan.dp < 0) {
    errors.push_back("dp must be >= 1 (or 0 to derive), got " + std::to_string(plan.dp));
    factors_ok = false;
  }
  if (!factors_ok) return out;

  const int64_t world = hw.world_size();
  const int64_t model_parallel = plan.tp * plan.pp * plan.cp;
  if (model_parallel > world || world % model_parallel != 0) {
    errors.push_back("tp*pp*cp=" + std::to_string(model_parallel) + " does not divide world_size=" +
                     std::to_string(world) + " (" + kv("tp", plan.tp) + ", " + kv("pp", plan.pp) + ", " +
                     kv("cp", plan.cp) + ")");
    return out;
  }
  const int64_t derived_dp = world / model_parallel;
  if (plan.dp == 0) {
    out.resolved.dp = derived_dp;
  } else if (plan.dp != derived_dp) {
    errors.push_back("tp*pp*dp*cp=" + std::to_string(model_parallel * plan.dp) + " != world_size=" +
                     std::to_string(world));
  }
  const int64_t dp = out.resolved.dp;

  if (dp < plan.ep) errors.push_back("dp must be >= ep (" + kv("dp", dp) + ", " + kv("ep", plan.ep) + ")");
  if (dp % plan.ep != 0) {
    errors.push_back("ep must divide dp (" + kv("dp", dp) + ", " + kv("ep", plan.ep) + ")");
  }
  if (cfg.num_moe_layers() > 0 || cfg.num_mtp_layers > 0) {
    const int64_t expert_ranks = plan.tp * plan.ep;
    if (cfg.num_routed_experts % expert_ranks != 0) {
      errors.push_back("num_routed_experts=" + std::to_string(cfg.num_routed_experts) +
                       " not divisible by tp*ep=" + std::to_string(expert_ranks));
    }
  }
  const int64_t chunks = plan.pp * plan.vpp;
  const int64_t items = cfg.num_layers + cfg.num_mtp_layers + 1;
  if (items < chunks) {
    errors.push_back("model has " + std::to_string(items) + " pipeline items, fewer than pp*vpp=" +
                     std::to_string(chunks) + " chunks");
  }
  if (plan.global_batch_size % (dp * plan.micro_batch_size) != 0) {
    errors.push_back("global_batch_size=" + std::to_string(plan.global_batch_size) + " not divisible by dp*mbs=" +
                     std::to_string(dp * plan.micro_batch_size));
  }
  if (cfg.seq_len % plan.cp != 0) {
    errors.push_back("seq_len=" + std::to_string(cfg.seq_len) + " not divisible by cp=" + std::to_string(plan.cp));
  }
  return out;
}

ParallelPlan resolve_plan(const ParallelPlan &plan, const ModelConfig &cfg, const HardwareDescription &hw) {
  auto v = validate_plan(plan, cfg, hw);
  if (!v.ok()) {
    std::string msg = "invalid parallel plan:";
    for (const auto &e : v.errors) msg += " " + e + ";";
    throw SimError(ErrorKind::kInvalidArgument, msg);
  }
  return v.resolved;
}

int64_t micro_batch_count(const ParallelPlan &plan) {
  const int64_t per_step = plan.dp * plan.micro_batch_size;
  if (per_step <= 0 || plan.global_batch_size % per_step != 0) {
    throw SimError(ErrorKind::kNonDivisible, "global_batch_size=" + std::to_string(plan.global_batch_size) +
                                                 " not divisible by dp*mbs=" + std::to_string(per_step));
  }
  return plan.global_batch_size / per_step;
}

double Chunk::weight() const {
  double w = 0.0;
  for (const auto &item : items) w += item.weight;
  return w;
}

std::vector<size_t> partition_contiguous(const std::vector<double> &weights, size_t num_chunks) {
  const size_t n = weights.size();
  if (num_chunks == 0 || n < num_chunks) {
    throw SimError(ErrorKind::kInfeasibleChunking,
                   std::to_string(n) + " items cannot fill " + std::to_string(num_chunks) + " chunks");
  }
  std::vector<double> prefix(n + 1, 0.0);
  for (size_t i = 0; i < n; ++i) prefix[i + 1] = prefix[i] + weights[i];
  const double tol = 1e-12 * std::max(1.0, prefix[n]);
  constexpr double kInf = std::numeric_limits<double>::infinity();

  // best[c][j]: optimal max weight for the first j items in c chunks.
  std::vector<std::vector<double>> best(num_chunks + 1, std::vector<double>(n + 1, kInf));
  std::vector<std::vector<size_t>> split(num_chunks + 1, std::vector<size_t>(n + 1, 0));
  best[0][0] = 0.0;
  for (size_t c = 1; c <= num_chunks; ++c) {
    for (size_t j = c; j <= n - (num_chunks - c); ++j) {
      for (size_t i = c - 1; i < j; ++i) {
        if (best[c - 1][i] == kInf) continue;
        const double cand = std::max(best[c - 1][i], prefix[j] - prefix[i]);
        if (cand < best[c][j] - tol) {
          best[c][j] = cand;
          split[c][j] = i;
        }
      }
    }
  }
  std::vector<size_t> starts(num_chunks);
  size_t j = n;
  for (size_t c = num_chunks; c >= 1; --c) {
    starts[c - 1] = split[c][j];
    j = split[c][j];
  }
  return starts;
}

std::vector<ChunkItem> model_items(const ModelConfig &cfg, const ChunkWeights &weights) {
  std::vector<ChunkItem> items;
  for (int64_t layer = 0; layer < cfg.num_layers; ++layer) {
    const bool dense = layer < cfg.num_dense_layers;
    items.push_back({(dense ? "dense_" : "moe_") + std::to_string(layer), dense ? weights.dense : weights.moe});
  }
  for (int64_t i = 0; i < cfg.num_mtp_layers; ++i) items.push_back({"mtp_" + std::to_string(i), weights.mtp_body});
  items.push_back({"head_loss", weights.head_loss});
  return items;
}

namespace {

bool is_regular(const ChunkItem &item) { return item.name.rfind("moe_", 0) == 0 || item.name.rfind("dense_", 0) == 0; }

void append_partition(const std::vector<ChunkItem> &items, size_t num_chunks, std::vector<Chunk> *chunks) {
  if (num_chunks == 0) return;
  std::vector<double> w;
  w.reserve(items.size());
  for (const auto &item : items) w.push_back(item.weight);
  auto starts = partition_contiguous(w, num_chunks);
  for (size_t c = 0; c < num_chunks; ++c) {
    const size_t end = c + 1 < num_chunks ? starts[c + 1] : items.size();
    Chunk chunk;
    chunk.items.assign(items.begin() + static_cast<std::ptrdiff_t>(starts[c]),
                       items.begin() + static_cast<std::ptrdiff_t>(end));
    chunks->push_back(std::move(chunk));
  }
}

StageAssignment finish(std::vector<Chunk> chunks, int64_t pp) {
  StageAssignment out;
  double regular_max = 0.0;
  bool any_regular = false;
  for (size_t c = 0; c < chunks.size(); ++c) {
    chunks[c].pp_stage = static_cast<int64_t>(c) % pp;
    chunks[c].vpp_stage = static_cast<int64_t>(c) / pp;
    const double w = chunks[c].weight();
    out.max_chunk_weight = std::max(out.max_chunk_weight, w);
    if (std::all_of(chunks[c].items.begin(), chunks[c].items.end(), is_regular)) {
      regular_max = std::max(regular_max, w);
      any_regular = true;
    }
  }
  out.baseline_weight = any_regular ? regular_max : out.max_chunk_weight;
  out.chunks = std::move(chunks);
  return out;
}

double max_weight(const std::vector<Chunk> &chunks) {
  double m = 0.0;
  for (const auto &c : chunks) m = std::max(m, c.weight());
  return m;
}

}  // namespace

StageAssignment assign_items(const std::vector<ChunkItem> &items, int64_t pp, int64_t vpp) {
  if (pp < 1 || vpp < 1) throw SimError(ErrorKind::kInvalidArgument, "pp and vpp must be >= 1");
  std::vector<Chunk> chunks;
  append_partition(items, static_cast<size_t>(pp * vpp), &chunks);
  return finish(std::move(chunks), pp);
}

StageAssignment assign_chunks(const ModelConfig &cfg, const ParallelPlan &plan, const ChunkWeights &weights) {
  if (plan.pp < 1 || plan.vpp < 1) throw SimError(ErrorKind::kInvalidArgument, "pp and vpp must be >= 1");
  const auto items = model_items(cfg, weights);
  const size_t num_chunks = static_cast<size_t>(plan.pp * plan.vpp);
  if (items.size() < num_chunks) {
    throw SimError(ErrorKind::kInfeasibleChunking, std::to_string(items.size()) + " items cannot fill " +
                                                       std::to_string(num_chunks) + " chunks");
  }
  if (num_chunks == 1) return assign_items(items, plan.pp, plan.vpp);

  const size_t regular_count = static_cast<size_t>(cfg.num_layers);
  const std::vector<ChunkItem> regular(items.begin(), items.begin() + static_cast<std::ptrdiff_t>(regular_count));
  const std::vector<ChunkItem> mtp(items.begin() + static_cast<std::ptrdiff_t>(regular_count), items.end() - 1);
  Chunk head_chunk;
  head_chunk.items.push_back(items.back());

  if (mtp.empty()) {
    std::vector<Chunk> chunks;
    append_partition(regular, num_chunks - 1, &chunks);
    chunks.push_back(head_chunk);
    return finish(std::move(chunks), plan.pp);
  }

  // Try the MTP chunk with one borrowed layer first so ties keep the earlier split.
  std::vector<Chunk> best;
  double best_max = std::numeric_limits<double>::infinity();
  for (size_t borrowed : {size_t{1}, size_t{0}}) {
    if (borrowed > regular_count) continue;
    const size_t rest_count = regular_count - borrowed;
    const size_t rest_chunks = num_chunks - 2;
    if (rest_count < rest_chunks || (rest_chunks == 0 && rest_count > 0)) continue;
    std::vector<Chunk> chunks;
    const std::vector<ChunkItem> rest(regular.begin(), regular.begin() + static_cast<std::ptrdiff_t>(rest_count));
    append_partition(rest, rest_chunks, &chunks);
    Chunk mtp_chunk;
    mtp_chunk.items.assign(regular.begin() + static_cast<std::ptrdiff_t>(rest_count), regular.end());
    mtp_chunk.items.insert(mtp_chunk.items.end(), mtp.begin(), mtp.end());
    chunks.push_back(std::move(mtp_chunk));
    chunks.push_back(head_chunk);
    const double m = max_weight(chunks);
    if (m < best_max - 1e-12) {
      best_max = m;
      best = std::move(chunks);
    }
  }
  if (best.empty()) {
    throw SimError(ErrorKind::kInfeasibleChunking, "cannot place MTP and head chunks into " +
                                                       std::to_string(num_chunks) + " chunks");
  }
  return finish(std::move(best), plan.pp);
}

}  // namespace moesim
