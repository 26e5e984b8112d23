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

#ifndef MOESIM_MOE_BALANCE_H_
#define MOESIM_MOE_BALANCE_H_

#include <cstdint>
#include <iosfwd>
#include <map>
#include <optional>
#include <string>
#include <vector>

namespace moesim {

struct TokenRoute {
  int64_t seq_id = 0;
  int64_t micro_batch_id = 0;
  std::string task_label;
  std::vector<int32_t> selected;  // K distinct expert ids
  std::vector<double> scores;     // gating score per selected expert

  bool operator==(const TokenRoute &) const = default;
};

struct RoutingTrace {
  int64_t num_experts = 0;
  int64_t top_k = 0;
  int64_t seq_len = 0;
  std::vector<TokenRoute> tokens;

  bool operator==(const RoutingTrace &) const = default;
};

// Throws SimError(kInvalidArgument) on out-of-range or repeated ids and negative scores.
void require_valid(const RoutingTrace &trace);

struct TraceSpec {
  int64_t num_tokens = 0;
  int64_t num_experts = 0;
  int64_t top_k = 0;
  double skew_concentration = 1.0;
  double temporal_autocorrelation = 0.0;
  uint64_t seed = 0;
  int64_t seq_len = 4096;
  int64_t tokens_per_step = 4096;  // tokens between preference updates
  int64_t micro_batch_size = 1;    // sequences per micro-batch
  int64_t num_tasks = 1;           // sequences are labelled task0.. round-robin
};

void require_valid(const TraceSpec &spec);

// Symmetric Dirichlet expert preference, mixed each step with a fresh draw:
// pref <- rho * pref + (1 - rho) * fresh. Tokens pick top_k experts without
// replacement in proportion to pref; scores are the picked weights normalized
// to sum to one. Deterministic in the seed.
RoutingTrace generate_trace(const TraceSpec &spec);

// Line-delimited records: a "# num_experts=N top_k=K seq_len=T" header, then
// seq_id,micro_batch_id,task_label,e_1..e_K,s_1..s_K per token.
void write_trace(std::ostream &out, const RoutingTrace &trace);
RoutingTrace read_trace(std::istream &in);

enum class AuxLevel { kSequence, kMicroBatch, kEpGroup, kDpGroup };

const char *aux_level_name(AuxLevel level);
AuxLevel parse_aux_level(const std::string &name);

struct AuxGrouping {
  int64_t ep = 1;
  int64_t dp = 1;
  int64_t micro_batch_size = 1;
};

struct AuxLossResult {
  AuxLevel level = AuxLevel::kSequence;
  double alpha = 0.0;
  double loss = 0.0;    // alpha * sum_fp
  double sum_fp = 0.0;  // sum_i f_i p_i, averaged over the level's groups
  std::vector<double> f;
  std::vector<double> p;
  int64_t balance_bsz = 0;
};

int64_t balance_bsz(AuxLevel level, const AuxGrouping &grouping, int64_t seq_len);

// Groups tokens by the level's scope (sequence: seq_id, micro-batch:
// micro_batch_id, EP group: micro_batch_id / ep, DP group: micro_batch_id / dp)
// and averages the per-group loss. Throws SimError(kEmptyWindow).
AuxLossResult aux_loss(const RoutingTrace &window, AuxLevel level, double alpha, const AuxGrouping &grouping);

struct DropStats {
  double drop_rate = 0.0;
  int64_t capacity = 0;  // per expert; -1 when unbounded
  std::vector<int64_t> per_expert_drops;
};

// Capacity ceil(C * tokens * K / N) per expert over the whole trace; later
// arrivals past capacity are dropped. C = +inf disables dropping.
DropStats capacity_drop_stats(const RoutingTrace &trace, double capacity_factor);

struct PlacementPlan {
  int64_t num_devices = 0;
  int64_t slots_per_device = 0;
  std::vector<std::pair<int64_t, int64_t>> expert_to_slot;  // expert -> (device, slot)
  std::vector<double> predicted_loads;
  double cv_before = 0.0;
  double cv_after = 0.0;
  int64_t moved_experts = 0;
  double swap_bytes = 0.0;

  int64_t device_of(int64_t expert) const { return expert_to_slot[static_cast<size_t>(expert)].first; }
};

// Expert e on device e / slots_per_device.
PlacementPlan identity_placement(int64_t num_experts, int64_t num_devices);

struct DeviceLoadStats {
  std::vector<double> per_device_loads;
  double cv = 0.0;  // population std / mean
};

double coefficient_of_variation(const std::vector<double> &values);

// Throws SimError(kZeroMean) when the loads sum to zero.
DeviceLoadStats device_load_stats(const std::vector<double> &expert_loads, const PlacementPlan &placement);
DeviceLoadStats device_load_stats(const RoutingTrace &window, const PlacementPlan &placement);

std::vector<double> expert_loads(const RoutingTrace &trace, size_t begin = 0, size_t end = SIZE_MAX);

// Per-step expert load vectors, one per block of tokens_per_step tokens.
std::vector<std::vector<double>> expert_load_series(const RoutingTrace &trace, int64_t tokens_per_step);

// Element-wise mean of the last min(window, |history|) vectors; with no history
// every expert gets expected_tokens / num_experts.
std::vector<double> predict_loads(const std::vector<std::vector<double>> &history, int64_t window,
                                  int64_t num_experts = 0, double expected_tokens = 0.0);

// Sums group-local load vectors before planning.
std::vector<double> synchronize_loads(const std::vector<std::vector<double>> &group_loads);

// Bytes moved per relocated expert: bf16 weights plus fp32 master and two moments.
constexpr double kSwapBytesPerParam = 2.0 + 4.0 + 8.0;

// Descending-load greedy: each expert goes to the least-loaded device that still
// has a free slot (ties: lower device, then lower expert id). cv_before and
// moved_experts are relative to `previous` (identity placement when absent).
// Throws SimError(kSlotMismatch) unless num_devices * slots_per_device == N.
PlacementPlan greedy_place(const std::vector<double> &predicted_loads, int64_t num_devices, int64_t slots_per_device,
                           const PlacementPlan *previous = nullptr, int64_t expert_param_count = 0);

enum class TrainingPhase { kPretrain, kSft };

const char *training_phase_name(TrainingPhase phase);
TrainingPhase parse_training_phase(const std::string &name);

// Pretrain: place at the first observation, then replan whenever the observed CV
// exceeds the CV recorded at the last placement by more than the threshold.
// SFT: place exactly once, at the first observation.
class RebalanceController {
 public:
  explicit RebalanceController(TrainingPhase phase, double threshold = 0.05);

  bool observe(double cv);
  // Replaces the recorded CV with the one the new placement achieved.
  void placed(double cv_after) { cv_at_placement_ = cv_after; }
  int64_t placements() const { return placements_; }

 private:
  TrainingPhase phase_;
  double threshold_;
  std::optional<double> cv_at_placement_;
  int64_t placements_ = 0;
};

// Replan flags for a whole CV series.
std::vector<bool> rebalance_controller(const std::vector<double> &cv_history, double threshold, TrainingPhase phase);

struct BalanceOptions {
  int64_t num_devices = 8;
  int64_t window = 5;
  double threshold = 0.05;
  TrainingPhase phase = TrainingPhase::kPretrain;
  int64_t tokens_per_step = 4096;
  int64_t expert_param_count = 0;
};

struct BalanceStep {
  int64_t step = 0;
  double cv_static = 0.0;
  double cv_dynamic = 0.0;
  bool replanned = false;
  int64_t moved_experts = 0;
  double swap_bytes = 0.0;
};

struct BalanceReport {
  std::vector<BalanceStep> steps;
  double mean_cv_static = 0.0;
  double mean_cv_dynamic = 0.0;

  double cv_reduction() const { return mean_cv_static > 0.0 ? 1.0 - mean_cv_dynamic / mean_cv_static : 0.0; }
};

// Replays the trace step by step: the static arm keeps the id-order placement;
// the dynamic arm predicts from a sliding window and replans on the controller's
// signal. Each step's CV is measured on that step's actual loads.
BalanceReport simulate_balance(const RoutingTrace &trace, const BalanceOptions &options);

struct TraceStatistics {
  std::vector<std::vector<double>> coactivation;  // [i][j] = P(j selected | i selected)
  std::map<std::string, std::vector<double>> specialization;  // task -> per-expert token share
  double uniform_share = 0.0;                                  // K / N
};

TraceStatistics trace_statistics(const RoutingTrace &trace);

}  // namespace moesim

#endif  // MOESIM_MOE_BALANCE_H_
