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

#include "moesim/moe_balance.h"

#include <algorithm>
#include <cinttypes>
#include <cmath>
#include <cstdio>
#include <istream>
#include <numeric>
#include <ostream>
#include <random>
#include <sstream>

#include "moesim/error.h"

namespace moesim {

namespace {

double d(int64_t x) { return static_cast<double>(x); }

std::vector<double> dirichlet(std::mt19937_64 &rng, int64_t n, double alpha) {
  std::gamma_distribution<double> gamma(alpha, 1.0);
  std::vector<double> x(static_cast<size_t>(n));
  double sum = 0.0;
  for (auto &v : x) {
    v = gamma(rng);
    sum += v;
  }
  if (!(sum > 0.0)) {
    // Every draw underflowed (tiny alpha): all mass on one random expert.
    std::fill(x.begin(), x.end(), 0.0);
    x[std::uniform_int_distribution<size_t>(0, x.size() - 1)(rng)] = 1.0;
    return x;
  }
  for (auto &v : x) v /= sum;
  return x;
}

void check_window(const RoutingTrace &trace) {
  if (trace.tokens.empty()) throw SimError(ErrorKind::kEmptyWindow, "routing window has no tokens");
}

std::vector<std::string> split(const std::string &line, char sep) {
  std::vector<std::string> out;
  std::string cur;
  std::istringstream ss(line);
  while (std::getline(ss, cur, sep)) out.push_back(cur);
  if (!line.empty() && line.back() == sep) out.emplace_back();
  return out;
}

int64_t parse_int(const std::string &s, size_t line_no) {
  try {
    size_t used = 0;
    const long long v = std::stoll(s, &used);
    if (used != s.size()) throw std::invalid_argument(s);
    return v;
  } catch (const std::exception &) {
    throw SimError(ErrorKind::kParseError, "trace line " + std::to_string(line_no) + ": bad integer '" + s + "'");
  }
}

double parse_real(const std::string &s, size_t line_no) {
  try {
    size_t used = 0;
    const double v = std::stod(s, &used);
    if (used != s.size()) throw std::invalid_argument(s);
    return v;
  } catch (const std::exception &) {
    throw SimError(ErrorKind::kParseError, "trace line " + std::to_string(line_no) + ": bad number '" + s + "'");
  }
}

}  // namespace

void require_valid(const RoutingTrace &trace) {
  if (trace.num_experts < 1 || trace.top_k < 1 || trace.top_k > trace.num_experts) {
    throw SimError(ErrorKind::kInvalidArgument, "trace needs 1 <= top_k <= num_experts");
  }
  std::vector<int64_t> seen(static_cast<size_t>(trace.num_experts), -1);
  for (size_t t = 0; t < trace.tokens.size(); ++t) {
    const auto &tok = trace.tokens[t];
    if (static_cast<int64_t>(tok.selected.size()) != trace.top_k || tok.scores.size() != tok.selected.size()) {
      throw SimError(ErrorKind::kInvalidArgument, "token " + std::to_string(t) + " must carry top_k ids and scores");
    }
    for (size_t k = 0; k < tok.selected.size(); ++k) {
      const int32_t e = tok.selected[k];
      if (e < 0 || e >= trace.num_experts) {
        throw SimError(ErrorKind::kInvalidArgument, "token " + std::to_string(t) + " selects expert " +
                                                        std::to_string(e) + " outside [0, N)");
      }
      if (seen[static_cast<size_t>(e)] == static_cast<int64_t>(t)) {
        throw SimError(ErrorKind::kInvalidArgument, "token " + std::to_string(t) + " selects expert " +
                                                        std::to_string(e) + " twice");
      }
      seen[static_cast<size_t>(e)] = static_cast<int64_t>(t);
      if (!(tok.scores[k] >= 0.0)) {
        throw SimError(ErrorKind::kInvalidArgument, "token " + std::to_string(t) + " has a negative score");
      }
    }
  }
}

void require_valid(const TraceSpec &spec) {
  std::vector<std::string> errors;
  if (spec.num_tokens < 0) errors.push_back("num_tokens must be >= 0");
  if (spec.num_experts < 1) errors.push_back("num_experts must be >= 1");
  if (spec.top_k < 1 || spec.top_k > spec.num_experts) errors.push_back("top_k must lie in [1, num_experts]");
  if (!(spec.skew_concentration > 0.0)) errors.push_back("skew_concentration must be > 0");
  if (!(spec.temporal_autocorrelation >= 0.0 && spec.temporal_autocorrelation < 1.0)) {
    errors.push_back("temporal_autocorrelation must lie in [0, 1)");
  }
  if (spec.seq_len < 1) errors.push_back("seq_len must be >= 1");
  if (spec.tokens_per_step < 1) errors.push_back("tokens_per_step must be >= 1");
  if (spec.micro_batch_size < 1) errors.push_back("micro_batch_size must be >= 1");
  if (spec.num_tasks < 1) errors.push_back("num_tasks must be >= 1");
  if (!errors.empty()) {
    std::string msg = "invalid trace spec:";
    for (const auto &e : errors) msg += "\n  " + e;
    throw SimError(ErrorKind::kInvalidArgument, msg);
  }
}

RoutingTrace generate_trace(const TraceSpec &spec) {
  require_valid(spec);
  std::mt19937_64 rng(spec.seed);
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  const double rho = spec.temporal_autocorrelation;
  const auto n = static_cast<size_t>(spec.num_experts);

  RoutingTrace trace;
  trace.num_experts = spec.num_experts;
  trace.top_k = spec.top_k;
  trace.seq_len = spec.seq_len;
  trace.tokens.reserve(static_cast<size_t>(spec.num_tokens));

  std::vector<double> pref = dirichlet(rng, spec.num_experts, spec.skew_concentration);
  std::vector<double> weight(n);
  for (int64_t i = 0; i < spec.num_tokens; ++i) {
    if (i > 0 && i % spec.tokens_per_step == 0) {
      const auto fresh = dirichlet(rng, spec.num_experts, spec.skew_concentration);
      for (size_t e = 0; e < n; ++e) pref[e] = rho * pref[e] + (1.0 - rho) * fresh[e];
    }
    TokenRoute tok;
    tok.seq_id = i / spec.seq_len;
    tok.micro_batch_id = tok.seq_id / spec.micro_batch_size;
    tok.task_label = "task" + std::to_string(tok.seq_id % spec.num_tasks);
    weight = pref;
    double remaining = std::accumulate(weight.begin(), weight.end(), 0.0);
    double picked = 0.0;
    for (int64_t k = 0; k < spec.top_k; ++k) {
      const double target = unit(rng) * remaining;
      double acc = 0.0;
      size_t choice = n;
      size_t last_open = n;
      for (size_t e = 0; e < n; ++e) {
        if (weight[e] < 0.0) continue;
        last_open = e;
        acc += weight[e];
        if (acc > target) {
          choice = e;
          break;
        }
      }
      if (choice == n) choice = last_open;  // rounding at the tail
      tok.selected.push_back(static_cast<int32_t>(choice));
      tok.scores.push_back(weight[choice]);
      picked += weight[choice];
      remaining -= weight[choice];
      weight[choice] = -1.0;
    }
    for (auto &s : tok.scores) s = picked > 0.0 ? s / picked : 1.0 / d(spec.top_k);
    trace.tokens.push_back(std::move(tok));
  }
  return trace;
}

void write_trace(std::ostream &out, const RoutingTrace &trace) {
  out << "# num_experts=" << trace.num_experts << " top_k=" << trace.top_k << " seq_len=" << trace.seq_len << "\n";
  char buf[32];
  for (const auto &tok : trace.tokens) {
    out << tok.seq_id << ',' << tok.micro_batch_id << ',' << tok.task_label;
    for (int32_t e : tok.selected) out << ',' << e;
    for (double s : tok.scores) {
      std::snprintf(buf, sizeof(buf), "%.17g", s);
      out << ',' << buf;
    }
    out << '\n';
  }
}

RoutingTrace read_trace(std::istream &in) {
  RoutingTrace trace;
  std::string line;
  size_t line_no = 0;
  bool header = false;
  while (std::getline(in, line)) {
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    if (line[0] == '#') {
      std::istringstream ss(line.substr(1));
      std::string kv;
      while (ss >> kv) {
        const auto eq = kv.find('=');
        if (eq == std::string::npos) continue;
        const std::string key = kv.substr(0, eq);
        const int64_t value = parse_int(kv.substr(eq + 1), line_no);
        if (key == "num_experts") trace.num_experts = value;
        if (key == "top_k") trace.top_k = value;
        if (key == "seq_len") trace.seq_len = value;
      }
      header = trace.num_experts > 0 && trace.top_k > 0;
      continue;
    }
    if (!header) throw SimError(ErrorKind::kParseError, "trace line " + std::to_string(line_no) + ": missing header");
    const auto fields = split(line, ',');
    const auto k = static_cast<size_t>(trace.top_k);
    if (fields.size() != 3 + 2 * k) {
      throw SimError(ErrorKind::kParseError, "trace line " + std::to_string(line_no) + ": expected " +
                                                 std::to_string(3 + 2 * k) + " fields, got " +
                                                 std::to_string(fields.size()));
    }
    TokenRoute tok;
    tok.seq_id = parse_int(fields[0], line_no);
    tok.micro_batch_id = parse_int(fields[1], line_no);
    tok.task_label = fields[2];
    for (size_t i = 0; i < k; ++i) tok.selected.push_back(static_cast<int32_t>(parse_int(fields[3 + i], line_no)));
    for (size_t i = 0; i < k; ++i) tok.scores.push_back(parse_real(fields[3 + k + i], line_no));
    trace.tokens.push_back(std::move(tok));
  }
  if (!header) throw SimError(ErrorKind::kParseError, "trace has no header line");
  require_valid(trace);
  return trace;
}

const char *aux_level_name(AuxLevel level) {
  switch (level) {
    case AuxLevel::kSequence: return "sequence";
    case AuxLevel::kMicroBatch: return "micro_batch";
    case AuxLevel::kEpGroup: return "ep_group";
    case AuxLevel::kDpGroup: return "dp_group";
  }
  return "unknown";
}

AuxLevel parse_aux_level(const std::string &name) {
  for (AuxLevel l : {AuxLevel::kSequence, AuxLevel::kMicroBatch, AuxLevel::kEpGroup, AuxLevel::kDpGroup}) {
    if (name == aux_level_name(l)) return l;
  }
  throw SimError(ErrorKind::kParseError, "unknown aux level '" + name + "'");
}

int64_t balance_bsz(AuxLevel level, const AuxGrouping &grouping, int64_t seq_len) {
  switch (level) {
    case AuxLevel::kSequence: return seq_len;
    case AuxLevel::kMicroBatch: return grouping.micro_batch_size * seq_len;
    case AuxLevel::kEpGroup: return grouping.ep * grouping.micro_batch_size * seq_len;
    case AuxLevel::kDpGroup: return grouping.dp * grouping.micro_batch_size * seq_len;
  }
  return 0;
}

AuxLossResult aux_loss(const RoutingTrace &window, AuxLevel level, double alpha, const AuxGrouping &grouping) {
  check_window(window);
  if (grouping.ep < 1 || grouping.dp < 1 || grouping.micro_batch_size < 1) {
    throw SimError(ErrorKind::kInvalidArgument, "aux grouping sizes must be >= 1");
  }
  const auto n = static_cast<size_t>(window.num_experts);
  auto group_of = [&](const TokenRoute &tok) -> int64_t {
    switch (level) {
      case AuxLevel::kSequence: return tok.seq_id;
      case AuxLevel::kMicroBatch: return tok.micro_batch_id;
      case AuxLevel::kEpGroup: return tok.micro_batch_id / grouping.ep;
      case AuxLevel::kDpGroup: return tok.micro_batch_id / grouping.dp;
    }
    return 0;
  };

  struct Acc {
    std::vector<double> count, score;
    int64_t tokens = 0;
  };
  std::map<int64_t, Acc> groups;
  for (const auto &tok : window.tokens) {
    auto &g = groups[group_of(tok)];
    if (g.count.empty()) {
      g.count.assign(n, 0.0);
      g.score.assign(n, 0.0);
    }
    ++g.tokens;
    for (size_t k = 0; k < tok.selected.size(); ++k) {
      const auto e = static_cast<size_t>(tok.selected[k]);
      g.count[e] += 1.0;
      g.score[e] += tok.scores[k];
    }
  }

  AuxLossResult r;
  r.level = level;
  r.alpha = alpha;
  r.balance_bsz = balance_bsz(level, grouping, window.seq_len);
  r.f.assign(n, 0.0);
  r.p.assign(n, 0.0);
  const double inv_groups = 1.0 / d(static_cast<int64_t>(groups.size()));
  for (const auto &[id, g] : groups) {
    const double tw = d(g.tokens);
    const double f_scale = d(window.num_experts) / (d(window.top_k) * tw);
    double sum = 0.0;
    for (size_t e = 0; e < n; ++e) {
      const double f = f_scale * g.count[e];
      const double p = g.score[e] / tw;
      sum += f * p;
      r.f[e] += f * inv_groups;
      r.p[e] += p * inv_groups;
    }
    r.sum_fp += sum * inv_groups;
  }
  r.loss = alpha * r.sum_fp;
  return r;
}

DropStats capacity_drop_stats(const RoutingTrace &trace, double capacity_factor) {
  if (!(capacity_factor > 0.0)) throw SimError(ErrorKind::kInvalidArgument, "capacity factor must be > 0");
  DropStats s;
  const auto n = static_cast<size_t>(trace.num_experts);
  s.per_expert_drops.assign(n, 0);
  if (std::isinf(capacity_factor)) {
    s.capacity = -1;
    return s;
  }
  const double tokens = d(static_cast<int64_t>(trace.tokens.size()));
  s.capacity = static_cast<int64_t>(std::ceil(capacity_factor * tokens * d(trace.top_k) / d(trace.num_experts)));
  std::vector<int64_t> used(n, 0);
  int64_t dropped = 0;
  for (const auto &tok : trace.tokens) {
    for (int32_t e : tok.selected) {
      auto &u = used[static_cast<size_t>(e)];
      if (u < s.capacity) {
        ++u;
      } else {
        ++s.per_expert_drops[static_cast<size_t>(e)];
        ++dropped;
      }
    }
  }
  const double assignments = tokens * d(trace.top_k);
  s.drop_rate = assignments > 0.0 ? d(dropped) / assignments : 0.0;
  return s;
}

PlacementPlan identity_placement(int64_t num_experts, int64_t num_devices) {
  if (num_devices < 1 || num_experts % num_devices != 0) {
    throw SimError(ErrorKind::kSlotMismatch, std::to_string(num_experts) + " experts do not split evenly over " +
                                                 std::to_string(num_devices) + " devices");
  }
  PlacementPlan p;
  p.num_devices = num_devices;
  p.slots_per_device = num_experts / num_devices;
  for (int64_t e = 0; e < num_experts; ++e) p.expert_to_slot.emplace_back(e / p.slots_per_device, e % p.slots_per_device);
  return p;
}

double coefficient_of_variation(const std::vector<double> &values) {
  if (values.empty()) throw SimError(ErrorKind::kZeroMean, "no values");
  const double mean = std::accumulate(values.begin(), values.end(), 0.0) / d(static_cast<int64_t>(values.size()));
  if (!(mean != 0.0)) throw SimError(ErrorKind::kZeroMean, "loads have zero mean");
  double var = 0.0;
  for (double v : values) var += (v - mean) * (v - mean);
  var /= d(static_cast<int64_t>(values.size()));
  return std::sqrt(var) / mean;
}

DeviceLoadStats device_load_stats(const std::vector<double> &loads, const PlacementPlan &placement) {
  if (placement.expert_to_slot.size() != loads.size()) {
    throw SimError(ErrorKind::kInvalidArgument, "placement does not cover every expert");
  }
  DeviceLoadStats s;
  s.per_device_loads.assign(static_cast<size_t>(placement.num_devices), 0.0);
  for (size_t e = 0; e < loads.size(); ++e) {
    s.per_device_loads[static_cast<size_t>(placement.expert_to_slot[e].first)] += loads[e];
  }
  s.cv = coefficient_of_variation(s.per_device_loads);
  return s;
}

DeviceLoadStats device_load_stats(const RoutingTrace &window, const PlacementPlan &placement) {
  return device_load_stats(expert_loads(window), placement);
}

std::vector<double> expert_loads(const RoutingTrace &trace, size_t begin, size_t end) {
  std::vector<double> loads(static_cast<size_t>(trace.num_experts), 0.0);
  end = std::min(end, trace.tokens.size());
  for (size_t i = begin; i < end; ++i) {
    for (int32_t e : trace.tokens[i].selected) loads[static_cast<size_t>(e)] += 1.0;
  }
  return loads;
}

std::vector<std::vector<double>> expert_load_series(const RoutingTrace &trace, int64_t tokens_per_step) {
  if (tokens_per_step < 1) throw SimError(ErrorKind::kInvalidArgument, "tokens_per_step must be >= 1");
  std::vector<std::vector<double>> series;
  const auto step = static_cast<size_t>(tokens_per_step);
  for (size_t b = 0; b < trace.tokens.size(); b += step) series.push_back(expert_loads(trace, b, b + step));
  return series;
}

std::vector<double> predict_loads(const std::vector<std::vector<double>> &history, int64_t window,
                                  int64_t num_experts, double expected_tokens) {
  if (window < 1) throw SimError(ErrorKind::kInvalidArgument, "window must be >= 1");
  if (history.empty()) {
    if (num_experts < 1) throw SimError(ErrorKind::kInvalidArgument, "uniform prior needs num_experts >= 1");
    return std::vector<double>(static_cast<size_t>(num_experts), expected_tokens / d(num_experts));
  }
  const size_t used = std::min(static_cast<size_t>(window), history.size());
  std::vector<double> mean(history.back().size(), 0.0);
  for (size_t h = history.size() - used; h < history.size(); ++h) {
    if (history[h].size() != mean.size()) throw SimError(ErrorKind::kInvalidArgument, "ragged load history");
    for (size_t e = 0; e < mean.size(); ++e) mean[e] += history[h][e];
  }
  for (auto &v : mean) v /= d(static_cast<int64_t>(used));
  return mean;
}

std::vector<double> synchronize_loads(const std::vector<std::vector<double>> &group_loads) {
  if (group_loads.empty()) return {};
  std::vector<double> sum(group_loads.front().size(), 0.0);
  for (const auto &g : group_loads) {
    if (g.size() != sum.size()) throw SimError(ErrorKind::kInvalidArgument, "group load vectors differ in length");
    for (size_t e = 0; e < sum.size(); ++e) sum[e] += g[e];
  }
  return sum;
}

PlacementPlan greedy_place(const std::vector<double> &predicted_loads, int64_t num_devices, int64_t slots_per_device,
                           const PlacementPlan *previous, int64_t expert_param_count) {
  const auto n = static_cast<int64_t>(predicted_loads.size());
  if (num_devices < 1 || slots_per_device < 1 || num_devices * slots_per_device != n) {
    throw SimError(ErrorKind::kSlotMismatch, std::to_string(num_devices) + " devices x " +
                                                 std::to_string(slots_per_device) + " slots != " +
                                                 std::to_string(n) + " experts");
  }
  std::vector<int64_t> order(static_cast<size_t>(n));
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&](int64_t a, int64_t b) {
    return predicted_loads[static_cast<size_t>(a)] > predicted_loads[static_cast<size_t>(b)];
  });

  PlacementPlan plan;
  plan.num_devices = num_devices;
  plan.slots_per_device = slots_per_device;
  plan.predicted_loads = predicted_loads;
  plan.expert_to_slot.assign(static_cast<size_t>(n), {-1, -1});
  std::vector<double> load(static_cast<size_t>(num_devices), 0.0);
  std::vector<int64_t> filled(static_cast<size_t>(num_devices), 0);
  for (int64_t e : order) {
    int64_t best = -1;
    for (int64_t dev = 0; dev < num_devices; ++dev) {
      if (filled[static_cast<size_t>(dev)] == slots_per_device) continue;
      if (best < 0 || load[static_cast<size_t>(dev)] < load[static_cast<size_t>(best)]) best = dev;
    }
    plan.expert_to_slot[static_cast<size_t>(e)] = {best, filled[static_cast<size_t>(best)]++};
    load[static_cast<size_t>(best)] += predicted_loads[static_cast<size_t>(e)];
  }

  const PlacementPlan base = previous != nullptr ? *previous : identity_placement(n, num_devices);
  const bool any_load = std::any_of(predicted_loads.begin(), predicted_loads.end(), [](double v) { return v != 0.0; });
  if (any_load) {
    plan.cv_before = device_load_stats(predicted_loads, base).cv;
    plan.cv_after = device_load_stats(predicted_loads, plan).cv;
  }
  for (int64_t e = 0; e < n; ++e) {
    if (plan.device_of(e) != base.device_of(e)) ++plan.moved_experts;
  }
  plan.swap_bytes = d(plan.moved_experts) * d(expert_param_count) * kSwapBytesPerParam;
  return plan;
}

const char *training_phase_name(TrainingPhase phase) { return phase == TrainingPhase::kPretrain ? "pretrain" : "sft"; }

TrainingPhase parse_training_phase(const std::string &name) {
  if (name == "pretrain") return TrainingPhase::kPretrain;
  if (name == "sft") return TrainingPhase::kSft;
  throw SimError(ErrorKind::kParseError, "phase must be pretrain or sft, got '" + name + "'");
}

RebalanceController::RebalanceController(TrainingPhase phase, double threshold) : phase_(phase), threshold_(threshold) {
  if (!(threshold > 0.0)) throw SimError(ErrorKind::kInvalidArgument, "rebalance threshold must be > 0");
}

bool RebalanceController::observe(double cv) {
  bool replan = false;
  if (!cv_at_placement_) {
    replan = true;
  } else if (phase_ == TrainingPhase::kPretrain) {
    replan = cv - *cv_at_placement_ > threshold_;
  }
  if (replan) {
    cv_at_placement_ = cv;
    ++placements_;
  }
  return replan;
}

std::vector<bool> rebalance_controller(const std::vector<double> &cv_history, double threshold, TrainingPhase phase) {
  RebalanceController c(phase, threshold);
  std::vector<bool> out;
  out.reserve(cv_history.size());
  for (double cv : cv_history) out.push_back(c.observe(cv));
  return out;
}

BalanceReport simulate_balance(const RoutingTrace &trace, const BalanceOptions &options) {
  check_window(trace);
  const auto series = expert_load_series(trace, options.tokens_per_step);
  const PlacementPlan fixed = identity_placement(trace.num_experts, options.num_devices);
  PlacementPlan current = fixed;
  RebalanceController controller(options.phase, options.threshold);

  BalanceReport report;
  std::vector<std::vector<double>> history;
  for (size_t t = 0; t < series.size(); ++t) {
    BalanceStep step;
    step.step = static_cast<int64_t>(t);
    if (!history.empty() && controller.observe(device_load_stats(history.back(), current).cv)) {
      const auto predicted = predict_loads(history, options.window);
      PlacementPlan next = greedy_place(predicted, options.num_devices, fixed.slots_per_device, &current,
                                        options.expert_param_count);
      controller.placed(next.cv_after);
      step.replanned = true;
      step.moved_experts = next.moved_experts;
      step.swap_bytes = next.swap_bytes;
      current = std::move(next);
    }
    step.cv_static = device_load_stats(series[t], fixed).cv;
    step.cv_dynamic = device_load_stats(series[t], current).cv;
    report.mean_cv_static += step.cv_static;
    report.mean_cv_dynamic += step.cv_dynamic;
    report.steps.push_back(step);
    history.push_back(series[t]);
  }
  report.mean_cv_static /= d(static_cast<int64_t>(series.size()));
  report.mean_cv_dynamic /= d(static_cast<int64_t>(series.size()));
  return report;
}

TraceStatistics trace_statistics(const RoutingTrace &trace) {
  check_window(trace);
  const auto n = static_cast<size_t>(trace.num_experts);
  TraceStatistics s;
  s.uniform_share = d(trace.top_k) / d(trace.num_experts);
  std::vector<std::vector<double>> joint(n, std::vector<double>(n, 0.0));
  std::map<std::string, std::pair<std::vector<double>, int64_t>> per_task;
  for (const auto &tok : trace.tokens) {
    for (int32_t a : tok.selected) {
      for (int32_t b : tok.selected) joint[static_cast<size_t>(a)][static_cast<size_t>(b)] += 1.0;
    }
    auto &task = per_task[tok.task_label];
    if (task.first.empty()) task.first.assign(n, 0.0);
    ++task.second;
    for (int32_t e : tok.selected) task.first[static_cast<size_t>(e)] += 1.0;
  }
  s.coactivation.assign(n, std::vector<double>(n, 0.0));
  for (size_t i = 0; i < n; ++i) {
    const double count = joint[i][i];
    if (count == 0.0) continue;
    for (size_t j = 0; j < n; ++j) s.coactivation[i][j] = joint[i][j] / count;
  }
  for (auto &[label, task] : per_task) {
    auto shares = task.first;
    for (auto &v : shares) v /= d(task.second);
    s.specialization[label] = std::move(shares);
  }
  return s;
}

}  // namespace moesim
