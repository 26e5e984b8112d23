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

#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <functional>
#include <limits>
#include <numeric>
#include <random>
#include <set>
#include <sstream>

#include "moesim/error.h"

namespace moesim {
namespace {

TraceSpec spec(int64_t tokens, int64_t n, int64_t k, double conc, double rho, uint64_t seed) {
  TraceSpec s;
  s.num_tokens = tokens;
  s.num_experts = n;
  s.top_k = k;
  s.skew_concentration = conc;
  s.temporal_autocorrelation = rho;
  s.seed = seed;
  return s;
}

// Every token routes to K consecutive experts starting at t*K mod N, score 1/K.
RoutingTrace round_robin(int64_t n, int64_t k, int64_t tokens, int64_t seq_len) {
  RoutingTrace t;
  t.num_experts = n;
  t.top_k = k;
  t.seq_len = seq_len;
  for (int64_t i = 0; i < tokens; ++i) {
    TokenRoute tok;
    tok.seq_id = i / seq_len;
    tok.micro_batch_id = tok.seq_id;
    for (int64_t j = 0; j < k; ++j) {
      tok.selected.push_back(static_cast<int32_t>((i * k + j) % n));
      tok.scores.push_back(1.0 / static_cast<double>(k));
    }
    t.tokens.push_back(tok);
  }
  return t;
}

double max_device_load(const std::vector<double> &loads, const PlacementPlan &p) {
  const auto s = device_load_stats(loads, p);
  return *std::max_element(s.per_device_loads.begin(), s.per_device_loads.end());
}

// Exhaustive min over equal-slot partitions.
double brute_force_max(const std::vector<double> &loads, int64_t devices, int64_t slots) {
  std::vector<int64_t> dev(loads.size(), 0);
  double best = std::numeric_limits<double>::infinity();
  std::function<void(size_t, std::vector<int64_t> &, std::vector<double> &)> rec =
      [&](size_t e, std::vector<int64_t> &fill, std::vector<double> &sum) {
        if (e == loads.size()) {
          best = std::min(best, *std::max_element(sum.begin(), sum.end()));
          return;
        }
        for (int64_t d = 0; d < devices; ++d) {
          if (fill[d] == slots) continue;
          ++fill[d];
          sum[d] += loads[e];
          rec(e + 1, fill, sum);
          sum[d] -= loads[e];
          --fill[d];
          if (fill[d] == 0) break;  // empty devices are interchangeable
        }
      };
  std::vector<int64_t> fill(devices, 0);
  std::vector<double> sum(devices, 0.0);
  rec(0, fill, sum);
  return best;
}

TEST(TraceTest, SameSeedSameTrace) {
  const auto s = spec(5000, 16, 4, 0.5, 0.7, 11);
  EXPECT_EQ(generate_trace(s), generate_trace(s));
  auto other = s;
  other.seed = 12;
  EXPECT_NE(generate_trace(s), generate_trace(other));
}

TEST(TraceTest, HugeConcentrationIsUniform) {
  const int64_t n = 16, k = 4, tokens = 100000;
  const auto t = generate_trace(spec(tokens, n, k, 1e6, 0.0, 3));
  const auto loads = expert_loads(t);
  const double p = static_cast<double>(k) / static_cast<double>(n);
  const double se = std::sqrt(p * (1.0 - p) / static_cast<double>(tokens));
  for (double c : loads) EXPECT_LT(std::abs(c / static_cast<double>(tokens) - p), 3.0 * se);
}

TEST(TraceTest, TokensHaveDistinctExpertsAndNormalizedScores) {
  const auto t = generate_trace(spec(3000, 32, 8, 0.3, 0.9, 5));
  for (const auto &tok : t.tokens) {
    std::set<int32_t> ids(tok.selected.begin(), tok.selected.end());
    EXPECT_EQ(ids.size(), 8u);
    EXPECT_NEAR(std::accumulate(tok.scores.begin(), tok.scores.end(), 0.0), 1.0, 1e-12);
  }
}

double lag1(const RoutingTrace &t, int64_t step) {
  const auto series = expert_load_series(t, step);
  const size_t n = series.front().size();
  std::vector<double> mean(n, 0.0);
  for (const auto &v : series)
    for (size_t e = 0; e < n; ++e) mean[e] += v[e] / static_cast<double>(series.size());
  double num = 0.0, den = 0.0;
  for (size_t s = 0; s < series.size(); ++s) {
    for (size_t e = 0; e < n; ++e) {
      const double x = series[s][e] - mean[e];
      den += x * x;
      if (s + 1 < series.size()) num += x * (series[s + 1][e] - mean[e]);
    }
  }
  return num / den;
}

TEST(TraceTest, AutocorrelationRaisesLagOneCorrelation) {
  auto s = spec(200 * 512, 32, 4, 0.3, 0.9, 7);
  s.tokens_per_step = 512;
  const double hi = lag1(generate_trace(s), 512);
  s.temporal_autocorrelation = 0.0;
  const double lo = lag1(generate_trace(s), 512);
  EXPECT_GT(hi, lo);
  EXPECT_GT(hi, 0.5);
  EXPECT_LT(std::abs(lo), 0.2);
}

TEST(TraceTest, RoundTrip) {
  auto s = spec(700, 16, 3, 0.4, 0.5, 9);
  s.seq_len = 100;
  s.micro_batch_size = 2;
  s.num_tasks = 3;
  const auto t = generate_trace(s);
  std::stringstream buf;
  write_trace(buf, t);
  EXPECT_EQ(read_trace(buf), t);
}

TEST(TraceTest, MalformedLineIsReported) {
  std::stringstream buf("# num_experts=4 top_k=2 seq_len=8\n0,0,a,1,2,0.5,0.5\n0,0,a,1,0.5\n");
  try {
    read_trace(buf);
    FAIL();
  } catch (const SimError &e) {
    EXPECT_EQ(e.kind(), ErrorKind::kParseError);
    EXPECT_NE(std::string(e.what()).find("line 3"), std::string::npos);
  }
}

TEST(AuxLossTest, UniformRoutingGivesOne) {
  const auto t = round_robin(8, 2, 64, 16);
  for (auto level : {AuxLevel::kSequence, AuxLevel::kMicroBatch, AuxLevel::kEpGroup, AuxLevel::kDpGroup}) {
    const auto r = aux_loss(t, level, 0.001, AuxGrouping{2, 2, 1});
    EXPECT_NEAR(r.sum_fp, 1.0, 1e-12);
    EXPECT_NEAR(r.loss, 0.001, 1e-15);
  }
}

TEST(AuxLossTest, SingleHotExpert) {
  RoutingTrace t;
  t.num_experts = 8;
  t.top_k = 1;
  t.seq_len = 10;
  for (int i = 0; i < 10; ++i) t.tokens.push_back(TokenRoute{0, 0, "", {0}, {1.0}});
  const auto r = aux_loss(t, AuxLevel::kSequence, 0.5, {});
  EXPECT_NEAR(r.f[0], 8.0, 1e-12);
  EXPECT_NEAR(r.loss, 0.5 * 8.0, 1e-12);
}

TEST(AuxLossTest, FrequenciesSumToExpertCount) {
  for (uint64_t seed = 0; seed < 5; ++seed) {
    auto s = spec(4000, 32, 4, 0.3, 0.5, seed);
    s.seq_len = 500;
    const auto t = generate_trace(s);
    for (auto level : {AuxLevel::kSequence, AuxLevel::kMicroBatch, AuxLevel::kEpGroup, AuxLevel::kDpGroup}) {
      const auto r = aux_loss(t, level, 1.0, AuxGrouping{4, 2, 1});
      EXPECT_NEAR(std::accumulate(r.f.begin(), r.f.end(), 0.0), 32.0, 1e-9);
      EXPECT_NEAR(std::accumulate(r.p.begin(), r.p.end(), 0.0), 1.0, 1e-9);
    }
  }
}

TEST(AuxLossTest, BalanceBsz) {
  const AuxGrouping g{4, 3, 2};
  EXPECT_EQ(balance_bsz(AuxLevel::kSequence, g, 8192), 8192);
  EXPECT_EQ(balance_bsz(AuxLevel::kMicroBatch, g, 8192), 16384);
  EXPECT_EQ(balance_bsz(AuxLevel::kEpGroup, g, 8192), 65536);
  EXPECT_EQ(balance_bsz(AuxLevel::kDpGroup, g, 8192), 49152);
  std::mt19937_64 rng(1);
  std::uniform_int_distribution<int64_t> u(1, 64);
  for (int i = 0; i < 200; ++i) {
    const AuxGrouping r{u(rng), u(rng), u(rng)};
    const int64_t t = u(rng) * 128;
    EXPECT_EQ(balance_bsz(AuxLevel::kEpGroup, r, t), r.ep * r.micro_batch_size * t);
    EXPECT_EQ(balance_bsz(AuxLevel::kDpGroup, r, t), r.dp * r.micro_batch_size * t);
    EXPECT_LE(balance_bsz(AuxLevel::kSequence, r, t), balance_bsz(AuxLevel::kMicroBatch, r, t));
    EXPECT_LE(balance_bsz(AuxLevel::kMicroBatch, r, t), balance_bsz(AuxLevel::kEpGroup, r, t));
  }
}

TEST(AuxLossTest, IdenticalGroupsConcatenate) {
  // G copies of one sequence: per-sequence loss equals the loss of the whole batch.
  auto s = spec(256, 16, 2, 0.3, 0.0, 4);
  s.seq_len = 256;
  const auto one = generate_trace(s);
  RoutingTrace batch = one;
  batch.tokens.clear();
  const int64_t g = 4;
  for (int64_t c = 0; c < g; ++c) {
    for (auto tok : one.tokens) {
      tok.seq_id = c;
      tok.micro_batch_id = 0;
      batch.tokens.push_back(tok);
    }
  }
  const auto per_seq = aux_loss(batch, AuxLevel::kSequence, 1.0, {});
  const auto merged = aux_loss(batch, AuxLevel::kMicroBatch, 1.0, AuxGrouping{1, 1, g});
  EXPECT_NEAR(per_seq.sum_fp, merged.sum_fp, 1e-12);
  EXPECT_EQ(merged.balance_bsz, g * per_seq.balance_bsz);
}

TEST(AuxLossTest, WiderScopeIsLooserOnSkewedSequences) {
  // Each sequence hits one half of the experts; the batch as a whole is balanced.
  RoutingTrace t;
  t.num_experts = 4;
  t.top_k = 1;
  t.seq_len = 4;
  for (int64_t seq = 0; seq < 2; ++seq) {
    for (int i = 0; i < 4; ++i) {
      t.tokens.push_back(TokenRoute{seq, 0, "", {static_cast<int32_t>(2 * seq + i % 2)}, {1.0}});
    }
  }
  const double seq = aux_loss(t, AuxLevel::kSequence, 1.0, {}).sum_fp;
  const double mb = aux_loss(t, AuxLevel::kMicroBatch, 1.0, AuxGrouping{1, 1, 2}).sum_fp;
  EXPECT_NEAR(seq, 2.0, 1e-12);
  EXPECT_NEAR(mb, 1.0, 1e-12);
}

TEST(AuxLossTest, EmptyWindow) {
  RoutingTrace t;
  t.num_experts = 4;
  t.top_k = 1;
  t.seq_len = 4;
  try {
    aux_loss(t, AuxLevel::kSequence, 1.0, {});
    FAIL();
  } catch (const SimError &e) {
    EXPECT_EQ(e.kind(), ErrorKind::kEmptyWindow);
  }
}

TEST(DropTest, MonotoneInCapacity) {
  for (uint64_t seed = 0; seed < 10; ++seed) {
    const auto t = generate_trace(spec(2000, 16, 2, 0.2, 0.5, seed));
    double prev = 1.0;
    for (int i = 1; i <= 20; ++i) {
      const double rate = capacity_drop_stats(t, 0.25 * i).drop_rate;
      EXPECT_LE(rate, prev);
      prev = rate;
    }
    EXPECT_EQ(capacity_drop_stats(t, std::numeric_limits<double>::infinity()).drop_rate, 0.0);
  }
}

TEST(DropTest, SingleHotExpertClosedForm) {
  RoutingTrace t;
  t.num_experts = 8;
  t.top_k = 1;
  t.seq_len = 6400;
  for (int i = 0; i < 6400; ++i) t.tokens.push_back(TokenRoute{0, 0, "", {0}, {1.0}});
  for (double c : {0.125, 0.5, 1.0, 2.5, 4.0, 8.0, 16.0}) {
    EXPECT_NEAR(capacity_drop_stats(t, c).drop_rate, 1.0 - std::min(1.0, c / 8.0), 1e-12) << c;
  }
}

TEST(DropTest, UniformRoutingDropsNothingAtUnitCapacity) {
  const auto t = round_robin(8, 2, 400, 100);
  EXPECT_EQ(capacity_drop_stats(t, 1.0).drop_rate, 0.0);
  EXPECT_GT(capacity_drop_stats(t, 0.5).drop_rate, 0.0);
}

TEST(PlacementTest, CvExample) {
  const auto p = identity_placement(4, 2);
  const auto s = device_load_stats(std::vector<double>{10, 1, 5, 4}, p);
  EXPECT_EQ(s.per_device_loads, (std::vector<double>{11, 9}));
  EXPECT_NEAR(s.cv, 0.1, 1e-12);
}

TEST(PlacementTest, ZeroMean) {
  try {
    device_load_stats(std::vector<double>{0, 0, 0, 0}, identity_placement(4, 2));
    FAIL();
  } catch (const SimError &e) {
    EXPECT_EQ(e.kind(), ErrorKind::kZeroMean);
  }
}

TEST(PlacementTest, PredictLoads) {
  const std::vector<std::vector<double>> h{{1, 3}, {3, 5}, {5, 7}};
  EXPECT_EQ(predict_loads(h, 2), (std::vector<double>{4, 6}));
  EXPECT_EQ(predict_loads(h, 10), (std::vector<double>{3, 5}));
  EXPECT_EQ(predict_loads({}, 5, 4, 100.0), (std::vector<double>{25, 25, 25, 25}));
  EXPECT_EQ(synchronize_loads({{1, 2}, {3, 4}}), (std::vector<double>{4, 6}));
}

TEST(PlacementTest, GreedyExample) {
  const std::vector<double> loads{10, 5, 4, 1};
  const auto p = greedy_place(loads, 2, 2);
  EXPECT_EQ(p.device_of(0), p.device_of(3));
  EXPECT_EQ(p.device_of(1), p.device_of(2));
  EXPECT_DOUBLE_EQ(max_device_load(loads, p), 11.0);
  EXPECT_DOUBLE_EQ(brute_force_max(loads, 2, 2), 11.0);
  EXPECT_NEAR(p.cv_after, 0.1, 1e-12);
}

TEST(PlacementTest, EqualLoadsAreBalanced) {
  const auto p = greedy_place(std::vector<double>(12, 3.0), 4, 3);
  EXPECT_EQ(p.cv_after, 0.0);
}

TEST(PlacementTest, GreedyIsNotAlwaysOptimal) {
  // Descending greedy pairs 3 with 2 twice and strands 0; the optimum is {3,3,0} | {2,2,2}.
  const std::vector<double> loads{3, 3, 2, 2, 2, 0};
  EXPECT_DOUBLE_EQ(max_device_load(loads, greedy_place(loads, 2, 3)), 7.0);
  EXPECT_DOUBLE_EQ(brute_force_max(loads, 2, 3), 6.0);
}

TEST(PlacementTest, EverySlotFilledOnce) {
  std::mt19937_64 rng(2);
  std::uniform_real_distribution<double> u(0.0, 100.0);
  for (int trial = 0; trial < 200; ++trial) {
    const int64_t devices = 1 + trial % 8, slots = 1 + trial % 5;
    std::vector<double> loads(static_cast<size_t>(devices * slots));
    for (auto &v : loads) v = std::floor(u(rng));
    const auto p = greedy_place(loads, devices, slots);
    std::set<std::pair<int64_t, int64_t>> seen(p.expert_to_slot.begin(), p.expert_to_slot.end());
    EXPECT_EQ(seen.size(), loads.size());
    for (const auto &[d, s] : p.expert_to_slot) {
      EXPECT_GE(d, 0);
      EXPECT_LT(d, devices);
      EXPECT_GE(s, 0);
      EXPECT_LT(s, slots);
    }
    // Within one expert of the average device load.
    const double avg = std::accumulate(loads.begin(), loads.end(), 0.0) / static_cast<double>(devices);
    EXPECT_LE(max_device_load(loads, p), avg + *std::max_element(loads.begin(), loads.end()) + 1e-9);
  }
}

TEST(PlacementTest, SwapBytes) {
  const std::vector<double> loads{1, 2, 3, 4, 5, 6, 7, 8};
  const auto base = identity_placement(8, 4);
  const auto p = greedy_place(loads, 4, 2, &base, 1000);
  int64_t moved = 0;
  for (int64_t e = 0; e < 8; ++e) moved += p.device_of(e) != base.device_of(e) ? 1 : 0;
  EXPECT_EQ(p.moved_experts, moved);
  EXPECT_GT(moved, 0);
  EXPECT_DOUBLE_EQ(p.swap_bytes, static_cast<double>(moved) * 1000.0 * 14.0);
  const auto again = greedy_place(loads, 4, 2, &p, 1000);
  EXPECT_EQ(again.moved_experts, 0);
  EXPECT_EQ(again.swap_bytes, 0.0);
}

TEST(PlacementTest, SlotMismatch) {
  try {
    greedy_place(std::vector<double>(10, 1.0), 4, 2);
    FAIL();
  } catch (const SimError &e) {
    EXPECT_EQ(e.kind(), ErrorKind::kSlotMismatch);
  }
}

TEST(ControllerTest, ReplansOnDrift) {
  EXPECT_EQ(rebalance_controller({0.1, 0.1, 0.25}, 0.1, TrainingPhase::kPretrain),
            (std::vector<bool>{true, false, true}));
  const auto flat = rebalance_controller(std::vector<double>(50, 0.2), 0.05, TrainingPhase::kPretrain);
  EXPECT_EQ(std::count(flat.begin(), flat.end(), true), 1);
  const auto sft = rebalance_controller({0.1, 0.9, 0.1, 2.0}, 0.05, TrainingPhase::kSft);
  EXPECT_EQ(sft, (std::vector<bool>{true, false, false, false}));
}

TEST(ControllerTest, SftBalanceReplansOnce) {
  auto s = spec(40 * 1024, 64, 8, 0.3, 0.9, 1);
  s.tokens_per_step = 1024;
  BalanceOptions o;
  o.tokens_per_step = 1024;
  o.phase = TrainingPhase::kSft;
  const auto r = simulate_balance(generate_trace(s), o);
  EXPECT_EQ(std::count_if(r.steps.begin(), r.steps.end(), [](const BalanceStep &x) { return x.replanned; }), 1);
  EXPECT_LT(r.mean_cv_dynamic, r.mean_cv_static);
}

TEST(StatsTest, DiagonalAndUniformShare) {
  const auto t = generate_trace(spec(20000, 256, 8, 1e6, 0.0, 1));
  const auto st = trace_statistics(t);
  EXPECT_NEAR(st.uniform_share, 0.03125, 1e-15);
  for (size_t i = 0; i < st.coactivation.size(); ++i) EXPECT_EQ(st.coactivation[i][i], 1.0);
  const auto &share = st.specialization.at("task0");
  const double se = std::sqrt(0.03125 * (1 - 0.03125) / 20000.0);
  for (double v : share) EXPECT_LT(std::abs(v - 0.03125), 5.0 * se);
}

TEST(StatsTest, HandCountedToy) {
  RoutingTrace t;
  t.num_experts = 3;
  t.top_k = 2;
  t.seq_len = 3;
  t.tokens = {TokenRoute{0, 0, "a", {0, 1}, {0.5, 0.5}}, TokenRoute{0, 0, "a", {0, 2}, {0.5, 0.5}},
              TokenRoute{0, 0, "b", {1, 0}, {0.5, 0.5}}};
  const auto st = trace_statistics(t);
  // Expert 0 appears 3 times, twice with 1 and once with 2.
  EXPECT_NEAR(st.coactivation[0][1], 2.0 / 3.0, 1e-15);
  EXPECT_NEAR(st.coactivation[0][2], 1.0 / 3.0, 1e-15);
  EXPECT_EQ(st.coactivation[1][0], 1.0);
  EXPECT_EQ(st.coactivation[1][2], 0.0);
  EXPECT_EQ(st.coactivation[2][0], 1.0);
  EXPECT_EQ(st.specialization.at("a"), (std::vector<double>{1.0, 0.5, 0.5}));
  EXPECT_EQ(st.specialization.at("b"), (std::vector<double>{1.0, 1.0, 0.0}));
}

}  // namespace
}  // namespace moesim
