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

#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>

#include "fixtures.h"
#include "moesim/error.h"

namespace moesim {
namespace {

using testing::compute_rich;
using testing::pangu;
using testing::pangu_plan;

DesignSpace tiny_space() {
  DesignSpace s;
  s.num_layers = {4, 6, 8};
  s.num_dense_layers = {1};
  s.hidden_size = {1024, 2048};
  s.num_attention_heads = {16};
  s.mla_dims = {MlaDims{512, 256, 64, 32}};
  s.num_routed_experts = {8, 16};
  s.num_shared_experts = {1};
  s.top_k = {2};
  s.expert_intermediate_size = {512};
  s.dense_ffn_intermediate_size = {2048};
  s.num_mtp_layers = {0};
  s.vocab_size = {32000};
  s.seq_len = {2048};
  s.dtype_bytes = {2};
  return s;
}

ParallelPlan tiny_plan() {
  ParallelPlan p;
  p.tp = 1;
  p.pp = 2;
  p.ep = 4;
  p.micro_batch_size = 1;
  p.global_batch_size = 64;
  return p;
}

void expect_same(const CostReport &a, const CostReport &b) {
  EXPECT_EQ(a.model_id, b.model_id);
  EXPECT_EQ(a.plan, b.plan);
  EXPECT_EQ(a.score, b.score);
  EXPECT_EQ(a.training_throughput, b.training_throughput);
  EXPECT_EQ(a.inference_throughput, b.inference_throughput);
  EXPECT_EQ(a.step_report.step_time, b.step_report.step_time);
  EXPECT_EQ(a.memory_report.activation_peak_bytes, b.memory_report.activation_peak_bytes);
  EXPECT_EQ(a.rank, b.rank);
}

TEST(Score, Deterministic) {
  const auto a = score_both(pangu(), pangu_plan(), testing::cluster_6k());
  const auto b = score_both(pangu(), pangu_plan(), testing::cluster_6k());
  expect_same(a, b);
}

TEST(Score, ModelSevenOutrunsModelEight) {
  const auto a = score_config(pangu(61), pangu_plan(), compute_rich(), ScoreMode::kTraining);
  const auto b = score_config(pangu(66), pangu_plan(), compute_rich(), ScoreMode::kTraining);
  const double gap = a.training_throughput / b.training_throughput - 1.0;
  EXPECT_GE(gap, 0.05);
  EXPECT_LE(gap, 0.30);
}

TEST(Score, FewerLayersDecodeFaster) {
  for (int64_t l : {40, 50, 61}) {
    const auto a = score_config(pangu(l), pangu_plan(), compute_rich(), ScoreMode::kInference);
    const auto b = score_config(pangu(l + 5), pangu_plan(), compute_rich(), ScoreMode::kInference);
    EXPECT_GT(a.inference_throughput, b.inference_throughput);
  }
}

TEST(Score, FeatureTogglesAreMonotone) {
  const auto on = score_config(pangu(), pangu_plan(), testing::cluster_6k(), ScoreMode::kTraining);
  for (int f = 0; f < 3; ++f) {
    SearchOptions off;
    if (f == 0) off.features.overlap = false;
    if (f == 1) off.features.fine_grained_recompute = false;
    if (f == 2) off.features.host_optimization = false;
    const auto r = score_config(pangu(), pangu_plan(), testing::cluster_6k(), ScoreMode::kTraining, off);
    EXPECT_LE(r.step_report.mfu, on.step_report.mfu) << f;
  }
}

TEST(Score, OverlapAndHostTogglesMonotoneOnSmallPlans) {
  const auto hw = testing::small_cluster();
  for (const auto &cfg : enumerate_design_space(tiny_space())) {
    const auto on = score_config(cfg, tiny_plan(), hw, ScoreMode::kTraining);
    for (int f = 0; f < 2; ++f) {
      SearchOptions off;
      (f == 0 ? off.features.overlap : off.features.host_optimization) = false;
      EXPECT_LE(score_config(cfg, tiny_plan(), hw, ScoreMode::kTraining, off).step_report.mfu, on.step_report.mfu);
    }
  }
}

TEST(Score, ExpectedExpertsTouched) {
  EXPECT_DOUBLE_EQ(expected_experts_touched(256, 8, 1.0), 8.0);
  EXPECT_NEAR(expected_experts_touched(256, 8, 1e6), 256.0, 1e-9);
  EXPECT_NEAR(expected_experts_touched(4, 2, 2.0), 4.0 * (1 - 0.25), 1e-12);
}

TEST(Search, SingletonSpace) {
  DesignSpace s = tiny_space();
  s.num_layers = {4};
  s.hidden_size = {1024};
  s.num_routed_experts = {8};
  const auto r = search_space(s, {tiny_plan()}, testing::small_cluster(), 5);
  ASSERT_EQ(r.size(), 1u);
  EXPECT_EQ(r[0].rank, 1);
  EXPECT_EQ(r[0].model.num_layers, 4);
}

TEST(Search, TinySpaceMatchesExhaustiveRescoring) {
  const auto hw = testing::small_cluster();
  const auto ranked = search_space(tiny_space(), {tiny_plan()}, hw, 100);
  ASSERT_EQ(ranked.size(), 12u);
  std::vector<CostReport> oracle;
  for (const auto &cfg : enumerate_design_space(tiny_space())) oracle.push_back(score_both(cfg, tiny_plan(), hw));
  std::sort(oracle.begin(), oracle.end(), [](const CostReport &a, const CostReport &b) {
    return a.score != b.score ? a.score > b.score : a.model_id < b.model_id;
  });
  for (size_t i = 0; i < oracle.size(); ++i) {
    EXPECT_EQ(ranked[i].model_id, oracle[i].model_id);
    EXPECT_EQ(ranked[i].score, oracle[i].score);
    EXPECT_EQ(ranked[i].rank, static_cast<int64_t>(i) + 1);
  }
}

TEST(Search, TopKTruncatesAndWorkersAgree) {
  const auto hw = testing::small_cluster();
  SearchOptions serial, parallel;
  parallel.workers = 4;
  const auto a = search_space(tiny_space(), {tiny_plan()}, hw, 5, serial);
  const auto b = search_space(tiny_space(), {tiny_plan()}, hw, 5, parallel);
  ASSERT_EQ(a.size(), 5u);
  ASSERT_EQ(b.size(), 5u);
  for (size_t i = 0; i < a.size(); ++i) expect_same(a[i], b[i]);
}

TEST(Search, RankingInvariantUnderUniformRateScaling) {
  const auto hw = testing::small_cluster();
  for (double c : {0.5, 3.0}) {
    HardwareDescription scaled = hw;
    scaled.peak_flops_per_device *= c;
    scaled.hbm_bandwidth *= c;
    scaled.intra_node_bandwidth *= c;
    scaled.inter_node_bandwidth *= c;
    scaled.host_to_device_bandwidth *= c;
    scaled.link_latency_intra /= c;
    scaled.link_latency_inter /= c;
    scaled.host_dispatch_time /= c;
    const auto a = search_space(tiny_space(), {tiny_plan()}, hw, 1);
    const auto b = search_space(tiny_space(), {tiny_plan()}, scaled, 1);
    EXPECT_EQ(a[0].model_id, b[0].model_id);
    EXPECT_NEAR(b[0].training_throughput / a[0].training_throughput, c, 1e-6 * c);
  }
}

TEST(Search, CandidateSpaceFavoursWidestModel) {
  DesignSpace s;
  s.num_layers = {61, 62, 66, 70};
  s.num_dense_layers = {3};
  s.hidden_size = {6144, 7168, 7680};
  s.num_attention_heads = {128};
  s.mla_dims = {MlaDims{}};
  s.num_routed_experts = {256};
  s.num_shared_experts = {1};
  s.top_k = {8};
  s.expert_intermediate_size = {2048};
  s.dense_ffn_intermediate_size = {18432};
  s.num_mtp_layers = {1};
  s.vocab_size = {153600};
  s.seq_len = {8192};
  s.dtype_bytes = {2};
  SearchOptions o;
  o.workers = 4;
  // Compute-bound: links fast enough that token dispatch stops limiting the step.
  auto hw = compute_rich();
  hw.inter_node_bandwidth *= 100.0;
  hw.intra_node_bandwidth *= 100.0;
  hw.host_dispatch_time = 0.0;
  const auto ranked = search_space(s, {pangu_plan()}, hw, 100, o);
  EXPECT_GT(ranked.front().step_report.comm_overlap_rate, 0.9);
  int64_t widest = 0;
  for (const auto &r : ranked) widest = std::max(widest, r.model.hidden_size);
  EXPECT_EQ(ranked.front().model.hidden_size, widest);
}

TEST(Search, EmptySpaceErrors) {
  ParallelPlan bad = tiny_plan();
  bad.tp = 64;
  try {
    search_space(tiny_space(), {bad}, testing::small_cluster(), 3);
    FAIL();
  } catch (const SimError &e) {
    EXPECT_EQ(e.kind(), ErrorKind::kEmptySpace);
  }
}

}  // namespace
}  // namespace moesim
