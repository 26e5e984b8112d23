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

#ifndef MOESIM_TESTS_FIXTURES_H_
#define MOESIM_TESTS_FIXTURES_H_

#include "moesim/cluster_spec.h"
#include "moesim/model_spec.h"
#include "moesim/parallel_plan.h"

namespace moesim::testing {

inline ModelConfig pangu(int64_t layers = 61) {
  ModelConfig c;
  c.num_layers = layers;
  c.num_dense_layers = 3;
  c.hidden_size = 7680;
  c.num_attention_heads = 128;
  c.num_routed_experts = 256;
  c.num_shared_experts = 1;
  c.top_k = 8;
  c.expert_intermediate_size = 2048;
  c.dense_ffn_intermediate_size = 18432;
  c.num_mtp_layers = 1;
  c.vocab_size = 153600;
  c.seq_len = 8192;
  return c;
}

// 768 nodes x 8 devices.
inline HardwareDescription cluster_6k() {
  HardwareDescription hw;
  hw.num_nodes = 768;
  hw.devices_per_node = 8;
  hw.peak_flops_per_device = 3.5e14;
  hw.matmul_efficiency = 0.7;
  hw.vector_efficiency = 0.5;
  hw.hbm_bytes_per_device = 64e9;
  hw.hbm_bandwidth = 1.6e12;
  hw.intra_node_bandwidth = 1.96e11;
  hw.inter_node_bandwidth = 2.5e10;
  hw.link_latency_intra = 5e-6;
  hw.link_latency_inter = 1e-5;
  hw.host_dispatch_time = 1e-5;
  hw.host_to_device_bandwidth = 3.2e10;
  return hw;
}

inline HardwareDescription compute_rich() {
  HardwareDescription hw = cluster_6k();
  hw.peak_flops_per_device = 7e14;
  hw.hbm_bytes_per_device = 96e9;
  return hw;
}

inline ParallelPlan pangu_plan() {
  ParallelPlan p;
  p.tp = 8;
  p.pp = 16;
  p.vpp = 2;
  p.ep = 4;
  p.micro_batch_size = 2;
  p.global_batch_size = 6144;
  return p;
}

// One dense layer, one MoE layer, one MTP block.
inline ModelConfig tiny() {
  ModelConfig c;
  c.num_layers = 2;
  c.num_dense_layers = 1;
  c.hidden_size = 64;
  c.num_attention_heads = 4;
  c.mla_dims = {32, 16, 8, 4};
  c.num_routed_experts = 4;
  c.num_shared_experts = 1;
  c.top_k = 2;
  c.expert_intermediate_size = 128;
  c.dense_ffn_intermediate_size = 256;
  c.num_mtp_layers = 1;
  c.vocab_size = 100;
  c.seq_len = 16;
  return c;
}

// Two nodes of eight devices.
inline HardwareDescription small_cluster() {
  HardwareDescription hw = cluster_6k();
  hw.num_nodes = 2;
  return hw;
}

}  // namespace moesim::testing

#endif  // MOESIM_TESTS_FIXTURES_H_
