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

#include "moesim/config_io.h"

#include <algorithm>
#include <cstdio>
#include <fstream>
#include <set>
#include <sstream>

#include "moesim/error.h"

namespace moesim {

namespace {

[[noreturn]] void parse_error(const std::string &msg) { throw SimError(ErrorKind::kParseError, msg); }

// Reads fields out of one JSON object and remembers which keys were consumed so
// that leftovers can be reported as unknown.
class Fields {
 public:
  Fields(const Json &j, std::string what) : j_(j), what_(std::move(what)) {
    if (!j_.is_object()) parse_error(what_ + " must be a JSON object");
  }

  bool has(const char *key) const { return j_.contains(key); }

  void get(const char *key, int64_t &out) {
    if (const Json *v = take(key)) {
      if (!v->is_number_integer()) type_error(key, "an integer");
      out = v->get<int64_t>();
    }
  }
  void get(const char *key, uint64_t &out) {
    if (const Json *v = take(key)) {
      if (!v->is_number_unsigned()) type_error(key, "a non-negative integer");
      out = v->get<uint64_t>();
    }
  }
  void get(const char *key, double &out) {
    if (const Json *v = take(key)) {
      if (!v->is_number()) type_error(key, "a number");
      out = v->get<double>();
    }
  }
  void get(const char *key, bool &out) {
    if (const Json *v = take(key)) {
      if (!v->is_boolean()) type_error(key, "a boolean");
      out = v->get<bool>();
    }
  }
  void get(const char *key, std::string &out) {
    if (const Json *v = take(key)) {
      if (!v->is_string()) type_error(key, "a string");
      out = v->get<std::string>();
    }
  }
  void get(const char *key, std::vector<int64_t> &out) {
    if (const Json *v = take(key)) {
      if (!v->is_array()) type_error(key, "an array of integers");
      out.clear();
      for (const auto &e : *v) {
        if (!e.is_number_integer()) type_error(key, "an array of integers");
        out.push_back(e.get<int64_t>());
      }
    }
  }
  const Json *object(const char *key) {
    const Json *v = take(key);
    if (v != nullptr && !v->is_object()) type_error(key, "an object");
    return v;
  }
  const Json *array(const char *key) {
    const Json *v = take(key);
    if (v != nullptr && !v->is_array()) type_error(key, "an array");
    return v;
  }

  void require(std::initializer_list<const char *> keys) { required_.insert(required_.end(), keys); }

  // Unknown fields are reported first: a typo also shows up as a missing field.
  void finish() const {
    for (auto it = j_.begin(); it != j_.end(); ++it) {
      if (!used_.count(it.key())) parse_error(what_ + ": unknown field '" + it.key() + "'");
    }
    for (const char *k : required_) {
      if (!j_.contains(k)) parse_error(what_ + ": missing required field '" + k + "'");
    }
  }

 private:
  const Json *take(const char *key) {
    used_.insert(key);
    auto it = j_.find(key);
    return it == j_.end() ? nullptr : &*it;
  }
  [[noreturn]] void type_error(const char *key, const char *expected) const {
    parse_error(what_ + ": field '" + key + "' must be " + expected);
  }

  const Json &j_;
  std::string what_;
  std::set<std::string> used_;
  std::vector<const char *> required_;
};

void throw_if_errors(const std::vector<std::string> &errors, const std::string &what) {
  if (errors.empty()) return;
  std::string msg = "invalid " + what + ":";
  for (const auto &e : errors) msg += "\n  " + e;
  throw SimError(ErrorKind::kInvalidArgument, msg);
}

MlaDims mla_from_json(const Json &j, const std::string &what) {
  MlaDims m;
  Fields f(j, what);
  f.get("q_rank", m.q_rank);
  f.get("kv_rank", m.kv_rank);
  f.get("head_dim", m.head_dim);
  f.get("rope_dim", m.rope_dim);
  f.finish();
  return m;
}

Json to_json(const MlaDims &m) {
  return Json{{"q_rank", m.q_rank}, {"kv_rank", m.kv_rank}, {"head_dim", m.head_dim}, {"rope_dim", m.rope_dim}};
}

void read_options(const Json &j, SearchOptions &o) {
  Fields f(j, "search options");
  f.get("training_weight", o.training_weight);
  f.get("inference_weight", o.inference_weight);
  f.get("workers", o.workers);
  f.get("overlap", o.features.overlap);
  f.get("fine_grained_recompute", o.features.fine_grained_recompute);
  f.get("host_optimization", o.features.host_optimization);
  std::string dispatch = dispatch_name(o.dispatch);
  f.get("dispatch", dispatch);
  if (dispatch == "allgather") {
    o.dispatch = DispatchMechanism::kAllGather;
  } else if (dispatch == "alltoall") {
    o.dispatch = DispatchMechanism::kAllToAll;
  } else if (dispatch == "hierarchical") {
    o.dispatch = DispatchMechanism::kHierarchical;
  } else {
    parse_error("search options: field 'dispatch' must be allgather, alltoall or hierarchical");
  }
  f.get("coc_tiles", o.coc_tiles);
  f.get("decode_batch_per_device", o.decode_batch_per_device);
  f.finish();
  if (o.training_weight < 0.0 || o.inference_weight < 0.0) {
    throw SimError(ErrorKind::kInvalidArgument, "ranking weights must be >= 0");
  }
  if (o.coc_tiles < 1 || o.decode_batch_per_device < 1) {
    throw SimError(ErrorKind::kInvalidArgument, "coc_tiles and decode_batch_per_device must be >= 1");
  }
}

std::string fmt(double v) {
  char buf[40];
  std::snprintf(buf, sizeof(buf), "%.9g", v);
  return buf;
}

std::string memory_plan_label(const MemoryPlan &p) {
  if (p.full_layer_recompute) return "full_layer";
  std::string out;
  for (MemoryOption o : p.recompute) out += (out.empty() ? "" : "+") + std::string(memory_option_name(o));
  for (MemoryOption o : p.swap) out += (out.empty() ? "" : "+") + std::string("swap_") + memory_option_name(o);
  return out.empty() ? "none" : out;
}

}  // namespace

Json parse_json_text(const std::string &text, const std::string &origin) {
  try {
    return Json::parse(text);
  } catch (const nlohmann::json::parse_error &e) {
    const size_t upto = std::min<size_t>(e.byte, text.size());
    const auto line = 1 + std::count(text.begin(), text.begin() + static_cast<std::ptrdiff_t>(upto), '\n');
    parse_error(origin + ":" + std::to_string(line) + ": malformed JSON (" + e.what() + ")");
  }
}

Json load_json_file(const std::string &path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw SimError(ErrorKind::kIoError, "cannot open '" + path + "'");
  std::stringstream ss;
  ss << in.rdbuf();
  if (in.bad()) throw SimError(ErrorKind::kIoError, "cannot read '" + path + "'");
  return parse_json_text(ss.str(), path);
}

ModelConfig model_from_json(const Json &j) {
  ModelConfig c;
  Fields f(j, "model config");
  f.require({"num_layers", "hidden_size", "num_routed_experts", "top_k", "expert_intermediate_size", "vocab_size",
             "seq_len"});
  f.get("num_layers", c.num_layers);
  f.get("num_dense_layers", c.num_dense_layers);
  f.get("hidden_size", c.hidden_size);
  f.get("num_attention_heads", c.num_attention_heads);
  if (const Json *m = f.object("mla_dims")) c.mla_dims = mla_from_json(*m, "model config.mla_dims");
  f.get("num_routed_experts", c.num_routed_experts);
  f.get("num_shared_experts", c.num_shared_experts);
  f.get("top_k", c.top_k);
  f.get("expert_intermediate_size", c.expert_intermediate_size);
  f.get("dense_ffn_intermediate_size", c.dense_ffn_intermediate_size);
  f.get("num_mtp_layers", c.num_mtp_layers);
  f.get("vocab_size", c.vocab_size);
  f.get("seq_len", c.seq_len);
  f.get("dtype_bytes", c.dtype_bytes);
  f.finish();
  require_valid(c);
  return c;
}

Json to_json(const ModelConfig &c) {
  Json j;
  j["num_layers"] = c.num_layers;
  j["num_dense_layers"] = c.num_dense_layers;
  j["hidden_size"] = c.hidden_size;
  j["num_attention_heads"] = c.num_attention_heads;
  j["mla_dims"] = to_json(c.mla_dims);
  j["num_routed_experts"] = c.num_routed_experts;
  j["num_shared_experts"] = c.num_shared_experts;
  j["top_k"] = c.top_k;
  j["expert_intermediate_size"] = c.expert_intermediate_size;
  j["dense_ffn_intermediate_size"] = c.dense_ffn_intermediate_size;
  j["num_mtp_layers"] = c.num_mtp_layers;
  j["vocab_size"] = c.vocab_size;
  j["seq_len"] = c.seq_len;
  j["dtype_bytes"] = c.dtype_bytes;
  return j;
}

HardwareDescription hardware_from_json(const Json &j) {
  HardwareDescription h;
  Fields f(j, "cluster config");
  f.require({"num_nodes", "devices_per_node", "peak_flops_per_device", "hbm_bytes_per_device", "hbm_bandwidth",
             "intra_node_bandwidth", "inter_node_bandwidth"});
  f.get("num_nodes", h.num_nodes);
  f.get("devices_per_node", h.devices_per_node);
  f.get("peak_flops_per_device", h.peak_flops_per_device);
  f.get("matmul_efficiency", h.matmul_efficiency);
  f.get("vector_efficiency", h.vector_efficiency);
  f.get("hbm_bytes_per_device", h.hbm_bytes_per_device);
  f.get("hbm_bandwidth", h.hbm_bandwidth);
  f.get("intra_node_bandwidth", h.intra_node_bandwidth);
  f.get("inter_node_bandwidth", h.inter_node_bandwidth);
  f.get("link_latency_intra", h.link_latency_intra);
  f.get("link_latency_inter", h.link_latency_inter);
  f.get("host_dispatch_time", h.host_dispatch_time);
  f.get("host_to_device_bandwidth", h.host_to_device_bandwidth);
  f.finish();
  require_valid(h);
  return h;
}

Json to_json(const HardwareDescription &h) {
  Json j;
  j["num_nodes"] = h.num_nodes;
  j["devices_per_node"] = h.devices_per_node;
  j["peak_flops_per_device"] = h.peak_flops_per_device;
  j["matmul_efficiency"] = h.matmul_efficiency;
  j["vector_efficiency"] = h.vector_efficiency;
  j["hbm_bytes_per_device"] = h.hbm_bytes_per_device;
  j["hbm_bandwidth"] = h.hbm_bandwidth;
  j["intra_node_bandwidth"] = h.intra_node_bandwidth;
  j["inter_node_bandwidth"] = h.inter_node_bandwidth;
  j["link_latency_intra"] = h.link_latency_intra;
  j["link_latency_inter"] = h.link_latency_inter;
  j["host_dispatch_time"] = h.host_dispatch_time;
  j["host_to_device_bandwidth"] = h.host_to_device_bandwidth;
  return j;
}

ParallelPlan plan_from_json(const Json &j) {
  ParallelPlan p;
  Fields f(j, "parallel plan");
  f.get("tp", p.tp);
  f.get("pp", p.pp);
  f.get("vpp", p.vpp);
  f.get("ep", p.ep);
  f.get("dp", p.dp);
  f.get("cp", p.cp);
  f.get("micro_batch_size", p.micro_batch_size);
  f.get("global_batch_size", p.global_batch_size);
  f.finish();
  std::vector<std::string> errors;
  auto positive = [&](const char *name, int64_t v) {
    if (v < 1) errors.push_back(std::string(name) + " must be >= 1, got " + std::to_string(v));
  };
  positive("tp", p.tp);
  positive("pp", p.pp);
  positive("vpp", p.vpp);
  positive("ep", p.ep);
  positive("cp", p.cp);
  positive("micro_batch_size", p.micro_batch_size);
  positive("global_batch_size", p.global_batch_size);
  if (p.dp < 0) errors.push_back("dp must be >= 0 (0 derives it), got " + std::to_string(p.dp));
  throw_if_errors(errors, "parallel plan");
  return p;
}

Json to_json(const ParallelPlan &p) {
  return Json{{"tp", p.tp}, {"pp", p.pp}, {"vpp", p.vpp}, {"ep", p.ep}, {"dp", p.dp}, {"cp", p.cp},
              {"micro_batch_size", p.micro_batch_size}, {"global_batch_size", p.global_batch_size}};
}

DesignSpace design_space_from_json(const Json &j) {
  DesignSpace s;
  Fields f(j, "design space");
  f.get("num_layers", s.num_layers);
  f.get("num_dense_layers", s.num_dense_layers);
  f.get("hidden_size", s.hidden_size);
  f.get("num_attention_heads", s.num_attention_heads);
  if (const Json *arr = f.array("mla_dims")) {
    for (const auto &m : *arr) s.mla_dims.push_back(mla_from_json(m, "design space.mla_dims"));
  }
  f.get("num_routed_experts", s.num_routed_experts);
  f.get("num_shared_experts", s.num_shared_experts);
  f.get("top_k", s.top_k);
  f.get("expert_intermediate_size", s.expert_intermediate_size);
  f.get("dense_ffn_intermediate_size", s.dense_ffn_intermediate_size);
  f.get("num_mtp_layers", s.num_mtp_layers);
  f.get("vocab_size", s.vocab_size);
  f.get("seq_len", s.seq_len);
  f.get("dtype_bytes", s.dtype_bytes);
  if (const Json *r = f.object("pruning_rules")) {
    Fields pr(*r, "design space.pruning_rules");
    pr.get("shape_multiple", s.pruning_rules.shape_multiple);
    pr.get("expert_count_power_of_two", s.pruning_rules.expert_count_power_of_two);
    if (pr.has("depth_width_band")) {
      double band = 0.0;
      pr.get("depth_width_band", band);
      s.pruning_rules.depth_width_band = band;
    }
    pr.finish();
  }
  f.finish();
  // Axes a config cannot leave empty fall back to the model defaults.
  const ModelConfig defaults;
  if (s.num_dense_layers.empty()) s.num_dense_layers = {defaults.num_dense_layers};
  if (s.num_attention_heads.empty()) s.num_attention_heads = {defaults.num_attention_heads};
  if (s.mla_dims.empty()) s.mla_dims = {defaults.mla_dims};
  if (s.num_shared_experts.empty()) s.num_shared_experts = {defaults.num_shared_experts};
  if (s.dense_ffn_intermediate_size.empty()) s.dense_ffn_intermediate_size = {defaults.dense_ffn_intermediate_size};
  if (s.num_mtp_layers.empty()) s.num_mtp_layers = {defaults.num_mtp_layers};
  if (s.dtype_bytes.empty()) s.dtype_bytes = {defaults.dtype_bytes};
  return s;
}

Json to_json(const DesignSpace &s) {
  Json j;
  j["num_layers"] = s.num_layers;
  j["num_dense_layers"] = s.num_dense_layers;
  j["hidden_size"] = s.hidden_size;
  j["num_attention_heads"] = s.num_attention_heads;
  j["mla_dims"] = Json::array();
  for (const auto &m : s.mla_dims) j["mla_dims"].push_back(to_json(m));
  j["num_routed_experts"] = s.num_routed_experts;
  j["num_shared_experts"] = s.num_shared_experts;
  j["top_k"] = s.top_k;
  j["expert_intermediate_size"] = s.expert_intermediate_size;
  j["dense_ffn_intermediate_size"] = s.dense_ffn_intermediate_size;
  j["num_mtp_layers"] = s.num_mtp_layers;
  j["vocab_size"] = s.vocab_size;
  j["seq_len"] = s.seq_len;
  j["dtype_bytes"] = s.dtype_bytes;
  Json pr{{"shape_multiple", s.pruning_rules.shape_multiple},
          {"expert_count_power_of_two", s.pruning_rules.expert_count_power_of_two}};
  if (s.pruning_rules.depth_width_band) pr["depth_width_band"] = *s.pruning_rules.depth_width_band;
  j["pruning_rules"] = pr;
  return j;
}

TraceSpec trace_spec_from_json(const Json &j) {
  TraceSpec t;
  Fields f(j, "trace spec");
  f.require({"num_tokens", "num_experts", "top_k"});
  f.get("num_tokens", t.num_tokens);
  f.get("num_experts", t.num_experts);
  f.get("top_k", t.top_k);
  f.get("skew_concentration", t.skew_concentration);
  f.get("temporal_autocorrelation", t.temporal_autocorrelation);
  f.get("seed", t.seed);
  f.get("seq_len", t.seq_len);
  f.get("tokens_per_step", t.tokens_per_step);
  f.get("micro_batch_size", t.micro_batch_size);
  f.get("num_tasks", t.num_tasks);
  f.finish();
  require_valid(t);
  return t;
}

Json to_json(const TraceSpec &t) {
  Json j;
  j["num_tokens"] = t.num_tokens;
  j["num_experts"] = t.num_experts;
  j["top_k"] = t.top_k;
  j["skew_concentration"] = t.skew_concentration;
  j["temporal_autocorrelation"] = t.temporal_autocorrelation;
  j["seed"] = t.seed;
  j["seq_len"] = t.seq_len;
  j["tokens_per_step"] = t.tokens_per_step;
  j["micro_batch_size"] = t.micro_batch_size;
  j["num_tasks"] = t.num_tasks;
  return j;
}

SearchFile search_file_from_json(const Json &j) {
  SearchFile s;
  Fields f(j, "search space");
  f.require({"models", "plans"});
  if (const Json *m = f.object("models")) s.models = design_space_from_json(*m);
  if (const Json *arr = f.array("plans")) {
    for (const auto &p : *arr) s.plans.push_back(plan_from_json(p));
  }
  if (const Json *o = f.object("options")) read_options(*o, s.options);
  f.finish();
  return s;
}

BalanceOptions balance_options_from_json(const Json &j) {
  BalanceOptions o;
  Fields f(j, "balance options");
  f.get("num_devices", o.num_devices);
  f.get("window", o.window);
  f.get("threshold", o.threshold);
  std::string phase = training_phase_name(o.phase);
  f.get("phase", phase);
  o.phase = parse_training_phase(phase);
  f.get("tokens_per_step", o.tokens_per_step);
  f.get("expert_param_count", o.expert_param_count);
  f.finish();
  return o;
}

Json to_json(const MemoryReport &r) {
  return Json{{"static_bytes", r.static_bytes},
              {"activation_peak_bytes", r.activation_peak_bytes},
              {"headroom", r.headroom},
              {"feasible", r.feasible}};
}

Json to_json(const MemoryPlan &p) {
  Json j;
  j["full_layer_recompute"] = p.full_layer_recompute;
  j["recompute"] = Json::array();
  for (MemoryOption o : p.recompute) j["recompute"].push_back(memory_option_name(o));
  j["swap"] = Json::array();
  for (MemoryOption o : p.swap) j["swap"].push_back(memory_option_name(o));
  Json per = Json::object();
  for (const auto &[o, c] : p.per_option) {
    per[memory_option_name(o)] =
        Json{{"bytes_saved", c.bytes_saved}, {"time_added", c.time_added}, {"transfer_bytes", c.transfer_bytes}};
  }
  j["per_option"] = per;
  return j;
}

Json to_json(const StepReport &r) {
  return Json{{"step_time", r.step_time},     {"bubble_ratio", r.bubble_ratio}, {"comm_overlap_rate", r.comm_overlap_rate},
              {"exposed_comm", r.exposed_comm}, {"total_comm", r.total_comm},   {"host_idle", r.host_idle},
              {"swap_stall", r.swap_stall},     {"mfu", r.mfu},                 {"tps", r.tps}};
}

Json to_json(const CostReport &r) {
  Json j;
  j["rank"] = r.rank;
  j["model_id"] = r.model_id;
  j["model"] = to_json(r.model);
  j["plan"] = to_json(r.plan);
  j["step_report"] = to_json(r.step_report);
  j["memory_report"] = to_json(r.memory_report);
  j["memory_plan"] = to_json(r.memory_plan);
  j["training_throughput"] = r.training_throughput;
  j["inference_throughput"] = r.inference_throughput;
  j["inference_utilization"] = r.inference_utilization;
  j["score"] = r.score;
  return j;
}

std::string cost_report_csv(const std::vector<CostReport> &reports) {
  std::ostringstream out;
  out << "# moesim-cost-report v1\n";
  out << "rank,model_id,num_layers,hidden_size,num_routed_experts,tp,pp,vpp,ep,dp,cp,micro_batch_size,"
         "global_batch_size,step_time,bubble_ratio,comm_overlap_rate,mfu,training_tps,inference_tps,"
         "inference_utilization,score,static_bytes,activation_peak_bytes,feasible,memory_plan\n";
  for (const auto &r : reports) {
    const auto &p = r.plan;
    out << r.rank << ',' << r.model_id << ',' << r.model.num_layers << ',' << r.model.hidden_size << ','
        << r.model.num_routed_experts << ',' << p.tp << ',' << p.pp << ',' << p.vpp << ',' << p.ep << ',' << p.dp
        << ',' << p.cp << ',' << p.micro_batch_size << ',' << p.global_batch_size << ','
        << fmt(r.step_report.step_time) << ',' << fmt(r.step_report.bubble_ratio) << ','
        << fmt(r.step_report.comm_overlap_rate) << ',' << fmt(r.step_report.mfu) << ','
        << fmt(r.training_throughput) << ',' << fmt(r.inference_throughput) << ','
        << fmt(r.inference_utilization) << ',' << fmt(r.score) << ',' << fmt(r.memory_report.static_bytes) << ','
        << fmt(r.memory_report.activation_peak_bytes) << ',' << (r.memory_report.feasible ? 1 : 0) << ','
        << memory_plan_label(r.memory_plan) << '\n';
  }
  return out.str();
}

}  // namespace moesim
