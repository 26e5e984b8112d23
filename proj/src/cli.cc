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

#include "moesim/cli.h"

#include <cstdio>
#include <fstream>
#include <limits>
#include <optional>
#include <sstream>

#include "CLI11.hpp"
#include "moesim/config_io.h"
#include "moesim/error.h"

namespace moesim::cli {

namespace {

struct Manifest {
  std::string model;
  std::string cluster;
  std::string plan;
  std::string space;
  std::string trace;
  std::string config;
  std::string out;
  std::optional<uint64_t> seed;
  int64_t workers = 1;
  std::string mode;
  int64_t top = 0;  // 0: everything
};

void require_path(const std::string &path, const char *flag) {
  if (path.empty()) throw SimError(ErrorKind::kInvalidArgument, std::string(flag) + " is required");
}

bool ends_with(const std::string &s, const std::string &suffix) {
  return s.size() >= suffix.size() && s.compare(s.size() - suffix.size(), suffix.size(), suffix) == 0;
}

void write_file(const std::string &path, const std::string &text) {
  std::ofstream f(path, std::ios::binary);
  if (!f) throw SimError(ErrorKind::kIoError, "cannot write '" + path + "'");
  f << text;
  f.close();
  if (!f) throw SimError(ErrorKind::kIoError, "cannot write '" + path + "'");
}

void emit(const Manifest &m, std::ostream &out, const std::string &text) {
  if (m.out.empty()) {
    out << text;
  } else {
    write_file(m.out, text);
  }
}

std::string dump(const Json &j) { return j.dump(2) + "\n"; }

std::string fmt(double v) {
  char buf[40];
  std::snprintf(buf, sizeof(buf), "%.9g", v);
  return buf;
}

RoutingTrace load_trace(const Manifest &m) {
  require_path(m.trace, "--trace");
  if (ends_with(m.trace, ".json")) {
    TraceSpec spec = trace_spec_from_json(load_json_file(m.trace));
    if (m.seed) spec.seed = *m.seed;
    return generate_trace(spec);
  }
  std::ifstream f(m.trace, std::ios::binary);
  if (!f) throw SimError(ErrorKind::kIoError, "cannot open '" + m.trace + "'");
  return read_trace(f);
}

int cmd_validate(const Manifest &m, std::ostream &out) {
  require_path(m.model, "--model");
  require_path(m.cluster, "--cluster");
  require_path(m.plan, "--plan");
  const ModelConfig cfg = model_from_json(load_json_file(m.model));
  const HardwareDescription hw = hardware_from_json(load_json_file(m.cluster));
  const ParallelPlan plan = plan_from_json(load_json_file(m.plan));
  const PlanValidation v = validate_plan(plan, cfg, hw);

  std::ostringstream s;
  const ParallelPlan &r = v.resolved;
  s << (v.ok() ? "ok" : "invalid") << " tp=" << r.tp << " pp=" << r.pp << " vpp=" << r.vpp << " ep=" << r.ep
    << " dp=" << r.dp << " cp=" << r.cp << " world=" << hw.world_size() << "\n";
  for (const auto &e : v.errors) s << "error: " << e << "\n";
  if (v.ok()) {
    s << "micro_batches=" << micro_batch_count(r) << "\n";
    const auto a = assign_chunks(cfg, r, ChunkWeights{});
    s << "max_chunk_weight=" << fmt(a.max_chunk_weight) << " overflow_ratio=" << fmt(a.overflow_ratio()) << "\n";
  }
  emit(m, out, s.str());
  return v.ok() ? kExitOk : kExitInvalid;
}

int cmd_simulate(const Manifest &m, std::ostream &out) {
  require_path(m.model, "--model");
  require_path(m.cluster, "--cluster");
  require_path(m.plan, "--plan");
  const ModelConfig cfg = model_from_json(load_json_file(m.model));
  const HardwareDescription hw = hardware_from_json(load_json_file(m.cluster));
  const ParallelPlan plan = plan_from_json(load_json_file(m.plan));
  const SearchOptions options;
  CostReport r;
  if (m.mode.empty()) {
    r = score_both(cfg, plan, hw, options);
  } else {
    r = score_config(cfg, plan, hw, parse_score_mode(m.mode), options);
  }
  Json j = to_json(r);
  j["mode"] = m.mode.empty() ? "both" : m.mode;
  emit(m, out, dump(j));
  return kExitOk;
}

int cmd_search(const Manifest &m, std::ostream &out) {
  require_path(m.space, "--space");
  require_path(m.cluster, "--cluster");
  SearchFile sf = search_file_from_json(load_json_file(m.space));
  const HardwareDescription hw = hardware_from_json(load_json_file(m.cluster));
  if (m.workers < 1) throw SimError(ErrorKind::kInvalidArgument, "--workers must be >= 1");
  sf.options.workers = m.workers;
  if (!m.mode.empty()) {
    const bool training = parse_score_mode(m.mode) == ScoreMode::kTraining;
    sf.options.training_weight = training ? 1.0 : 0.0;
    sf.options.inference_weight = training ? 0.0 : 1.0;
  }
  if (m.top < 0) throw SimError(ErrorKind::kInvalidArgument, "--top must be >= 0");
  const size_t top = m.top == 0 ? std::numeric_limits<size_t>::max() : static_cast<size_t>(m.top);
  const auto ranked = search_space(sf.models, sf.plans, hw, top, sf.options);

  const std::string csv = cost_report_csv(ranked);
  if (m.out.empty()) {
    out << csv;
    return kExitOk;
  }
  // --out names the CSV; the full reports go beside it as JSON.
  const std::string stem = ends_with(m.out, ".csv") ? m.out.substr(0, m.out.size() - 4) : m.out;
  Json j = Json::array();
  for (const auto &r : ranked) j.push_back(to_json(r));
  write_file(stem + ".csv", csv);
  write_file(stem + ".json", dump(j));
  return kExitOk;
}

int cmd_balance(const Manifest &m, std::ostream &out) {
  const RoutingTrace trace = load_trace(m);
  BalanceOptions options;
  if (!m.config.empty()) options = balance_options_from_json(load_json_file(m.config));
  const BalanceReport report = simulate_balance(trace, options);

  Json j;
  j["num_experts"] = trace.num_experts;
  j["top_k"] = trace.top_k;
  j["num_tokens"] = trace.tokens.size();
  j["num_devices"] = options.num_devices;
  j["window"] = options.window;
  j["threshold"] = options.threshold;
  j["phase"] = training_phase_name(options.phase);
  j["tokens_per_step"] = options.tokens_per_step;
  j["mean_cv_static"] = report.mean_cv_static;
  j["mean_cv_dynamic"] = report.mean_cv_dynamic;
  j["cv_reduction"] = report.cv_reduction();
  int64_t placements = 0;
  Json steps = Json::array();
  for (const auto &s : report.steps) {
    placements += s.replanned ? 1 : 0;
    steps.push_back(Json{{"step", s.step},
                         {"cv_static", s.cv_static},
                         {"cv_dynamic", s.cv_dynamic},
                         {"replanned", s.replanned},
                         {"moved_experts", s.moved_experts},
                         {"swap_bytes", s.swap_bytes}});
  }
  j["placements"] = placements;
  j["steps"] = steps;
  emit(m, out, dump(j));
  return kExitOk;
}

int cmd_trace_stats(const Manifest &m, std::ostream &out) {
  const RoutingTrace trace = load_trace(m);
  const TraceStatistics st = trace_statistics(trace);
  std::ostringstream s;
  s << "# moesim-coactivation v1\nexpert";
  for (int64_t e = 0; e < trace.num_experts; ++e) s << ",e" << e;
  s << "\n";
  for (size_t i = 0; i < st.coactivation.size(); ++i) {
    s << "e" << i;
    for (double v : st.coactivation[i]) s << ',' << fmt(v);
    s << "\n";
  }
  s << "# moesim-specialization v1 uniform_share=" << fmt(st.uniform_share) << "\ntask";
  for (int64_t e = 0; e < trace.num_experts; ++e) s << ",e" << e;
  s << "\n";
  for (const auto &[task, shares] : st.specialization) {
    s << task;
    for (double v : shares) s << ',' << fmt(v);
    s << "\n";
  }
  emit(m, out, s.str());
  return kExitOk;
}

int cmd_generate_trace(const Manifest &m, std::ostream &out) {
  require_path(m.config, "--config");
  TraceSpec spec = trace_spec_from_json(load_json_file(m.config));
  if (m.seed) spec.seed = *m.seed;
  std::ostringstream s;
  write_trace(s, generate_trace(spec));
  emit(m, out, s.str());
  return kExitOk;
}

}  // namespace

int run(int argc, const char *const *argv, std::ostream &out, std::ostream &err) {
  CLI::App app{"moesim: MoE training and inference simulator"};
  app.require_subcommand(1);
  Manifest m;
  uint64_t seed = 0;

  auto add_common = [&](CLI::App *sub) {
    sub->add_option("--out", m.out, "Output path (default: stdout)");
  };
  auto *validate = app.add_subcommand("validate", "Check a parallel plan against a model and cluster");
  auto *simulate = app.add_subcommand("simulate", "Score one (model, plan) pair");
  auto *search = app.add_subcommand("search", "Rank a design space");
  auto *balance = app.add_subcommand("balance", "Replay expert placement over a routing trace");
  auto *stats = app.add_subcommand("trace-stats", "Co-activation and specialization tables");
  auto *gen = app.add_subcommand("generate-trace", "Write a synthetic routing trace");

  for (auto *sub : {validate, simulate}) {
    sub->add_option("--model", m.model, "Model config JSON");
    sub->add_option("--cluster", m.cluster, "Cluster sheet JSON");
    sub->add_option("--plan", m.plan, "Parallel plan JSON");
  }
  simulate->add_option("--mode", m.mode, "training | inference (default: both)");
  search->add_option("--space", m.space, "Search space JSON");
  search->add_option("--cluster", m.cluster, "Cluster sheet JSON");
  search->add_option("--workers", m.workers, "Parallel evaluators");
  search->add_option("--mode", m.mode, "Rank by training or inference only");
  search->add_option("--top", m.top, "Keep the best N (0: all)");
  for (auto *sub : {balance, stats}) {
    sub->add_option("--trace", m.trace, "Trace file, or a trace spec ending in .json");
  }
  balance->add_option("--config", m.config, "Balance options JSON");
  gen->add_option("--config", m.config, "Trace spec JSON");
  CLI::Option *seed_opts[3];
  int n_seed = 0;
  for (auto *sub : {balance, stats, gen}) seed_opts[n_seed++] = sub->add_option("--seed", seed, "RNG seed override");
  for (auto *sub : {validate, simulate, search, balance, stats, gen}) add_common(sub);

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError &e) {
    const int code = app.exit(e, out, err);
    return code == 0 ? kExitOk : kExitInvalid;
  }
  for (auto *opt : seed_opts) {
    if (opt->count() > 0) m.seed = seed;
  }

  try {
    if (validate->parsed()) return cmd_validate(m, out);
    if (simulate->parsed()) return cmd_simulate(m, out);
    if (search->parsed()) return cmd_search(m, out);
    if (balance->parsed()) return cmd_balance(m, out);
    if (stats->parsed()) return cmd_trace_stats(m, out);
    if (gen->parsed()) return cmd_generate_trace(m, out);
  } catch (const SimError &e) {
    err << "moesim: " << e.what() << "\n";
    return e.kind() == ErrorKind::kIoError ? kExitIo : kExitInvalid;
  }
  return kExitInvalid;
}

}  // namespace moesim::cli
