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
#include <gtest/gtest.h>

#include <cstdio>
#include <fstream>
#include <sstream>
#include <vector>

#include "fixtures.h"
#include "moesim/cli.h"
#include "moesim/config_io.h"
#include "moesim/error.h"

namespace moesim {
namespace {

const std::string kConfigs = std::string(MOESIM_SOURCE_DIR) + "/configs/";

struct Run {
  int code;
  std::string out;
  std::string err;
};

Run run(std::vector<std::string> args) {
  args.insert(args.begin(), "moesim");
  std::vector<const char *> argv;
  for (const auto &a : args) argv.push_back(a.c_str());
  std::ostringstream out, err;
  const int code = cli::run(static_cast<int>(argv.size()), argv.data(), out, err);
  return {code, out.str(), err.str()};
}

std::string parse_error(const std::string &text, ModelConfig (*fn)(const Json &) = model_from_json) {
  try {
    fn(parse_json_text(text, "inline"));
  } catch (const SimError &e) {
    return std::string(e.what());
  }
  return "";
}

std::string slurp(const std::string &path) {
  std::ifstream f(path);
  std::stringstream s;
  s << f.rdbuf();
  return s.str();
}

TEST(ConfigTest, ModelRoundTrip) {
  for (const auto &cfg : {testing::pangu(), testing::tiny()}) {
    EXPECT_EQ(model_from_json(parse_json_text(to_json(cfg).dump(), "x")), cfg);
  }
  EXPECT_EQ(hardware_from_json(to_json(testing::cluster_6k())), testing::cluster_6k());
  EXPECT_EQ(plan_from_json(to_json(testing::pangu_plan())), testing::pangu_plan());
}

TEST(ConfigTest, ShippedConfigsMatchFixtures) {
  EXPECT_EQ(model_from_json(load_json_file(kConfigs + "pangu_ultra_moe.json")), testing::pangu());
  EXPECT_EQ(hardware_from_json(load_json_file(kConfigs + "cluster_6k.json")), testing::cluster_6k());
  EXPECT_EQ(hardware_from_json(load_json_file(kConfigs + "cluster_compute_rich.json")), testing::compute_rich());
  EXPECT_EQ(plan_from_json(load_json_file(kConfigs + "pangu_plan.json")), testing::pangu_plan());
}

TEST(ConfigTest, UnknownFieldIsNamed) {
  Json j = to_json(testing::tiny());
  j.erase("hidden_size");
  j["hiden_size"] = 64;
  const auto msg = parse_error(j.dump());
  EXPECT_NE(msg.find("hiden_size"), std::string::npos) << msg;
}

TEST(ConfigTest, MissingAndMistypedFields) {
  Json j = to_json(testing::tiny());
  j.erase("top_k");
  EXPECT_NE(parse_error(j.dump()).find("top_k"), std::string::npos);
  j = to_json(testing::tiny());
  j["num_layers"] = "two";
  EXPECT_NE(parse_error(j.dump()).find("num_layers"), std::string::npos);
}

TEST(ConfigTest, MalformedJsonReportsLine) {
  try {
    parse_json_text("{\n  \"a\": 1,\n  \"b\": ]\n}\n", "bad.json");
    FAIL();
  } catch (const SimError &e) {
    EXPECT_EQ(e.kind(), ErrorKind::kParseError);
    EXPECT_NE(std::string(e.what()).find("bad.json:3"), std::string::npos) << e.what();
  }
}

TEST(ConfigTest, ZeroTpListsInvariant) {
  Json j = to_json(testing::pangu_plan());
  j["tp"] = 0;
  try {
    plan_from_json(j);
    FAIL();
  } catch (const SimError &e) {
    EXPECT_EQ(e.kind(), ErrorKind::kInvalidArgument);
    EXPECT_NE(std::string(e.what()).find("tp must be >= 1"), std::string::npos) << e.what();
  }
}

TEST(ConfigTest, CsvHeader) {
  const auto csv = cost_report_csv({});
  EXPECT_EQ(csv.rfind("# moesim-cost-report v1\n", 0), 0u);
  EXPECT_NE(csv.find("rank,model_id"), std::string::npos);
}

TEST(CliTest, ValidateDerivesDp) {
  const auto r = run({"validate", "--model", kConfigs + "pangu_ultra_moe.json", "--cluster", kConfigs + "cluster_6k.json",
                      "--plan", kConfigs + "pangu_plan.json"});
  EXPECT_EQ(r.code, cli::kExitOk) << r.err;
  EXPECT_NE(r.out.find("dp=48"), std::string::npos) << r.out;
  EXPECT_NE(r.out.find("micro_batches=64"), std::string::npos) << r.out;
}

TEST(CliTest, ValidateRejectsBadPlan) {
  const std::string plan = ::testing::TempDir() + "bad_plan.json";
  Json j = to_json(testing::pangu_plan());
  j["ep"] = 5;
  std::ofstream(plan) << j.dump();
  const auto r = run({"validate", "--model", kConfigs + "pangu_ultra_moe.json", "--cluster", kConfigs + "cluster_6k.json",
                      "--plan", plan});
  EXPECT_EQ(r.code, cli::kExitInvalid);
  EXPECT_NE(r.out.find("error:"), std::string::npos);
}

TEST(CliTest, MissingFileIsIoError) {
  const auto r = run({"validate", "--model", kConfigs + "nope.json", "--cluster", kConfigs + "cluster_6k.json", "--plan",
                      kConfigs + "pangu_plan.json"});
  EXPECT_EQ(r.code, cli::kExitIo);
  EXPECT_NE(r.err.find("nope.json"), std::string::npos);
}

TEST(CliTest, UnknownFlagIsInvalid) {
  EXPECT_EQ(run({"validate", "--bogus"}).code, cli::kExitInvalid);
  EXPECT_EQ(run({}).code, cli::kExitInvalid);
}

TEST(CliTest, SearchRanksWholeSpace) {
  const auto r = run({"search", "--space", kConfigs + "tiny_space.json", "--cluster", kConfigs + "cluster_tiny.json"});
  ASSERT_EQ(r.code, cli::kExitOk) << r.err;
  std::istringstream in(r.out);
  std::string line;
  std::getline(in, line);
  EXPECT_EQ(line, "# moesim-cost-report v1");
  std::getline(in, line);
  int rows = 0;
  int last = 0;
  while (std::getline(in, line)) {
    const int rank = std::stoi(line.substr(0, line.find(',')));
    EXPECT_GT(rank, last);
    last = rank;
    ++rows;
  }
  EXPECT_EQ(rows, 12);
}

TEST(CliTest, SearchWritesCsvAndJson) {
  const std::string stem = ::testing::TempDir() + "ranked";
  const auto r = run({"search", "--space", kConfigs + "tiny_space.json", "--cluster", kConfigs + "cluster_tiny.json",
                      "--top", "3", "--out", stem + ".csv"});
  ASSERT_EQ(r.code, cli::kExitOk) << r.err;
  EXPECT_EQ(Json::parse(slurp(stem + ".json")).size(), 3u);
  std::remove((stem + ".csv").c_str());
  std::remove((stem + ".json").c_str());
}

TEST(CliTest, EveryCommandIsDeterministic) {
  const std::string trace = ::testing::TempDir() + "t.trace";
  const std::string small_trace = ::testing::TempDir() + "small_trace.json";
  std::ofstream(small_trace) << R"({"num_tokens": 20000, "num_experts": 16, "top_k": 2, "skew_concentration": 0.3,
    "temporal_autocorrelation": 0.9, "seed": 3, "tokens_per_step": 1000, "num_tasks": 2})";
  const std::vector<std::vector<std::string>> commands{
      {"validate", "--model", kConfigs + "pangu_ultra_moe.json", "--cluster", kConfigs + "cluster_6k.json", "--plan",
       kConfigs + "pangu_plan.json"},
      {"simulate", "--model", kConfigs + "pangu_ultra_moe.json", "--cluster", kConfigs + "cluster_6k.json", "--plan",
       kConfigs + "pangu_plan.json"},
      {"search", "--space", kConfigs + "tiny_space.json", "--cluster", kConfigs + "cluster_tiny.json", "--workers", "3"},
      {"generate-trace", "--config", small_trace},
      {"trace-stats", "--trace", small_trace, "--seed", "5"},
      {"balance", "--trace", small_trace, "--config", kConfigs + "balance.json"},
  };
  for (const auto &c : commands) {
    const auto a = run(c);
    const auto b = run(c);
    EXPECT_EQ(a.code, cli::kExitOk) << c[0] << ": " << a.err;
    EXPECT_FALSE(a.out.empty()) << c[0];
    EXPECT_EQ(a.out, b.out) << c[0];
  }

  // A written trace reads back to the same statistics as the spec it came from.
  ASSERT_EQ(run({"generate-trace", "--config", small_trace, "--out", trace}).code, cli::kExitOk);
  EXPECT_EQ(run({"trace-stats", "--trace", trace}).out, run({"trace-stats", "--trace", small_trace}).out);
  std::remove(trace.c_str());
  std::remove(small_trace.c_str());
}

TEST(CliTest, SimulateReportsBothModes) {
  const auto r = run({"simulate", "--model", kConfigs + "pangu_ultra_moe.json", "--cluster",
                      kConfigs + "cluster_6k.json", "--plan", kConfigs + "pangu_plan.json"});
  ASSERT_EQ(r.code, cli::kExitOk) << r.err;
  const auto j = Json::parse(r.out);
  EXPECT_EQ(j["mode"], "both");
  EXPECT_GT(j["training_throughput"].get<double>(), 0.0);
  EXPECT_GT(j["inference_throughput"].get<double>(), 0.0);
}

}  // namespace
}  // namespace moesim
