/*
 * Copyright (c) 2026 The phasefix Authors.
 * SPDX-License-Identifier: Apache-2.0
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

// Drives the built executable end to end.

#include <gtest/gtest.h>
#include <sys/wait.h>

#include <cstdio>

#include "phasefix/pipeline.hpp"
#include "test_util.hpp"

#ifndef PHASEFIX_CLI_PATH
#error "PHASEFIX_CLI_PATH must name the phasefix executable"
#endif
#ifndef PHASEFIX_CONFIG_DIR
#error "PHASEFIX_CONFIG_DIR must point at configs/"
#endif

namespace phasefix {
namespace {

struct RunResult {
  int exit_code = -1;
  std::string out;
};

RunResult run_cli(const std::string& args, const std::string& env = "") {
  const std::string cmd = env + (env.empty() ? "" : " ") + std::string(PHASEFIX_CLI_PATH) + " " + args + " 2>/dev/null";
  RunResult r;
  FILE* pipe = ::popen(cmd.c_str(), "r");
  if (!pipe) return r;
  char buf[4096];
  std::size_t n;
  while ((n = std::fread(buf, 1, sizeof(buf), pipe)) > 0) r.out.append(buf, n);
  const int status = ::pclose(pipe);
  r.exit_code = WIFEXITED(status) ? WEXITSTATUS(status) : -1;
  return r;
}

constexpr const char* kTinyConfig = R"(seed = 38
threads = 2

[data]
train_samples = 300
val_samples = 100
test_samples = 50

[model]
width = 16
shared_layers = 2

[training]
epochs = 2
batch_size = 100

# Small enough steps and enough of them to converge on every scene.
[solver]
iterations = 4000
learning_rate = 0.03
restarts = 5

[evaluation]
cells = [[0.0, 0.0]]
forced_failures = [0, 3]
)";

// Temp directory with the tiny config; output_dir points inside it.
struct Workspace {
  std::filesystem::path dir;
  std::filesystem::path config;
  RunConfig parsed;

  explicit Workspace(const std::string& name, const std::string& extra = "") {
    dir = testing::temp_dir("cli_" + name);
    config = dir / "run.toml";
    testing::write_file(config, "output_dir = \"" + (dir / "out").string() + "\"\n" + kTinyConfig + extra);
    if (extra.empty()) parsed = load_config(config);
  }

  std::string c() const { return "-c " + config.string(); }
  RunPaths paths() const { return RunPaths{dir / "out"}; }
};

TEST(Cli, FlopsReferenceValues) {
  const auto ws = Workspace("flops");
  const auto r = run_cli("flops -c " + (std::filesystem::path(PHASEFIX_CONFIG_DIR) / "paper.toml").string() +
                         " --classes 334 -o " + (ws.dir / "flops").string());
  ASSERT_EQ(r.exit_code, 0) << r.out;
  EXPECT_NE(r.out.find("C_NN    876544\n"), std::string::npos) << r.out;
  EXPECT_NE(r.out.find("C_GD    77000\n"), std::string::npos);
  EXPECT_NE(r.out.find("C_total 953544\n"), std::string::npos);
  const auto j = nlohmann::json::parse(testing::read_file(ws.dir / "flops" / "flops.json"));
  EXPECT_EQ(j["total"], 953'544);
  EXPECT_TRUE(std::filesystem::exists(ws.dir / "flops" / "manifest.json"));
}

TEST(Cli, DeployGendataTrainZeroEpochs) {
  const Workspace ws("pipeline");
  ASSERT_EQ(run_cli("deploy " + ws.c()).exit_code, 0);
  const auto dep = load_deployment(ws.paths());
  EXPECT_EQ(dep, make_deployment(ws.parsed));

  ASSERT_EQ(run_cli("gendata " + ws.c() + " --split train").exit_code, 0);
  ASSERT_EQ(run_cli("gendata " + ws.c() + " --split val").exit_code, 0);
  const ModelKey k{0.0, 0.0};
  ASSERT_TRUE(std::filesystem::exists(ws.paths().dataset(Split::kTrain, k)));
  const auto manifest = nlohmann::json::parse(testing::read_file(ws.paths().manifest()));
  EXPECT_EQ(manifest["command"], "gendata");
  EXPECT_EQ(manifest["split"], "val");
  EXPECT_EQ(manifest["config"]["seed"], 38);

  ASSERT_EQ(run_cli("train " + ws.c() + " --epochs 0").exit_code, 0);
  const auto model = load_model<float>(ws.paths().model(k));
  const auto init = MlpModel::initialized(mlp_config_for(dep, ws.parsed.model), derive_seed(38, Stream::kInit, 0));
  EXPECT_TRUE(model.same_parameters(init));
  EXPECT_EQ(model.metadata().epochs_seen, 0);
  EXPECT_EQ(testing::read_file(ws.paths().history(k)), "epoch,train_loss,val_loss,val_accuracy_pct\n");
}

TEST(Cli, TrainAndEvalWriteReports) {
  const Workspace ws("eval");
  ASSERT_EQ(run_cli("deploy " + ws.c()).exit_code, 0);
  ASSERT_EQ(run_cli("train " + ws.c() + " --all-cells").exit_code, 0);
  const auto r = run_cli("eval " + ws.c());
  ASSERT_EQ(r.exit_code, 0);
  EXPECT_NE(r.out.find("pt0dBm_pf0: accuracy"), std::string::npos) << r.out;
  for (const char* f : {"table1.csv", "table2.csv", "table3.csv", "table1.json", "report.json"})
    EXPECT_TRUE(std::filesystem::exists(ws.paths().reports() / f)) << f;
  EXPECT_EQ(nlohmann::json::parse(testing::read_file(ws.paths().manifest()))["command"], "eval");
}

TEST(Cli, GendataIsByteIdentical) {
  const Workspace a("bytes_a");
  const Workspace b("bytes_b");
  for (const auto* ws : {&a, &b}) {
    ASSERT_EQ(run_cli("deploy " + ws->c()).exit_code, 0);
    ASSERT_EQ(run_cli("gendata " + ws->c() + " --split test --p-f 0.01").exit_code, 0);
  }
  const ModelKey k{0.0, 0.01};
  const auto da = testing::read_file(a.paths().dataset(Split::kTest, k));
  EXPECT_FALSE(da.empty());
  EXPECT_EQ(da, testing::read_file(b.paths().dataset(Split::kTest, k)));
}

TEST(Cli, PositionNoiselessOracleLabels) {
  const Workspace ws("position");
  ASSERT_EQ(run_cli("deploy " + ws.c()).exit_code, 0);
  const auto dep = load_deployment(ws.paths());
  Rng rng(17);
  const Sample s = generate_sample(dep, testing::noiseless_radio(), FailurePolicy{}, rng);
  std::string delta, labels;
  for (double d : s.delta) delta += (delta.empty() ? "" : ",") + format_double(d);
  for (auto l : s.labels) labels += (labels.empty() ? "" : ",") + std::to_string(l);
  const auto truth = format_double(s.ground_truth.ue.x()) + "," + format_double(s.ground_truth.ue.y());
  const auto r = run_cli("position " + ws.c() + " --delta " + delta + " --labels=" + labels + " --truth " + truth);
  ASSERT_EQ(r.exit_code, 0) << r.out;
  const auto j = nlohmann::json::parse(testing::read_file(ws.paths().root / "position.json"));
  EXPECT_EQ(j["flag"], "NoApFailure");
  EXPECT_LE(j["error_m"].get<double>(), 1e-3);
  EXPECT_EQ(j["ambiguity_source"], "given");
}

TEST(Cli, SeedFromEnvironment) {
  const Workspace ws("seed_env");
  ASSERT_EQ(run_cli("deploy " + ws.c(), "PHASEFIX_SEED=1638").exit_code, 0);
  const auto manifest = nlohmann::json::parse(testing::read_file(ws.paths().manifest()));
  EXPECT_EQ(manifest["config"]["seed"], 1638);
  EXPECT_EQ(manifest["seed_from_env"], true);
  EXPECT_EQ(manifest["total_classes"], 458);
  auto c = ws.parsed;
  c.seed = 1638;
  EXPECT_EQ(load_deployment(ws.paths()), make_deployment(c));
  // The stored deployment no longer matches the file's own seed.
  EXPECT_EQ(run_cli("gendata " + ws.c()).exit_code, 2);
  EXPECT_EQ(run_cli("gendata " + ws.c(), "PHASEFIX_SEED=1638").exit_code, 0);
  EXPECT_EQ(run_cli("deploy " + ws.c(), "PHASEFIX_SEED=banana").exit_code, 1);
}

TEST(Cli, ConfigErrorsExitOne) {
  const Workspace ws("config_errors", "bogus_key = 1\n");
  EXPECT_EQ(run_cli("deploy " + ws.c()).exit_code, 1);
  EXPECT_EQ(run_cli("deploy -c /nonexistent.toml").exit_code, 1);
  EXPECT_EQ(run_cli("frobnicate").exit_code, 1);
  EXPECT_EQ(run_cli("deploy").exit_code, 1);
  const Workspace good("config_errors_flags");
  EXPECT_EQ(run_cli("gendata " + good.c() + " --split holdout").exit_code, 1);
  EXPECT_EQ(run_cli("train " + good.c() + " --epochs -1").exit_code, 1);
  EXPECT_EQ(run_cli("train " + good.c() + " --p-f 2").exit_code, 1);
  EXPECT_EQ(run_cli("flops " + good.c() + " --classes 0").exit_code, 1);
  ASSERT_EQ(run_cli("deploy " + good.c()).exit_code, 0);
  EXPECT_EQ(run_cli("position " + good.c() + " --delta 0.1,0.2").exit_code, 1);
}

TEST(Cli, RuntimeErrorsExitTwo) {
  const Workspace ws("runtime_errors");
  // Missing deployment, then missing model.
  EXPECT_EQ(run_cli("gendata " + ws.c()).exit_code, 2);
  ASSERT_EQ(run_cli("deploy " + ws.c()).exit_code, 0);
  EXPECT_EQ(run_cli("eval " + ws.c()).exit_code, 2);
  EXPECT_EQ(run_cli("position " + ws.c() + " --delta 0,0,0,0,0,0,0,0").exit_code, 2);
  testing::write_file(ws.paths().deployment(), "{ broken");
  EXPECT_EQ(run_cli("gendata " + ws.c()).exit_code, 2);
}

}  // namespace
}  // namespace phasefix
