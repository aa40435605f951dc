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

#include <gtest/gtest.h>

#include <numeric>

#include "phasefix/evaluation.hpp"
#include "test_util.hpp"

namespace phasefix {
namespace {

using Labels = std::vector<std::vector<std::int64_t>>;

// ---- accuracy ---------------------------------------------------------------

TEST(Accuracy, AllCorrect) {
  const Labels y{{1, 2}, {0, -1}, {3, 3}};
  EXPECT_DOUBLE_EQ(overall_accuracy(y, y), 100.0);
}

TEST(Accuracy, OneWrongComponentFailsTheSample) {
  const Labels y{{1, 2}, {0, -1}, {3, 3}, {4, 4}};
  Labels p = y;
  p[2][1] = 2;
  EXPECT_DOUBLE_EQ(overall_accuracy(p, y), 100.0 * 3.0 / 4.0);
  p[2][0] = 9;
  EXPECT_DOUBLE_EQ(overall_accuracy(p, y), 75.0);
}

TEST(Accuracy, Errors) {
  EXPECT_THROW(overall_accuracy({{1}}, {{1}, {2}}), LengthMismatch);
  EXPECT_THROW(overall_accuracy({}, {}), EmptyInput);
}

TEST(Accuracy, OrderInvariant) {
  Rng rng(1);
  Labels y(500), p(500);
  for (std::size_t i = 0; i < y.size(); ++i) {
    y[i] = {static_cast<std::int64_t>(rng() % 3), static_cast<std::int64_t>(rng() % 3)};
    p[i] = {static_cast<std::int64_t>(rng() % 3), static_cast<std::int64_t>(rng() % 3)};
  }
  const double a = overall_accuracy(p, y);
  std::vector<std::size_t> perm(y.size());
  std::iota(perm.begin(), perm.end(), 0);
  std::shuffle(perm.begin(), perm.end(), rng);
  Labels ys, ps;
  for (auto i : perm) {
    ys.push_back(y[i]);
    ps.push_back(p[i]);
  }
  EXPECT_DOUBLE_EQ(overall_accuracy(ps, ys), a);
}

// ---- errors, ECDF, percentiles ----------------------------------------------

TEST(Percentile, NearestRankOneToHundred) {
  std::vector<double> e(100);
  std::iota(e.begin(), e.end(), 1.0);
  std::shuffle(e.begin(), e.end(), Rng(3));
  EXPECT_EQ(percentile(e, 95.0), 95.0);
  EXPECT_EQ(percentile(e, 50.0), 50.0);
  EXPECT_EQ(percentile(e, 100.0), 100.0);
  EXPECT_EQ(percentile(e, 0.0), 1.0);
  EXPECT_EQ(percentile(e, 67.0), 67.0);
  EXPECT_EQ(percentile(e, 0.5), 1.0);
  EXPECT_EQ(percentile(e, 94.01), 95.0);
}

TEST(Percentile, Errors) {
  EXPECT_THROW(percentile({}, 50.0), EmptyInput);
  EXPECT_THROW(percentile({1.0}, -1.0), InvalidArgument);
  EXPECT_THROW(percentile({1.0}, 100.5), InvalidArgument);
  EXPECT_THROW(percentile({1.0}, std::nan("")), InvalidArgument);
}

TEST(Ecdf, ConstantErrorsGiveUnitStep) {
  const std::vector<double> e(37, 0.25);
  const auto c = ecdf(e);
  ASSERT_EQ(c.size(), 1u);
  EXPECT_EQ(c[0].error, 0.25);
  EXPECT_EQ(c[0].cdf, 1.0);
  for (double p : {0.0, 10.0, 50.0, 95.0, 100.0}) EXPECT_EQ(percentile(e, p), 0.25);
}

TEST(Ecdf, DistinctValues) {
  const auto c = ecdf({3.0, 1.0, 2.0, 2.0});
  ASSERT_EQ(c.size(), 3u);
  EXPECT_EQ(c[0].error, 1.0);
  EXPECT_DOUBLE_EQ(c[0].cdf, 0.25);
  EXPECT_EQ(c[1].error, 2.0);
  EXPECT_DOUBLE_EQ(c[1].cdf, 0.75);
  EXPECT_DOUBLE_EQ(c[2].cdf, 1.0);
  EXPECT_THROW(ecdf({}), EmptyInput);
}

TEST(EvaluationProperty, EcdfAndPercentilesConsistent) {
  Rng rng(4);
  for (int t = 0; t < 200; ++t) {
    const auto n = 1 + rng() % 300;
    std::vector<double> e(n);
    // Coarse values so duplicates occur.
    for (auto& v : e) v = std::round(uniform(rng, 0.0, 50.0)) * 0.01;
    const auto c = ecdf(e);
    ASSERT_EQ(c.back().cdf, 1.0);
    for (std::size_t i = 1; i < c.size(); ++i) {
      ASSERT_GT(c[i].error, c[i - 1].error);
      ASSERT_GT(c[i].cdf, c[i - 1].cdf);
    }
    // Right-continuity: cdf at each point counts values <= it.
    for (const auto& pt : c) {
      const auto le = std::count_if(e.begin(), e.end(), [&](double v) { return v <= pt.error; });
      ASSERT_DOUBLE_EQ(pt.cdf, static_cast<double>(le) / static_cast<double>(n));
    }
    ASSERT_EQ(percentile(e, 100.0), *std::max_element(e.begin(), e.end()));
    double prev = -1.0;
    for (double p = 0.0; p <= 100.0; p += 0.5) {
      const double v = percentile(e, p);
      ASSERT_GE(v, prev);
      prev = v;
      // The percentile is the smallest ECDF point reaching p / 100.
      const auto it = std::find_if(c.begin(), c.end(), [&](const EcdfPoint& q) { return q.cdf >= p / 100.0 - 1e-12; });
      ASSERT_EQ(v, std::max(it->error, c.front().error));
    }
  }
}

TEST(PositioningErrors, Euclidean) {
  std::vector<SolverResult> r(2);
  r[0].position = Vec2(3.0, 4.0);
  r[1].position = Vec2(1.0, 1.0);
  const auto e = positioning_errors(r, {Vec2::Zero(), Vec2(1.0, 1.0)});
  EXPECT_EQ(e, (std::vector<double>{5.0, 0.0}));
  EXPECT_THROW(positioning_errors(r, {Vec2::Zero()}), LengthMismatch);
  EXPECT_THROW(positioning_errors({}, {}), EmptyInput);
}

TEST(PassRatio, Examples) {
  const double tau = 1e-4;
  std::vector<SolverResult> r(10);
  for (auto& x : r) x.final_cost = 0.0;
  EXPECT_DOUBLE_EQ(failure_pass_ratio(r, tau), 100.0);
  for (auto& x : r) x.final_cost = 2.0 * tau;
  EXPECT_DOUBLE_EQ(failure_pass_ratio(r, tau), 0.0);
  r[3].final_cost = tau;
  EXPECT_DOUBLE_EQ(failure_pass_ratio(r, tau), 10.0);
  EXPECT_THROW(failure_pass_ratio({}, tau), EmptyInput);
}

// ---- FLOPs ------------------------------------------------------------------

TEST(Flops, ReferenceValues) {
  EXPECT_EQ(flops_nn(128, 8, 334, 9), 876'544);
  EXPECT_EQ(flops_gd(500, 8), 77'000);
  EXPECT_EQ((FlopCount{flops_nn(128, 8, 334, 9), flops_gd(500, 8)}.total()), 953'544);
}

TEST(Flops, ExactIntegers) {
  // Large enough that a double intermediate would round.
  const std::int64_t D = (1 << 26) + 1;
  EXPECT_EQ(flops_nn(D, 1, 1, 1), D * D * 20 + D * 6);
  EXPECT_THROW(flops_nn(0, 8, 334, 9), InvalidArgument);
  EXPECT_THROW(flops_nn(128, 8, 334, -1), InvalidArgument);
  EXPECT_THROW(flops_gd(0, 8), InvalidArgument);
  EXPECT_THROW(flops_gd(500, 0), InvalidArgument);
}

TEST(Flops, ModelLayerCount) {
  MlpConfig c;
  c.branch_q = std::vector<int>(8, 20);  // Q = 8 * 42 = 336
  const std::int64_t D = 128, I = 9, Q = 336;
  const std::int64_t expected = 2 * D * (I - 1) + 7 * 2 * D * D + 8 * (2 * 2 * D * D) + 2 * D * Q;
  EXPECT_EQ(flops_model(c), expected);
}

TEST(FailureTestSpec, Names) {
  EXPECT_EQ(FailureTestSpec{0}.name(), "No failure");
  EXPECT_EQ(FailureTestSpec{1}.name(), "1 failure");
  EXPECT_EQ(FailureTestSpec{3}.name(), "3 failures");
}

// ---- experiment harness -----------------------------------------------------

ExperimentSpec noiseless_spec(std::int64_t samples) {
  ExperimentSpec spec;
  spec.deployment = testing::standard_deployment(5);
  spec.radio = testing::noiseless_radio();
  spec.cells = {{0.0, 0.0}};
  spec.test_samples = samples;
  spec.seed = 3;
  spec.solver.restarts = 5;
  spec.solver.learning_rate = 0.03;
  spec.solver.iterations = 4000;
  spec.oracle_labels = true;
  return spec;
}

TEST(RunExperiment, NoiselessOracleLabelsIdentity) {
  const auto reps = run_experiment(noiseless_spec(500), {});
  ASSERT_EQ(reps.size(), 1u);
  const auto& r = reps[0];
  EXPECT_EQ(r.accuracy_pct, 100.0);
  EXPECT_LE(r.error_percentiles_m.at(95.0), 1e-3);
  EXPECT_EQ(r.samples, 500);
  ASSERT_EQ(r.failure_pass_pct.size(), 4u);
  EXPECT_EQ(r.failure_pass_pct[0].first, "No failure");
  EXPECT_GE(r.failure_pass_pct[0].second, r.failure_pass_pct[3].second);
  EXPECT_EQ(r.flops.gd, flops_gd(4000, 8));
  EXPECT_EQ(r.flops.nn, 0);
  EXPECT_EQ(r.ecdf.back().cdf, 1.0);
  EXPECT_EQ(r.config["tx_power_dbm"], 0.0);
}

TEST(RunExperiment, Errors) {
  auto spec = noiseless_spec(0);
  EXPECT_THROW(run_experiment(spec, {}), EmptyInput);
  spec = noiseless_spec(10);
  spec.cells.clear();
  EXPECT_THROW(run_experiment(spec, {}), EmptyInput);
  spec = noiseless_spec(10);
  spec.oracle_labels = false;
  EXPECT_THROW(run_experiment(spec, {}), MissingModel);
  ModelStore store;
  store.emplace(ModelKey{-10.0, 0.0}, MlpModel(mlp_config_for(spec.deployment)));
  EXPECT_THROW(run_experiment(spec, store), MissingModel);
}

TEST(RunExperiment, ModelPathAndFlops) {
  auto spec = noiseless_spec(50);
  spec.oracle_labels = false;
  spec.failure_tests = {{0}};
  ModelStore store;
  const auto cfg = mlp_config_for(spec.deployment);
  store.emplace(ModelKey{0.0, 0.0}, MlpModel::initialized(cfg, 1));
  const auto reps = run_experiment(spec, store);
  ASSERT_EQ(reps.size(), 1u);
  EXPECT_EQ(reps[0].flops.nn, flops_nn(128, 8, ambiguity_bounds(spec.deployment).total, 9));
  EXPECT_GE(reps[0].accuracy_pct, 0.0);
  ASSERT_EQ(reps[0].failure_pass_pct.size(), 1u);
}

TEST(TestSets, CommonRandomNumbersAcrossRadioSettings) {
  const auto dep = testing::standard_deployment(5);
  RadioConfig a, b;
  a.tx_power_dbm = -20.0;
  b.tx_power_dbm = 0.0;
  const auto sa = generate_test_set(dep, a, FailurePolicy{}, 50, 9, 1);
  const auto sb = generate_test_set(dep, b, FailurePolicy{}, 50, 9, 2);
  for (std::size_t i = 0; i < sa.size(); ++i) {
    EXPECT_EQ(sa.samples[i].ground_truth.ue, sb.samples[i].ground_truth.ue);
    EXPECT_EQ(sa.samples[i].labels, sb.samples[i].labels);
  }
  const auto forced = generate_test_set(dep, b, FailurePolicy{0.0, 2}, 50, 9, 1);
  for (const auto& s : forced.samples) EXPECT_EQ(s.failure_mask.num_failed(), 2);
  EXPECT_NE(forced.samples[0].ground_truth.ue, sb.samples[0].ground_truth.ue);
  EXPECT_THROW(generate_test_set(dep, b, FailurePolicy{}, 0, 9, 1), EmptyInput);
}

// ---- report files -----------------------------------------------------------

TEST(Reports, SchemasAndMirrors) {
  auto spec = noiseless_spec(40);
  spec.cells = {{-20.0, 0.0}, {0.0, 1e-3}};
  spec.failure_tests = {{0}, {3}};
  const auto reps = run_experiment(spec, {});
  const auto dir = testing::temp_dir("reports");
  write_reports(reps, dir);

  EXPECT_EQ(testing::read_file(dir / "table1.csv").substr(0, 26), "p_f,P_T_dBm,accuracy_pct\n0");
  const auto t2 = testing::read_file(dir / "table2.csv");
  EXPECT_EQ(t2.substr(0, t2.find('\n')), "approach,p_f,P_T_dBm,p95_cm");
  EXPECT_NE(t2.find("proposed,0.001000,0.000000,"), std::string::npos);
  const auto t3 = testing::read_file(dir / "table3.csv");
  EXPECT_EQ(t3.substr(0, t3.find('\n')), "testset,p_f_train,P_T_dBm,pass_pct");
  EXPECT_EQ(std::count(t3.begin(), t3.end(), '\n'), 1 + 2 * 2);
  EXPECT_NE(t3.find("3 failures,0.000000,-20.000000,"), std::string::npos);

  const auto j1 = nlohmann::json::parse(testing::read_file(dir / "table1.json"));
  ASSERT_EQ(j1.size(), 2u);
  EXPECT_DOUBLE_EQ(j1[0]["accuracy_pct"].get<double>(), 100.0);
  EXPECT_DOUBLE_EQ(j1[1]["p_f"].get<double>(), 0.001);

  const auto e = testing::read_file(dir / ("ecdf_" + cell_tag(0.0, 1e-3) + ".csv"));
  EXPECT_EQ(e.substr(0, 12), "error_m,cdf\n");
  EXPECT_NE(e.rfind(",1\n"), std::string::npos);
  EXPECT_TRUE(std::filesystem::exists(dir / ("ecdf_" + cell_tag(-20.0, 0.0) + ".json")));

  const auto summary = nlohmann::json::parse(testing::read_file(dir / "report.json"));
  ASSERT_EQ(summary.size(), 2u);
  EXPECT_EQ(summary[0]["config"]["tx_power_dbm"], -20.0);
  EXPECT_TRUE(summary[0]["error_percentiles_m"].contains("95"));
  EXPECT_TRUE(summary[1]["failure_pass_pct"].contains("3 failures"));
  EXPECT_EQ(summary[1]["flops"]["gd"], flops_gd(4000, 8));
}

TEST(Reports, RequiresP95) {
  auto spec = noiseless_spec(10);
  spec.percentiles = {50.0};
  spec.failure_tests.clear();
  const auto reps = run_experiment(spec, {});
  EXPECT_THROW(write_reports(reps, testing::temp_dir("reports_p95")), InvalidArgument);
}

TEST(Reports, CellTag) {
  EXPECT_EQ(cell_tag(-20.0, 0.0), "pt-20dBm_pf0");
  EXPECT_EQ(cell_tag(0.0, 0.01), "pt0dBm_pf0.01");
}

}  // namespace
}  // namespace phasefix
