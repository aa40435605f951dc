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

#include "phasefix/hyperbola_solver.hpp"
#include "phasefix/oracle.hpp"
#include "phasefix/simulator.hpp"
#include "test_util.hpp"

namespace phasefix {
namespace {

using testing::kLambda;

std::vector<double> exact_dd(const Deployment& dep, const Vec2& ue) {
  std::vector<double> dd;
  for (int j : dep.j_set) dd.push_back((ue - dep.aps[j]).norm() - (ue - dep.aps[0]).norm());
  return dd;
}

TEST(GridSearch, ExactLatticePoint) {
  const auto dep = testing::standard_deployment(3);
  const oracle::GridSpec grid{0.01, dep.region};
  const Vec2 ue(grid.region.x_min + 327 * grid.resolution, grid.region.y_min + 641 * grid.resolution);
  const auto m = oracle::grid_search_position(exact_dd(dep, ue), dep, grid);
  EXPECT_EQ(m.position, ue);
  EXPECT_LE(m.cost, 1e-18);
}

TEST(GridSearch, OffLatticeWithinHalfDiagonal) {
  const auto dep = testing::standard_deployment(4);
  const oracle::GridSpec grid{0.01, dep.region};
  Rng rng(5);
  for (int t = 0; t < 3; ++t) {
    const Vec2 ue = dep.region.sample(rng);
    const auto m = oracle::grid_search_position(exact_dd(dep, ue), dep, grid);
    EXPECT_LE((m.position - ue).norm(), grid.resolution * std::sqrt(2.0) / 2.0);
  }
}

TEST(GridSearch, TiesGoToLowestRowMajorIndex) {
  // A single symmetric pair: every point on the bisector x = 5 is a zero.
  const auto dep = testing::manual_deployment({{3.0, 5.0}, {7.0, 5.0}});
  const auto m = oracle::grid_search_position({0.0}, dep, {0.5, dep.region});
  EXPECT_EQ(m.position, Vec2(5.0, 0.0));
  EXPECT_EQ(m.cost, 0.0);
}

TEST(GridSearch, Errors) {
  const auto dep = testing::standard_deployment();
  EXPECT_THROW(oracle::grid_search_position(std::vector<double>(8, 0.0), dep, {0.0, dep.region}),
               InvalidArgument);
  EXPECT_THROW(oracle::grid_search_position(std::vector<double>(8, 0.0), dep, {20.0, dep.region}),
               InvalidArgument);
}

TEST(GridSearch, SolverReachesGridOptimum) {
  SolverConfig cfg;
  cfg.restarts = 5;
  for (std::uint64_t seed = 1; seed <= 3; ++seed) {
    const auto dep = testing::standard_deployment(seed + 20);
    Rng rng(seed);
    const Sample s = generate_sample(dep, testing::noiseless_radio(), FailurePolicy{}, rng);
    const auto dd = reconstruct_diff_distances(restrict_to_j(s.delta, dep), s.labels, dep.wavelength);
    const auto grid = oracle::grid_search_position(dd, dep, {0.01, dep.region});
    const auto r = solve_diff_distances(dd, dep, cfg, seed);
    EXPECT_LE(r.final_cost, grid.cost) << "seed " << seed;
  }
}

TEST(NearestLattice, Examples) {
  const std::vector<double> dd{0.31, -2.0, 4.5};
  EXPECT_EQ(oracle::nearest_lattice_labels(dd, dd, kLambda), (std::vector<std::int64_t>{0, 0, 0}));
  std::vector<double> shifted = dd;
  for (auto& d : shifted) d -= kLambda;
  EXPECT_EQ(oracle::nearest_lattice_labels(shifted, dd, kLambda), (std::vector<std::int64_t>{1, 1, 1}));
  EXPECT_THROW(oracle::nearest_lattice_labels({0.1}, dd, kLambda), DimensionMismatch);
}

TEST(NearestLattice, AgreesWithGroundTruthLabels) {
  const auto dep = testing::standard_deployment(8);
  const auto radio = testing::noiseless_radio();
  for (int i = 0; i < 10000; ++i) {
    Rng rng(derive_seed(8, Stream::kTest, i));
    const Sample s = generate_sample(dep, radio, FailurePolicy{}, rng);
    std::vector<double> true_dd;
    for (int j : dep.j_set) true_dd.push_back(s.ground_truth.diff_distances[j - 1]);
    ASSERT_EQ(oracle::nearest_lattice_labels(restrict_to_j(s.delta, dep), true_dd, kLambda), s.labels)
        << "sample " << i;
  }
}

TEST(FiniteDiff, Examples) {
  const auto sq = [](const Vec2& x) { return x.squaredNorm(); };
  const Vec2 g = oracle::finite_diff(sq, Vec2(1.0, 2.0), 1e-6);
  EXPECT_NEAR(g.x(), 2.0, 1e-6);
  EXPECT_NEAR(g.y(), 4.0, 1e-6);
  EXPECT_EQ(oracle::finite_diff([](const Vec2&) { return 3.5; }, Vec2(1.0, 2.0), 1e-6), Vec2::Zero());
  EXPECT_THROW(oracle::finite_diff(sq, Vec2::Zero(), 0.0), InvalidArgument);
}

TEST(ResidualSum, MatchesClosedForm) {
  const auto dep = testing::manual_deployment({{0.0, 0.0}, {3.0, 0.0}, {0.0, 4.0}});
  // d0 = 5, d1 = 4, d2 = 3 from (3, 4).
  EXPECT_DOUBLE_EQ(oracle::residual_sum(Vec2(3.0, 4.0), dep, {-1.0, -2.0}), 0.0);
  EXPECT_DOUBLE_EQ(oracle::residual_sum(Vec2(3.0, 4.0), dep, {0.0, 0.0}), 1.0 + 4.0);
}

}  // namespace
}  // namespace phasefix
