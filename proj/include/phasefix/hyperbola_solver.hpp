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

/**
 * @file hyperbola_solver.hpp
 * @brief Gradient-descent hyperbola intersection with a cost-threshold
 *        failure flag.
 *
 * Given differential distances dd_k to the reference AP for each k in J, the
 * solver minimises
 *
 *   E(x) = sum_k (||x - ap_jk|| - ||x - ap_0|| - dd_k)^2
 *
 * with a fixed number of plain gradient steps. A final cost above the
 * threshold is reported as a potential AP failure; it can equally mean that
 * the ambiguity estimate was wrong. The position estimate is returned either
 * way.
 */
#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "phasefix/core.hpp"
#include "phasefix/geometry.hpp"

namespace phasefix {

enum class FailureFlag { kNoApFailure, kPotentialApFailure };

inline std::string to_string(FailureFlag f) {
  return f == FailureFlag::kNoApFailure ? "NoApFailure" : "PotentialApFailure";
}

struct SolverConfig {
  int iterations = 500;        // T
  double learning_rate = 0.08; // alpha
  double threshold = 1e-4;     // tau [m^2]
  int restarts = 1;
  double singularity_guard = 1e-9;  // [m]
  bool keep_trace = false;

  void validate() const {
    if (iterations < 1) throw InvalidArgument("solver: iterations must be >= 1");
    if (!(learning_rate > 0.0)) throw InvalidArgument("solver: learning_rate must be > 0");
    if (!(threshold > 0.0)) throw InvalidArgument("solver: threshold must be > 0");
    if (restarts < 1) throw InvalidArgument("solver: restarts must be >= 1");
    if (!(singularity_guard > 0.0)) throw InvalidArgument("solver: singularity_guard must be > 0");
  }
};

struct SolverResult {
  Vec2 position = Vec2::Zero();
  double final_cost = 0.0;
  FailureFlag flag = FailureFlag::kNoApFailure;
  int iterations = 0;
  int restarts_used = 0;
  std::vector<double> trace;  // cost before each update, when requested
};

inline FailureFlag threshold_test(double final_cost, double threshold) {
  return final_cost <= threshold ? FailureFlag::kNoApFailure : FailureFlag::kPotentialApFailure;
}

/// dd_k = delta_jk + lambda * dz_k.
inline std::vector<double> reconstruct_diff_distances(const std::vector<double>& delta_j,
                                                      const std::vector<std::int64_t>& dz,
                                                      double wavelength) {
  if (delta_j.size() != dz.size())
    throw DimensionMismatch("reconstruct_diff_distances: delta and ambiguity lengths differ");
  std::vector<double> out(delta_j.size());
  for (std::size_t k = 0; k < dz.size(); ++k)
    out[k] = delta_j[k] + wavelength * static_cast<double>(dz[k]);
  return out;
}

/// Full-length delta (indexed by m - 1) restricted to J, in J order.
inline std::vector<double> restrict_to_j(const std::vector<double>& delta, const Deployment& dep) {
  if (static_cast<int>(delta.size()) != dep.num_diffs())
    throw DimensionMismatch("restrict_to_j: delta must have length I - 1");
  std::vector<double> out;
  out.reserve(dep.j_set.size());
  for (int j : dep.j_set) out.push_back(delta[j - 1]);
  return out;
}

namespace detail {

inline void check_guard(const Vec2& x, const Deployment& dep, double guard) {
  if ((x - dep.reference()).norm() <= guard)
    throw SingularPoint("hyperbola cost: point coincides with the reference AP");
  for (int j : dep.j_set)
    if ((x - dep.aps[j]).norm() <= guard)
      throw SingularPoint("hyperbola cost: point coincides with AP " + std::to_string(j));
}

inline void check_sizes(const Deployment& dep, const std::vector<double>& dd) {
  if (dd.size() != dep.j_set.size())
    throw DimensionMismatch("hyperbola cost: need one differential distance per j_set entry");
}

}  // namespace detail

inline double hyperbola_cost(const Vec2& x, const Deployment& dep, const std::vector<double>& dd,
                             double guard = 1e-9) {
  detail::check_sizes(dep, dd);
  detail::check_guard(x, dep, guard);
  const double d0 = (x - dep.reference()).norm();
  double e = 0.0;
  for (std::size_t k = 0; k < dd.size(); ++k) {
    const double r = (x - dep.aps[dep.j_set[k]]).norm() - d0 - dd[k];
    e += r * r;
  }
  return e;
}

/// grad E = 2 sum_k e_k ((x - ap_jk) / d_jk - (x - ap_0) / d_0).
inline Vec2 hyperbola_gradient(const Vec2& x, const Deployment& dep, const std::vector<double>& dd,
                               double guard = 1e-9) {
  detail::check_sizes(dep, dd);
  detail::check_guard(x, dep, guard);
  const Vec2 u0 = x - dep.reference();
  const double d0 = u0.norm();
  const Vec2 dir0 = u0 / d0;
  Vec2 g = Vec2::Zero();
  for (std::size_t k = 0; k < dd.size(); ++k) {
    const Vec2 uk = x - dep.aps[dep.j_set[k]];
    const double dk = uk.norm();
    const double e = dk - d0 - dd[k];
    g += e * (uk / dk - dir0);
  }
  return 2.0 * g;
}

/// Plain GD from `init` for config.iterations steps; no early stopping, no
/// clamping to the region. Iterates inside the singularity guard are nudged
/// by a random 1e-6 m step.
inline SolverResult descend(const Vec2& init, const Deployment& dep, const std::vector<double>& dd,
                            const SolverConfig& config, Rng& rng) {
  SolverResult res;
  Vec2 x = init;
  auto nudge_if_singular = [&] {
    for (int guard_tries = 0; guard_tries < 64; ++guard_tries) {
      bool singular = (x - dep.reference()).norm() <= config.singularity_guard;
      for (int j : dep.j_set) singular = singular || (x - dep.aps[j]).norm() <= config.singularity_guard;
      if (!singular) return;
      const double a = uniform(rng, 0.0, kTwoPi);
      x += 1e-6 * Vec2(std::cos(a), std::sin(a));
    }
  };
  if (config.keep_trace) res.trace.reserve(config.iterations);
  for (int t = 0; t < config.iterations; ++t) {
    nudge_if_singular();
    if (config.keep_trace) res.trace.push_back(hyperbola_cost(x, dep, dd, config.singularity_guard));
    x -= config.learning_rate * hyperbola_gradient(x, dep, dd, config.singularity_guard);
    if (!x.allFinite()) {
      // Only reachable for absurd inputs; restart from the initial point's
      // neighbourhood so the caller still gets a finite estimate.
      x = init + 1e-6 * Vec2(uniform(rng, -1.0, 1.0), uniform(rng, -1.0, 1.0));
    }
  }
  nudge_if_singular();
  res.position = x;
  res.final_cost = hyperbola_cost(x, dep, dd, config.singularity_guard);
  if (!std::isfinite(res.final_cost)) res.final_cost = std::numeric_limits<double>::max();
  res.iterations = config.iterations;
  res.flag = threshold_test(res.final_cost, config.threshold);
  return res;
}

/// Best-of-restarts GD from uniform in-region starts, on explicit dd.
inline SolverResult solve_diff_distances(const std::vector<double>& dd, const Deployment& dep,
                                         const SolverConfig& config, std::uint64_t seed) {
  config.validate();
  detail::check_sizes(dep, dd);
  Rng rng(seed);
  std::optional<SolverResult> best;
  for (int r = 0; r < config.restarts; ++r) {
    const Vec2 init = dep.region.sample(rng);
    auto res = descend(init, dep, dd, config, rng);
    if (!best || res.final_cost < best->final_cost) best = std::move(res);
  }
  best->restarts_used = config.restarts;
  return *best;
}

/// Reconstructs dd from delta (length I - 1) and the ambiguity estimate for
/// J, then runs the solver.
inline SolverResult solve(const std::vector<double>& delta, const std::vector<std::int64_t>& dz,
                          const Deployment& dep, const SolverConfig& config, std::uint64_t seed) {
  const auto dd = reconstruct_diff_distances(restrict_to_j(delta, dep), dz, dep.wavelength);
  return solve_diff_distances(dd, dep, config, seed);
}

inline nlohmann::json solver_result_to_json(const SolverResult& r) {
  return {{"x_hat", {r.position.x(), r.position.y()}},
          {"final_cost", r.final_cost},
          {"flag", to_string(r.flag)},
          {"iterations", r.iterations},
          {"restarts_used", r.restarts_used}};
}

}  // namespace phasefix
