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
 * @file geometry.hpp
 * @brief AP network geometry, phase wrapping and integer-ambiguity labels.
 *
 * Index convention: after deployment the reference AP is always index 0 and
 * the non-reference APs are 1..I-1. Differential quantities indexed by m
 * live at position m-1 of their vectors.
 */
#pragma once

#include <cstdint>
#include <numeric>
#include <set>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "phasefix/core.hpp"

namespace phasefix {

// ----------------------------------------------------------------------------
// Types
// ----------------------------------------------------------------------------

struct Region {
  double x_min = 0.0;
  double x_max = 10.0;
  double y_min = 0.0;
  double y_max = 10.0;

  double width() const { return x_max - x_min; }
  double height() const { return y_max - y_min; }

  bool contains(const Vec2& p) const {
    return p.x() >= x_min && p.x() <= x_max && p.y() >= y_min && p.y() <= y_max;
  }

  Vec2 sample(Rng& rng) const {
    const double x = uniform(rng, x_min, x_max);
    const double y = uniform(rng, y_min, y_max);
    return {x, y};
  }

  void validate() const {
    if (!(x_max > x_min) || !(y_max > y_min))
      throw InvalidArgument("region: require x_max > x_min and y_max > y_min");
  }

  bool operator==(const Region&) const = default;
};

struct Deployment {
  std::vector<Vec2> aps;
  /// Always 0 for deployments built here; kept explicit for the file format.
  int reference_index = 0;
  Region region;
  double wavelength = kSpeedOfLight / 2.3e9;
  /// Non-reference AP indices whose differential ambiguities are estimated.
  std::vector<int> j_set;

  int num_aps() const { return static_cast<int>(aps.size()); }
  int num_diffs() const { return num_aps() - 1; }
  int num_branches() const { return static_cast<int>(j_set.size()); }

  const Vec2& reference() const { return aps[reference_index]; }

  void validate() const {
    region.validate();
    if (aps.size() < 2) throw InvalidArgument("deployment: need at least 2 APs");
    if (!(wavelength > 0.0)) throw InvalidArgument("deployment: wavelength must be > 0");
    if (reference_index != 0)
      throw InvalidArgument("deployment: reference AP must sit at index 0");
    for (const auto& p : aps)
      if (!region.contains(p)) throw InvalidArgument("deployment: AP outside region");
    std::set<int> seen;
    for (int j : j_set) {
      if (j < 1 || j >= num_aps()) throw InvalidArgument("deployment: j_set index out of range");
      if (!seen.insert(j).second) throw InvalidArgument("deployment: duplicate j_set index");
    }
    if (j_set.empty()) throw InvalidArgument("deployment: j_set must not be empty");
  }

  bool operator==(const Deployment& o) const {
    return aps == o.aps && reference_index == o.reference_index &&
           region == o.region && wavelength == o.wavelength && j_set == o.j_set;
  }
};

struct AmbiguityBounds {
  std::vector<int> q;        // per branch
  std::vector<int> classes;  // Q_jk = 2 q_jk + 2
  int total = 0;             // Q

  int lower(std::size_t k) const { return -q[k] - 1; }
  int upper(std::size_t k) const { return q[k]; }
  bool contains(std::size_t k, long label) const {
    return label >= lower(k) && label <= upper(k);
  }
  /// Class index of integer label l in branch k.
  int class_index(std::size_t k, long label) const {
    return static_cast<int>(label + q[k] + 1);
  }
  int label_of(std::size_t k, int class_idx) const { return class_idx - q[k] - 1; }
};

struct GroundTruth {
  Vec2 ue = Vec2::Zero();
  double phi_ue = 0.0;
  std::vector<double> distances;         // d_i, length I
  std::vector<double> wrapped_phases;    // noiseless phase in [-pi, pi), length I
  std::vector<std::int64_t> cycles;      // z_i, length I
  std::vector<double> diff_distances;    // d_m - d_0, length I-1
  std::vector<std::int64_t> diff_ambiguities;  // length I-1, indexed by m-1

  /// Labels restricted to j_set, in j_set order.
  std::vector<std::int64_t> labels(const Deployment& dep) const {
    std::vector<std::int64_t> out;
    out.reserve(dep.j_set.size());
    for (int j : dep.j_set) out.push_back(diff_ambiguities[j - 1]);
    return out;
  }
};

// ----------------------------------------------------------------------------
// Phase wrapping
// ----------------------------------------------------------------------------

struct WrappedPhase {
  double value;
  std::int64_t k;  // value == psi + 2 pi k

  bool operator==(const WrappedPhase&) const = default;
};

/// Wraps psi into [-pi, pi).
inline WrappedPhase wrap_phase(double psi) {
  if (!std::isfinite(psi)) throw InvalidArgument("wrap_phase: non-finite input");
  auto k = static_cast<std::int64_t>(-std::floor((psi + kPi) / kTwoPi));
  double v = psi + kTwoPi * static_cast<double>(k);
  // floor can land one cycle off when psi + pi rounds across a multiple of 2 pi
  if (v >= kPi) {
    v -= kTwoPi;
    --k;
  } else if (v < -kPi) {
    v += kTwoPi;
    ++k;
  }
  return {v, k};
}

struct ReducedLength {
  double value;         // in [0, wavelength)
  std::int64_t cycles;  // value == raw - wavelength * cycles
};

/// Reduces a differential path length modulo one wavelength into [0, lambda).
inline ReducedLength reduce_to_wavelength(double raw, double wavelength) {
  auto c = static_cast<std::int64_t>(std::floor(raw / wavelength));
  double v = raw - wavelength * static_cast<double>(c);
  if (v >= wavelength) {
    v -= wavelength;
    ++c;
  } else if (v < 0.0) {
    v += wavelength;
    --c;
  }
  return {v, c};
}

/// Unwrapped carrier phase of the LOS path at distance d.
inline double propagation_phase(double d, double wavelength, double phi_ue) {
  return -(kTwoPi / wavelength) * d + phi_ue;
}

// ----------------------------------------------------------------------------
// Operations
// ----------------------------------------------------------------------------

/// Rejection-samples I APs with pairwise spacing >= min_separation. The
/// reference AP and the order of the others come from the same seeded draw.
inline Deployment deploy_aps(const Region& region, int num_aps, double min_separation,
                             std::uint64_t seed, double wavelength = kSpeedOfLight / 2.3e9) {
  region.validate();
  if (num_aps < 2) throw InvalidArgument("deploy_aps: I must be >= 2");
  if (!(min_separation >= 0.0)) throw InvalidArgument("deploy_aps: min_separation must be >= 0");
  if (!(wavelength > 0.0)) throw InvalidArgument("deploy_aps: wavelength must be > 0");

  constexpr int kAttemptBudget = 100'000;
  // Greedy placement can paint itself into a corner; start over after this
  // many consecutive rejections of one candidate.
  constexpr int kRestartAfter = 2'000;

  Rng rng(seed);
  std::vector<Vec2> pts;
  int attempts = 0;
  int consecutive = 0;
  while (static_cast<int>(pts.size()) < num_aps) {
    if (attempts++ >= kAttemptBudget)
      throw InfeasibleDeployment("deploy_aps: could not place " + std::to_string(num_aps) +
                                 " APs with separation " + std::to_string(min_separation) +
                                 " m within the attempt budget");
    const Vec2 cand = region.sample(rng);
    bool ok = true;
    for (const auto& p : pts) {
      if ((p - cand).norm() < min_separation) {
        ok = false;
        break;
      }
    }
    if (ok) {
      pts.push_back(cand);
      consecutive = 0;
    } else if (++consecutive >= kRestartAfter) {
      pts.clear();
      consecutive = 0;
    }
  }

  const auto ref = std::uniform_int_distribution<int>(0, num_aps - 1)(rng);
  std::vector<int> others;
  for (int i = 0; i < num_aps; ++i)
    if (i != ref) others.push_back(i);
  std::shuffle(others.begin(), others.end(), rng);

  Deployment dep;
  dep.region = region;
  dep.wavelength = wavelength;
  dep.reference_index = 0;
  dep.aps.push_back(pts[ref]);
  for (int i : others) dep.aps.push_back(pts[i]);
  dep.j_set.resize(num_aps - 1);
  std::iota(dep.j_set.begin(), dep.j_set.end(), 1);
  return dep;
}

inline AmbiguityBounds ambiguity_bounds(const Deployment& dep) {
  AmbiguityBounds b;
  for (int j : dep.j_set) {
    const double sep = (dep.aps[j] - dep.reference()).norm();
    const int q = static_cast<int>(std::floor(sep / dep.wavelength));
    b.q.push_back(q);
    b.classes.push_back(2 * q + 2);
    b.total += 2 * q + 2;
  }
  return b;
}

/**
 * Noiseless geometry for one UE.
 *
 * z_i is the wrapping integer of the propagation phase. The differential
 * label of AP m is the integer that reconciles the wavelength-reduced phase
 * difference with the true path difference,
 *
 *   reduce(-(lambda / 2 pi)(w_m - w_0)) + lambda * dz_m == d_m - d_0,
 *
 * which equals floor((d_m - d_0) / lambda) and therefore lies in
 * [-q_m - 1, q_m].
 */
inline GroundTruth ground_truth(const Deployment& dep, const Vec2& ue, double phi_ue) {
  if (!dep.region.contains(ue)) throw InvalidArgument("ground_truth: UE outside region");
  GroundTruth gt;
  gt.ue = ue;
  gt.phi_ue = phi_ue;
  const int n = dep.num_aps();
  gt.distances.resize(n);
  gt.wrapped_phases.resize(n);
  gt.cycles.resize(n);
  for (int i = 0; i < n; ++i) {
    const double d = (ue - dep.aps[i]).norm();
    if (d <= kPositionEpsilon)
      throw DegeneratePosition("ground_truth: UE within 1e-6 m of AP " + std::to_string(i));
    gt.distances[i] = d;
    const auto w = wrap_phase(propagation_phase(d, dep.wavelength, phi_ue));
    gt.wrapped_phases[i] = w.value;
    gt.cycles[i] = w.k;
  }
  const double scale = dep.wavelength / kTwoPi;
  gt.diff_distances.resize(n - 1);
  gt.diff_ambiguities.resize(n - 1);
  for (int m = 1; m < n; ++m) {
    gt.diff_distances[m - 1] = gt.distances[m] - gt.distances[0];
    const double raw = -scale * (gt.wrapped_phases[m] - gt.wrapped_phases[0]);
    const auto red = reduce_to_wavelength(raw, dep.wavelength);
    gt.diff_ambiguities[m - 1] = gt.cycles[m] - gt.cycles[0] + red.cycles;
  }
  return gt;
}

// ----------------------------------------------------------------------------
// Serialization
// ----------------------------------------------------------------------------

inline nlohmann::json region_to_json(const Region& r) {
  return {{"x_min", r.x_min}, {"x_max", r.x_max}, {"y_min", r.y_min}, {"y_max", r.y_max}};
}

inline Region region_from_json(const nlohmann::json& j) {
  Region r{j.at("x_min").get<double>(), j.at("x_max").get<double>(),
           j.at("y_min").get<double>(), j.at("y_max").get<double>()};
  r.validate();
  return r;
}

inline nlohmann::json deployment_to_json(const Deployment& dep) {
  nlohmann::json aps = nlohmann::json::array();
  for (const auto& p : dep.aps) aps.push_back({p.x(), p.y()});
  return {{"wavelength_m", dep.wavelength},
          {"region", region_to_json(dep.region)},
          {"reference_index", dep.reference_index},
          {"j_set", dep.j_set},
          {"aps", aps}};
}

inline Deployment deployment_from_json(const nlohmann::json& j) {
  try {
    Deployment dep;
    dep.wavelength = j.at("wavelength_m").get<double>();
    dep.region = region_from_json(j.at("region"));
    dep.reference_index = j.at("reference_index").get<int>();
    dep.j_set = j.at("j_set").get<std::vector<int>>();
    for (const auto& p : j.at("aps")) {
      if (!p.is_array() || p.size() != 2) throw SchemaError("deployment: aps entries must be [x, y]");
      dep.aps.emplace_back(p[0].get<double>(), p[1].get<double>());
    }
    dep.validate();
    return dep;
  } catch (const nlohmann::json::exception& e) {
    throw SchemaError(std::string("deployment: ") + e.what());
  } catch (const InvalidArgument& e) {
    throw SchemaError(e.what());
  }
}

}  // namespace phasefix
