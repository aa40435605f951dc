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
#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <functional>
#include <numbers>
#include <random>
#include <stdexcept>
#include <string>
#include <thread>
#include <vector>

#include <Eigen/Core>

namespace phasefix {

using Vec2 = Eigen::Vector2d;

inline constexpr double kPi = std::numbers::pi;
inline constexpr double kTwoPi = 2.0 * std::numbers::pi;
inline constexpr double kSpeedOfLight = 299'792'458.0;

/// UE-on-AP degeneracy guard [m].
inline constexpr double kPositionEpsilon = 1e-6;

// ----------------------------------------------------------------------------
// Errors
// ----------------------------------------------------------------------------

class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

#define PHASEFIX_DEFINE_ERROR(Name)     \
  class Name : public Error {           \
   public:                              \
    using Error::Error;                 \
  }

PHASEFIX_DEFINE_ERROR(InvalidArgument);
PHASEFIX_DEFINE_ERROR(InfeasibleDeployment);
PHASEFIX_DEFINE_ERROR(DegeneratePosition);
PHASEFIX_DEFINE_ERROR(DegenerateDistance);
PHASEFIX_DEFINE_ERROR(InvalidCount);
PHASEFIX_DEFINE_ERROR(DimensionMismatch);
PHASEFIX_DEFINE_ERROR(LabelOutOfRange);
PHASEFIX_DEFINE_ERROR(ConfigMismatch);
PHASEFIX_DEFINE_ERROR(SchemaError);
PHASEFIX_DEFINE_ERROR(VersionMismatch);
PHASEFIX_DEFINE_ERROR(SingularPoint);
PHASEFIX_DEFINE_ERROR(LengthMismatch);
PHASEFIX_DEFINE_ERROR(EmptyInput);
PHASEFIX_DEFINE_ERROR(MissingModel);
PHASEFIX_DEFINE_ERROR(IoError);

#undef PHASEFIX_DEFINE_ERROR

// ----------------------------------------------------------------------------
// Random streams
// ----------------------------------------------------------------------------

using Rng = std::mt19937_64;

inline std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

/// Seed for item `index` of logical stream `stream` under `root`. Depends only
/// on the triple, so results never depend on how work is scheduled.
inline std::uint64_t derive_seed(std::uint64_t root, std::uint64_t stream,
                                 std::uint64_t index) {
  return splitmix64(splitmix64(root ^ splitmix64(stream)) + index);
}

/// Stream tags; keep them distinct so that train/val/test never share draws.
enum class Stream : std::uint64_t {
  kDeployment = 1,
  kTrain = 2,
  kValidation = 3,
  kTest = 4,
  kFailureTest = 5,
  kInit = 6,
  kShuffle = 7,
  kDropout = 8,
  kSolver = 9,
};

inline std::uint64_t derive_seed(std::uint64_t root, Stream stream,
                                 std::uint64_t index) {
  return derive_seed(root, static_cast<std::uint64_t>(stream), index);
}

inline double uniform(Rng& rng, double lo, double hi) {
  return std::uniform_real_distribution<double>(lo, hi)(rng);
}

// ----------------------------------------------------------------------------
// Parallel helpers
// ----------------------------------------------------------------------------

inline unsigned default_threads() {
  const unsigned n = std::thread::hardware_concurrency();
  return n == 0 ? 1u : n;
}

/// Runs fn(i) for i in [0, n) over `threads` workers with contiguous chunks.
/// fn must only write to slots owned by index i.
inline void parallel_for(std::size_t n, unsigned threads,
                         const std::function<void(std::size_t)>& fn) {
  threads = std::max(1u, std::min<unsigned>(threads, static_cast<unsigned>(n)));
  if (threads <= 1 || n < 2) {
    for (std::size_t i = 0; i < n; ++i) fn(i);
    return;
  }
  std::vector<std::thread> pool;
  std::vector<std::exception_ptr> errors(threads);
  const std::size_t chunk = (n + threads - 1) / threads;
  for (unsigned t = 0; t < threads; ++t) {
    const std::size_t begin = t * chunk;
    const std::size_t end = std::min(n, begin + chunk);
    if (begin >= end) break;
    pool.emplace_back([&, t, begin, end] {
      try {
        for (std::size_t i = begin; i < end; ++i) fn(i);
      } catch (...) {
        errors[t] = std::current_exception();
      }
    });
  }
  for (auto& th : pool) th.join();
  for (auto& e : errors)
    if (e) std::rethrow_exception(e);
}

// ----------------------------------------------------------------------------
// Text formatting
// ----------------------------------------------------------------------------

/// Shortest-safe text for a double: 17 significant digits round-trips exactly.
inline std::string format_double(double v) {
  char buf[40];
  std::snprintf(buf, sizeof(buf), "%.17g", v);
  return buf;
}

}  // namespace phasefix
