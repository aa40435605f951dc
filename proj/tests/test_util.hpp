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

#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>

#include "phasefix/geometry.hpp"
#include "phasefix/simulator.hpp"

namespace phasefix::testing {

inline constexpr double kLambda = kSpeedOfLight / 2.3e9;

/// 9-AP deployment on the default 10 x 10 m region.
inline Deployment standard_deployment(std::uint64_t seed = 7) {
  return deploy_aps(Region{}, 9, 2.0, seed, kLambda);
}

/// Deployment with hand-placed APs; the reference is aps[0].
inline Deployment manual_deployment(std::vector<Vec2> aps, Region region = {}) {
  Deployment dep;
  dep.aps = std::move(aps);
  dep.region = region;
  dep.wavelength = kLambda;
  for (int j = 1; j < static_cast<int>(dep.aps.size()); ++j) dep.j_set.push_back(j);
  dep.validate();
  return dep;
}

inline RadioConfig noiseless_radio() {
  RadioConfig r;
  r.noise_scale = 0.0;
  return r;
}

/// Fresh empty directory under the system temp dir.
inline std::filesystem::path temp_dir(const std::string& name) {
  const auto dir = std::filesystem::temp_directory_path() / ("phasefix_test_" + name);
  std::filesystem::remove_all(dir);
  std::filesystem::create_directories(dir);
  return dir;
}

inline std::string read_file(const std::filesystem::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

inline void write_file(const std::filesystem::path& p, const std::string& s) {
  std::ofstream out(p, std::ios::binary);
  out << s;
}

inline double rel_error(double a, double b) {
  return std::abs(a - b) / std::max({std::abs(a), std::abs(b), 1e-300});
}

}  // namespace phasefix::testing
