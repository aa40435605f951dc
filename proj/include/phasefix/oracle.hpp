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
 * @file oracle.hpp
 * @brief Brute-force references for tests. Nothing in the pipeline uses these.
 *
 * The grid oracle evaluates the residual sum itself rather than calling the
 * solver's cost function, and the lattice labels come from rounding instead
 * of phase wrapping, so they can catch errors in either path.
 */
#pragma once

#include <cstdint>
#include <functional>
#include <limits>
#include <vector>

#include "phasefix/core.hpp"
#include "phasefix/geometry.hpp"

namespace phasefix::oracle {

struct GridSpec {
  double resolution = 0.01;  // [m]
  Region region;
};

struct GridMinimum {
  Vec2 position = Vec2::Zero();
  double cost = std::numeric_limits<double>::infinity();
};

/// Residual sum of squares at x, recomputed independently of the solver.
inline double residual_sum(const Vec2& x, const Deployment& dep, const std::vector<double>& dd) {
  const double rx = x.x() - dep.aps[0].x();
  const double ry = x.y() - dep.aps[0].y();
  const double d0 = std::hypot(rx, ry);
  long double sum = 0.0L;
  for (std::size_t k = 0; k < dd.size(); ++k) {
    const auto& ap = dep.aps[dep.j_set[k]];
    const double dk = std::hypot(x.x() - ap.x(), x.y() - ap.y());
    const long double e = static_cast<long double>(dk) - d0 - dd[k];
    sum += e * e;
  }
  return static_cast<double>(sum);
}

/// Exhaustive lattice search; ties resolve to the lowest row-major index
/// (rows along y, columns along x).
inline GridMinimum grid_search_position(const std::vector<double>& dd, const Deployment& dep,
                                        const GridSpec& grid) {
  if (!(grid.resolution > 0.0)) throw InvalidArgument("grid_search_position: resolution must be > 0");
  const auto nx = static_cast<long>(std::floor(grid.region.width() / grid.resolution + 1e-9)) + 1;
  const auto ny = static_cast<long>(std::floor(grid.region.height() / grid.resolution + 1e-9)) + 1;
  if (nx * ny < 4) throw InvalidArgument("grid_search_position: grid has fewer than 4 points");
  GridMinimum best;
  for (long iy = 0; iy < ny; ++iy) {
    const double y = grid.region.y_min + static_cast<double>(iy) * grid.resolution;
    for (long ix = 0; ix < nx; ++ix) {
      const double x = grid.region.x_min + static_cast<double>(ix) * grid.resolution;
      const double c = residual_sum(Vec2(x, y), dep, dd);
      if (c < best.cost) {
        best.cost = c;
        best.position = Vec2(x, y);
      }
    }
  }
  return best;
}

/// dz_k = round((dd_true_k - delta_k) / lambda).
inline std::vector<std::int64_t> nearest_lattice_labels(const std::vector<double>& delta,
                                                        const std::vector<double>& true_dd,
                                                        double wavelength) {
  if (delta.size() != true_dd.size())
    throw DimensionMismatch("nearest_lattice_labels: length mismatch");
  std::vector<std::int64_t> out(delta.size());
  for (std::size_t k = 0; k < delta.size(); ++k)
    out[k] = std::llround((true_dd[k] - delta[k]) / wavelength);
  return out;
}

/// Central differences of a scalar field.
inline Vec2 finite_diff(const std::function<double(const Vec2&)>& fn, const Vec2& x, double h) {
  if (!(h > 0.0)) throw InvalidArgument("finite_diff: h must be > 0");
  const Vec2 ex(h, 0.0);
  const Vec2 ey(0.0, h);
  return {(fn(x + ex) - fn(x - ex)) / (2.0 * h), (fn(x + ey) - fn(x - ey)) / (2.0 * h)};
}

}  // namespace phasefix::oracle
