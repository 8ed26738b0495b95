#pragma once

#include <algorithm>
#include <cmath>
#include <limits>
#include <optional>
#include <utility>

#include "tactoform/voxel.hpp"

namespace tactoform {

/// Parametric interval where origin + t * dir lies inside the grid box
/// [-0.5, dim - 0.5]^3 (voxel coordinates), clipped to t >= 0.
inline std::optional<std::pair<double, double>> clip_to_grid(const Dims& dims, const Vec3& origin,
                                                             const Vec3& dir) {
  double t0 = 0.0, t1 = std::numeric_limits<double>::infinity();
  for (int a = 0; a < 3; ++a) {
    const double lo = -0.5, hi = dims[a] - 0.5;
    if (std::fabs(dir[a]) < 1e-15) {
      if (origin[a] < lo || origin[a] > hi) return std::nullopt;
      continue;
    }
    double ta = (lo - origin[a]) / dir[a], tb = (hi - origin[a]) / dir[a];
    if (ta > tb) std::swap(ta, tb);
    t0 = std::max(t0, ta);
    t1 = std::min(t1, tb);
  }
  if (t0 >= t1) return std::nullopt;
  return std::make_pair(t0, t1);
}

/// 6-connected traversal (Amanatides-Woo) of the cells pierced by
/// origin + t * dir for t in [0, t_max], in order. `visit(cell, t_enter,
/// t_exit)` returns false to stop early. Returns the number of cells visited.
template <typename Visit>
int traverse_cells(const Dims& dims, const Vec3& origin, const Vec3& dir, double t_max, Visit&& visit) {
  const auto span = clip_to_grid(dims, origin, dir);
  if (!span) return 0;
  double t = span->first;
  const double t_end = std::min(span->second, t_max);
  if (t >= t_end) return 0;

  const Vec3 start = origin + t * dir;
  Cell cell;
  int step[3];
  double t_next[3], t_delta[3];
  for (int a = 0; a < 3; ++a) {
    // Nudge along the ray so a start exactly on a face lands in the cell
    // being entered.
    const double p = start[a] + 1e-9 * dir[a];
    cell[a] = std::clamp(static_cast<int>(std::floor(p + 0.5)), 0, dims[a] - 1);
    if (dir[a] > 0.0) {
      step[a] = 1;
      t_next[a] = t + (cell[a] + 0.5 - start[a]) / dir[a];
      t_delta[a] = 1.0 / dir[a];
    } else if (dir[a] < 0.0) {
      step[a] = -1;
      t_next[a] = t + (cell[a] - 0.5 - start[a]) / dir[a];
      t_delta[a] = -1.0 / dir[a];
    } else {
      step[a] = 0;
      t_next[a] = t_delta[a] = std::numeric_limits<double>::infinity();
    }
  }

  int visited = 0;
  while (t < t_end) {
    int axis = 0;
    if (t_next[1] < t_next[axis]) axis = 1;
    if (t_next[2] < t_next[axis]) axis = 2;
    const double t_exit = std::min(t_next[axis], t_end);
    ++visited;
    if (!visit(static_cast<const Cell&>(cell), t, t_exit)) break;
    t = t_next[axis];
    cell[axis] += step[axis];
    if (cell[axis] < 0 || cell[axis] >= dims[axis]) break;
    t_next[axis] += t_delta[axis];
  }
  return visited;
}

}  // namespace tactoform
