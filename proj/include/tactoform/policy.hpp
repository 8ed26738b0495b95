#pragma once

#include <algorithm>
#include <cmath>
#include <numbers>
#include <random>
#include <span>
#include <vector>

#include "tactoform/raycast.hpp"
#include "tactoform/tactile.hpp"
#include "tactoform/voxel.hpp"

namespace tactoform {

inline constexpr double kMaskedConfidence = 0.5;
inline constexpr int kOffsetStride = 4;

inline const std::array<double, 4>& policy_yaws() {
  static const std::array<double, 4> yaws{0.0, 90.0, 180.0, 270.0};
  return yaws;
}

inline const std::array<double, 10>& policy_pitches() {
  static const std::array<double, 10> pitches{0.0, 10.0, 20.0, 30.0, 40.0, 50.0, 60.0, 70.0, 80.0, 90.0};
  return pitches;
}

/// Approach direction for a yaw/pitch pair, in voxel coordinates. Pitch 0
/// is horizontal, pitch 90 points straight down.
inline Vec3 approach_normal(double yaw_deg, double pitch_deg) {
  const double y = yaw_deg * std::numbers::pi / 180.0, p = pitch_deg * std::numbers::pi / 180.0;
  return {std::cos(p) * std::cos(y), std::cos(p) * std::sin(y), -std::sin(p)};
}

/// In-plane axes (e1 horizontal) completing a right-handed frame with n.
inline std::pair<Vec3, Vec3> plane_axes(double yaw_deg, const Vec3& n) {
  const double y = yaw_deg * std::numbers::pi / 180.0;
  const Vec3 e1(-std::sin(y), std::cos(y), 0.0);
  return {e1, n.cross(e1)};
}

/// Cells with an in-grid 6-neighbor on the other side of 0.5 (or at it).
inline std::vector<char> surface_band(const VoxelGrid& grid) {
  const Dims& d = grid.dims();
  std::vector<char> band(grid.size(), 0);
  for (int x = 0; x < d[0]; ++x)
    for (int y = 0; y < d[1]; ++y)
      for (int z = 0; z < d[2]; ++z) {
        const double va = grid[grid.index(x, y, z)] - 0.5;
        for (const Cell& o : kSixNeighbors) {
          const Cell nb{x + o[0], y + o[1], z + o[2]};
          if (!grid.contains(nb)) continue;
          if (va * (grid.at(nb) - 0.5) <= 0.0) {
            band[grid.index(x, y, z)] = 1;
            break;
          }
        }
      }
  return band;
}

struct SearchGrid {
  double yaw = 0.0, pitch = 0.0;
  double offset = 0.0;   // voxels along the normal from the region center
  double spacing = 1.0;  // voxels between samples
  int n = 0;
  Vec3 center = Vec3::Zero();  // plane point at zero offset, voxel coords
  std::vector<double> values;  // n x n, row p along e1, column q along e2
  std::vector<char> unmasked;

  double at(int p, int q) const { return values[static_cast<std::size_t>(p) * n + q]; }

  /// Voxel-coordinate position of sample (p, q); fractional indices allowed.
  Vec3 sample_point(double p, double q) const {
    const Vec3 nn = approach_normal(yaw, pitch);
    const auto [e1, e2] = plane_axes(yaw, nn);
    const double h = 0.5 * (n - 1);
    return center + offset * nn + (p - h) * spacing * e1 + (q - h) * spacing * e2;
  }
};

/// Precomputed per-grid inputs shared by every plane of a sweep. Offsets
/// span the occupied (v > 0.5) bounding box, or the band's box when nothing
/// is occupied; the approach radius always covers the band.
struct SweepContext {
  const VoxelGrid* grid = nullptr;
  std::vector<char> band;
  Vec3 lo = Vec3::Zero(), hi = Vec3::Zero();            // offset box, voxel coords
  Vec3 band_lo = Vec3::Zero(), band_hi = Vec3::Zero();  // band box
  bool any_band = false;

  explicit SweepContext(const VoxelGrid& g) : grid(&g), band(surface_band(g)) {
    const Vec3 inf = Vec3::Constant(std::numeric_limits<double>::infinity());
    Vec3 occ_lo = inf, occ_hi = -inf;
    band_lo = inf;
    band_hi = -inf;
    bool any_occupied = false;
    for (std::size_t i = 0; i < band.size(); ++i) {
      const bool occ = g[i] > 0.5f;
      if (!band[i] && !occ) continue;
      const Cell c = g.cell(i);
      const Vec3 p(c[0], c[1], c[2]);
      if (band[i]) {
        band_lo = band_lo.cwiseMin(p);
        band_hi = band_hi.cwiseMax(p);
        any_band = true;
      }
      if (occ) {
        occ_lo = occ_lo.cwiseMin(p);
        occ_hi = occ_hi.cwiseMax(p);
        any_occupied = true;
      }
    }
    lo = any_occupied ? occ_lo : band_lo;
    hi = any_occupied ? occ_hi : band_hi;
  }

  Vec3 center() const { return 0.5 * (lo + hi); }

  /// Radius about center() enclosing every band cell.
  double bounding_radius() const {
    const Vec3 c = center();
    const Vec3 far = (band_hi - c).cwiseAbs().cwiseMax((band_lo - c).cwiseAbs());
    return far.norm() + 0.5 * std::sqrt(3.0);
  }

  int side() const {
    const Dims& d = grid->dims();
    return static_cast<int>(std::ceil(std::sqrt(3.0) * std::max({d[0], d[1], d[2]})));
  }

  /// Offsets from the box's lowest to highest projection on n, stepping
  /// by the stride and always ending at the top.
  std::vector<double> offsets(const Vec3& n) const {
    double a = std::numeric_limits<double>::infinity(), b = -a;
    for (int m = 0; m < 8; ++m) {
      const Vec3 corner((m & 1) ? hi.x() : lo.x(), (m & 2) ? hi.y() : lo.y(), (m & 4) ? hi.z() : lo.z());
      const double s = (corner - center()).dot(n);
      a = std::min(a, s);
      b = std::max(b, s);
    }
    std::vector<double> out;
    for (double o = a; o < b; o += kOffsetStride) out.push_back(o);
    out.push_back(b);
    return out;
  }
};

/// Samples the plane at voxel pitch; each sample takes its nearest voxel's
/// confidence if that voxel is in the surface band, else the masked value.
inline SearchGrid build_search_grid(const SweepContext& ctx, double yaw, double pitch, double offset) {
  const VoxelGrid& grid = *ctx.grid;
  SearchGrid sg;
  sg.yaw = yaw;
  sg.pitch = pitch;
  sg.offset = offset;
  sg.n = ctx.side();
  sg.center = ctx.center();
  sg.values.assign(static_cast<std::size_t>(sg.n) * sg.n, kMaskedConfidence);
  sg.unmasked.assign(sg.values.size(), 0);
  const Vec3 nn = approach_normal(yaw, pitch);
  const auto [e1, e2] = plane_axes(yaw, nn);
  const double h = 0.5 * (sg.n - 1);
  const Vec3 origin = sg.center + offset * nn - h * e1 - h * e2;
  for (int p = 0; p < sg.n; ++p) {
    const Vec3 row = origin + p * e1;
    for (int q = 0; q < sg.n; ++q) {
      const Vec3 x = row + q * e2;
      const Cell c{static_cast<int>(std::floor(x.x() + 0.5)), static_cast<int>(std::floor(x.y() + 0.5)),
                   static_cast<int>(std::floor(x.z() + 0.5))};
      if (!grid.contains(c)) continue;
      const std::size_t idx = grid.index(c);
      if (!ctx.band[idx]) continue;
      const std::size_t s = static_cast<std::size_t>(p) * sg.n + q;
      sg.values[s] = std::fabs(grid[idx] - 0.5);
      sg.unmasked[s] = 1;
    }
  }
  return sg;
}

inline SearchGrid build_search_grid(const VoxelGrid& grid, double yaw, double pitch, double offset) {
  return build_search_grid(SweepContext(grid), yaw, pitch, offset);
}

/// (n+1) x (n+1) prefix sums with a zero first row and column.
struct IntegralMap {
  int n = 0;
  std::vector<double> g;

  double at(int p, int q) const { return g[static_cast<std::size_t>(p) * (n + 1) + q]; }

  double window(int p, int q, int k) const { return at(p + k, q + k) - at(p, q + k) - at(p + k, q) + at(p, q); }
};

inline IntegralMap integral_map(const std::vector<double>& f, int n) {
  IntegralMap im{n, std::vector<double>(static_cast<std::size_t>(n + 1) * (n + 1), 0.0)};
  const auto w = static_cast<std::size_t>(n + 1);
  for (int p = 1; p <= n; ++p) {
    for (int q = 1; q <= n; ++q) {
      im.g[p * w + q] = f[static_cast<std::size_t>(p - 1) * n + (q - 1)] + im.g[(p - 1) * w + q] +
                        im.g[p * w + (q - 1)] - im.g[(p - 1) * w + (q - 1)];
    }
  }
  return im;
}

inline IntegralMap integral_map(const SearchGrid& sg) { return integral_map(sg.values, sg.n); }

struct Region {
  int p = 0, q = 0;
  double score = 0.0;
};

/// Minimum-sum k x k window, ties to the lexicographically smallest (p, q).
inline Region min_region(const IntegralMap& im, int k) {
  if (k < 1 || k > im.n) throw Error(ErrorCode::RegionTooLarge, "region does not fit the search grid");
  Region best{0, 0, std::numeric_limits<double>::infinity()};
  for (int p = 0; p + k <= im.n; ++p) {
    for (int q = 0; q + k <= im.n; ++q) {
      const double s = im.window(p, q, k);
      if (s < best.score) best = {p, q, s};
    }
  }
  return best;
}

struct TouchPlan {
  double yaw = 0.0, pitch = 0.0, offset = 0.0;
  int orientation = 0;  // index into the yaw x pitch sweep
  int p = 0, q = 0, k = 0, n = 0;
  double score = 0.0;
  Vec3 center = Vec3::Zero();  // voxel coords
  Vec3 normal = Vec3::UnitZ();  // unit approach direction, voxel coords
  Vec3 start = Vec3::Zero();    // approach start, voxel coords

  Vec3 center_world(const VoxelFrame& f) const { return voxel_to_world(f, center); }
  Vec3 normal_world(const VoxelFrame& f) const { return voxel_dir_to_world(f, normal); }
};

/// Straight-line approach from outside to the plan center: clear once it
/// reaches a band cell, blocked by any predicted-occupied cell before that.
inline bool approach_clear(const SweepContext& ctx, const Vec3& start, const Vec3& center) {
  const Vec3 d = center - start;
  const double len = d.norm();
  if (len == 0.0) return true;
  const VoxelGrid& grid = *ctx.grid;
  bool clear = true;
  traverse_cells(grid.dims(), start, d / len, len, [&](const Cell& c, double, double) {
    const std::size_t idx = grid.index(c);
    if (ctx.band[idx]) return false;
    if (grid[idx] > 0.5f) {
      clear = false;
      return false;
    }
    return true;
  });
  return clear;
}

inline Vec3 approach_start(const SweepContext& ctx, const Vec3& center, const Vec3& n) {
  const double back = (center - ctx.center()).dot(n) + 1.5 * ctx.bounding_radius();
  return center - back * n;
}

namespace detail {

struct PlaneSpec {
  int orientation;
  double yaw, pitch, offset;
};

inline std::vector<PlaneSpec> sweep_planes(const SweepContext& ctx) {
  std::vector<PlaneSpec> planes;
  int orientation = 0;
  for (double yaw : policy_yaws()) {
    for (double pitch : policy_pitches()) {
      for (double off : ctx.offsets(approach_normal(yaw, pitch))) planes.push_back({orientation, yaw, pitch, off});
      ++orientation;
    }
  }
  return planes;
}

struct Window {
  double score;
  int p, q;
};

// Windows of one plane holding at least one unmasked sample, with sums.
struct PlaneWindows {
  SearchGrid sg;
  IntegralMap sums;
  int k = 0;

  PlaneWindows(const SweepContext& ctx, const PlaneSpec& ps, int k_) : sg(build_search_grid(ctx, ps.yaw, ps.pitch, ps.offset)), k(k_) {
    if (k < 1 || k > sg.n) throw Error(ErrorCode::RegionTooLarge, "sensor footprint exceeds the search grid");
    sums = integral_map(sg);
  }

  int span() const { return sg.n - k + 1; }

  /// The touch aims at the window center, so that sample must be a band
  /// sample; the window sum still covers every sample.
  bool valid(int p, int q) const { return sg.unmasked[static_cast<std::size_t>(p + k / 2) * sg.n + (q + k / 2)] != 0; }

  /// Valid windows in (score, p, q) order, at most `limit`.
  std::vector<Window> best(std::size_t limit) const {
    std::vector<Window> all;
    for (int p = 0; p < span(); ++p)
      for (int q = 0; q < span(); ++q)
        if (valid(p, q)) all.push_back({sums.window(p, q, k), p, q});
    const auto less = [](const Window& a, const Window& b) {
      return std::tie(a.score, a.p, a.q) < std::tie(b.score, b.p, b.q);
    };
    if (all.size() > limit) {
      std::partial_sort(all.begin(), all.begin() + static_cast<std::ptrdiff_t>(limit), all.end(), less);
      all.resize(limit);
    } else {
      std::sort(all.begin(), all.end(), less);
    }
    return all;
  }
};

inline TouchPlan make_plan(const SweepContext& ctx, const PlaneSpec& ps, const SearchGrid& sg, int k, const Window& w) {
  TouchPlan plan;
  plan.yaw = ps.yaw;
  plan.pitch = ps.pitch;
  plan.offset = ps.offset;
  plan.orientation = ps.orientation;
  plan.p = w.p;
  plan.q = w.q;
  plan.k = k;
  plan.n = sg.n;
  plan.score = w.score;
  plan.normal = approach_normal(ps.yaw, ps.pitch);
  plan.center = sg.sample_point(w.p + k / 2, w.q + k / 2);
  plan.start = approach_start(ctx, plan.center, plan.normal);
  return plan;
}

}  // namespace detail

/// Lowest-confidence clear k x k region over the yaw/pitch/offset sweep.
/// Candidates are ordered by (score, orientation, offset, p, q). Plans with
/// the same center and normal as one in `executed` are skipped: repeating a
/// touch reproduces a measurement already taken.
inline TouchPlan next_touch(const VoxelGrid& grid, const SensorSpec& spec, std::span<const TouchPlan> executed = {}) {
  const SweepContext ctx(grid);
  if (!ctx.any_band) throw Error(ErrorCode::NoTouchableRegion, "prediction has no surface band");
  const auto planes = detail::sweep_planes(ctx);

  struct Head {
    std::size_t plane;
    std::size_t limit;
    std::size_t pos;
    std::vector<detail::Window> list;
  };
  std::vector<Head> heads;
  heads.reserve(planes.size());
  constexpr std::size_t kInitial = 16;
  for (std::size_t i = 0; i < planes.size(); ++i) {
    detail::PlaneWindows pw(ctx, planes[i], spec.footprint);
    heads.push_back({i, kInitial, 0, pw.best(kInitial)});
  }

  const auto key = [&](const Head& h) {
    const detail::Window& w = h.list[h.pos];
    return std::make_tuple(w.score, planes[h.plane].orientation, planes[h.plane].offset, w.p, w.q);
  };
  while (true) {
    Head* best = nullptr;
    for (Head& h : heads) {
      if (h.pos >= h.list.size()) continue;
      if (!best || key(h) < key(*best)) best = &h;
    }
    if (!best) throw Error(ErrorCode::NoTouchableRegion, "every candidate region is masked or blocked");
    const detail::PlaneSpec& ps = planes[best->plane];
    detail::PlaneWindows pw(ctx, ps, spec.footprint);
    const TouchPlan plan = detail::make_plan(ctx, ps, pw.sg, spec.footprint, best->list[best->pos]);
    const bool repeat = std::any_of(executed.begin(), executed.end(), [&](const TouchPlan& e) {
      return (e.center - plan.center).norm() < 1e-9 && (e.normal - plan.normal).norm() < 1e-9;
    });
    if (!repeat && approach_clear(ctx, plan.start, plan.center)) return plan;
    ++best->pos;
    if (best->pos == best->list.size() && best->list.size() == best->limit) {
      // Exhausted a truncated list: widen it and continue past what was seen.
      best->limit *= 4;
      best->list = pw.best(best->limit);
    }
  }
}

/// Uniform draws over the same clear, unmasked candidates as next_touch.
/// The sweep is built once; each draw is independent.
class RandomTouchSampler {
 public:
  RandomTouchSampler(const VoxelGrid& grid, const SensorSpec& spec) : ctx_(grid), k_(spec.footprint) {
    if (!ctx_.any_band) throw Error(ErrorCode::NoTouchableRegion, "prediction has no surface band");
    planes_ = detail::sweep_planes(ctx_);
    windows_.reserve(planes_.size());
    for (const auto& ps : planes_) {
      windows_.emplace_back(ctx_, ps, k_);
      const auto& pw = windows_.back();
      std::vector<std::pair<int, int>> valid;
      for (int p = 0; p < pw.span(); ++p)
        for (int q = 0; q < pw.span(); ++q)
          if (pw.valid(p, q)) valid.emplace_back(p, q);
      total_ += valid.size();
      cumulative_.push_back(total_);
      valid_.push_back(std::move(valid));
    }
    if (total_ == 0) throw Error(ErrorCode::NoTouchableRegion, "every candidate region is masked");
  }

  std::size_t candidates() const { return total_; }

  TouchPlan plan_at(std::size_t index) const {
    const auto i = static_cast<std::size_t>(std::upper_bound(cumulative_.begin(), cumulative_.end(), index) -
                                            cumulative_.begin());
    const auto [p, q] = valid_[i][index - (i == 0 ? 0 : cumulative_[i - 1])];
    const auto& pw = windows_[i];
    return detail::make_plan(ctx_, planes_[i], pw.sg, k_, {pw.sums.window(p, q, k_), p, q});
  }

  template <typename Rng>
  TouchPlan draw(Rng& rng) const {
    // Rejection sampling keeps the draw uniform over clear candidates.
    std::uniform_int_distribution<std::size_t> pick(0, total_ - 1);
    for (int attempt = 0; attempt < 4096; ++attempt) {
      TouchPlan plan = plan_at(pick(rng));
      if (approach_clear(ctx_, plan.start, plan.center)) return plan;
    }
    std::vector<std::size_t> clear;
    for (std::size_t i = 0; i < total_; ++i) {
      const TouchPlan plan = plan_at(i);
      if (approach_clear(ctx_, plan.start, plan.center)) clear.push_back(i);
    }
    if (clear.empty()) throw Error(ErrorCode::NoTouchableRegion, "every candidate region is blocked");
    std::uniform_int_distribution<std::size_t> pick_clear(0, clear.size() - 1);
    return plan_at(clear[pick_clear(rng)]);
  }

 private:
  SweepContext ctx_;
  int k_;
  std::vector<detail::PlaneSpec> planes_;
  std::vector<detail::PlaneWindows> windows_;
  std::vector<std::vector<std::pair<int, int>>> valid_;
  std::vector<std::size_t> cumulative_;
  std::size_t total_ = 0;
};

template <typename Rng>
TouchPlan random_touch(const VoxelGrid& grid, const SensorSpec& spec, Rng& rng) {
  return RandomTouchSampler(grid, spec).draw(rng);
}

/// Plan for an externally chosen target (human policy): approach along the
/// yaw/pitch normal toward `center` (voxel coords). Throws BlockedPlan when
/// the approach crosses predicted-occupied cells.
inline TouchPlan manual_plan(const VoxelGrid& grid, const SensorSpec& spec, const Vec3& center, double yaw,
                             double pitch) {
  for (int a = 0; a < 3; ++a) {
    if (!(center[a] >= -0.5 && center[a] <= grid.dims()[a] - 0.5)) {
      throw Error(ErrorCode::PlanOutOfBounds, "plan center is outside the grid");
    }
  }
  const SweepContext ctx(grid);
  TouchPlan plan;
  plan.yaw = yaw;
  plan.pitch = pitch;
  plan.k = spec.footprint;
  plan.center = center;
  plan.normal = approach_normal(yaw, pitch);
  plan.orientation = -1;
  plan.score = std::numeric_limits<double>::quiet_NaN();
  if (ctx.any_band) {
    plan.start = approach_start(ctx, center, plan.normal);
    if (!approach_clear(ctx, plan.start, plan.center)) throw Error(ErrorCode::BlockedPlan, "approach path is blocked");
  } else {
    const Dims& d = grid.dims();
    const double r = 0.5 * std::sqrt(double(d[0] * d[0] + d[1] * d[1] + d[2] * d[2]));
    plan.start = center - 1.5 * r * plan.normal - (center - Vec3(0.5 * (d[0] - 1), 0.5 * (d[1] - 1), 0.5 * (d[2] - 1))).dot(plan.normal) * plan.normal;
  }
  return plan;
}

}  // namespace tactoform
