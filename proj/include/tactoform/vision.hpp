#pragma once

#include <cmath>
#include <limits>
#include <numbers>
#include <random>
#include <vector>

#include "tactoform/frames.hpp"
#include "tactoform/prior.hpp"
#include "tactoform/raycast.hpp"
#include "tactoform/refine.hpp"
#include "tactoform/voxel.hpp"

namespace tactoform {

/// Pinhole camera in world millimetres with square pixels.
struct Camera {
  Vec3 position = Vec3::Zero();
  Vec3 forward = Vec3::UnitY();
  Vec3 right = Vec3::UnitX();
  Vec3 up = Vec3::UnitZ();
  int width = 160;
  int height = 120;
  double fov_y_deg = 30.0;

  static Camera look_at(const Vec3& position, const Vec3& target, int width, int height, double fov_y_deg) {
    Camera c;
    c.position = position;
    c.forward = (target - position).normalized();
    Vec3 r = c.forward.cross(Vec3::UnitZ());
    if (r.norm() < 1e-9) r = Vec3::UnitX();
    c.right = r.normalized();
    c.up = c.right.cross(c.forward);
    c.width = width;
    c.height = height;
    c.fov_y_deg = fov_y_deg;
    return c;
  }

  /// Tabletop view: camera `height_mm` above the table, looking down at
  /// `tilt_deg` toward the grid center from the -y side, zoomed so the
  /// grid's bounding sphere fills the shorter image side.
  static Camera tabletop(const VoxelFrame& frame, const Dims& dims, double height_mm = 457.2,
                         double tilt_deg = 30.0, int width = 160, int height = 120) {
    const Vec3 center_v(0.5 * (dims[0] - 1), 0.5 * (dims[1] - 1), 0.5 * (dims[2] - 1));
    const Vec3 target = voxel_to_world(frame, center_v);
    const double tilt = tilt_deg * std::numbers::pi / 180.0;
    const double drop = height_mm - target.z();
    const double horizontal = drop / std::tan(tilt);
    const Vec3 position(target.x(), target.y() - horizontal, height_mm);
    const double range = (target - position).norm();
    const double radius = 0.5 * frame.scale() * std::sqrt(double(dims[0]) * dims[0] + double(dims[1]) * dims[1] +
                                                           double(dims[2]) * dims[2]);
    const double fov = 2.0 * std::atan(1.05 * radius / range) * 180.0 / std::numbers::pi;
    return look_at(position, target, width, height, fov);
  }

  /// Unit world direction through the center of pixel (col, row); row 0 is
  /// the top of the image.
  Vec3 ray(int col, int row) const {
    const double t = std::tan(0.5 * fov_y_deg * std::numbers::pi / 180.0);
    const double px = 2.0 * t / height;
    const double x = (col + 0.5 - 0.5 * width) * px;
    const double y = (0.5 * height - row - 0.5) * px;
    return (forward + x * right + y * up).normalized();
  }
};

struct DepthNoise {
  double sigma_mm = 0.0;
  std::uint64_t seed = 0;
  std::vector<char> transparent;  // per cell; empty means none
};

/// Range along each pixel ray (mm); NaN where the ray returns nothing.
struct DepthMap {
  Camera camera;
  std::vector<double> range;

  double at(int col, int row) const { return range[static_cast<std::size_t>(row) * camera.width + col]; }
  std::size_t returns() const {
    std::size_t n = 0;
    for (double r : range) n += !std::isnan(r);
    return n;
  }
};

namespace detail {

// Ray in voxel coordinates whose parameter is world millimetres.
inline std::pair<Vec3, Vec3> voxel_ray(const VoxelFrame& frame, const Vec3& origin_world, const Vec3& dir_world) {
  return {world_to_voxel(frame, origin_world), world_dir_to_voxel(frame, dir_world) / frame.scale()};
}

}  // namespace detail

/// Ray-casts the occupancy grid (cells >= 0.5 are solid unless marked
/// transparent) and adds optional Gaussian range noise.
inline DepthMap render_depth(const VoxelGrid& truth, const Camera& camera, const DepthNoise& noise = {}) {
  DepthMap map{camera, std::vector<double>(static_cast<std::size_t>(camera.width) * camera.height,
                                           std::numeric_limits<double>::quiet_NaN())};
  const bool masked = !noise.transparent.empty();
  for (int row = 0; row < camera.height; ++row) {
    for (int col = 0; col < camera.width; ++col) {
      const auto [o, d] = detail::voxel_ray(truth.frame(), camera.position, camera.ray(col, row));
      double hit = std::numeric_limits<double>::quiet_NaN();
      traverse_cells(truth.dims(), o, d, std::numeric_limits<double>::infinity(), [&](const Cell& c, double t0, double) {
        const std::size_t idx = truth.index(c);
        if (truth[idx] >= 0.5f && !(masked && noise.transparent[idx])) {
          hit = t0;
          return false;
        }
        return true;
      });
      map.range[static_cast<std::size_t>(row) * camera.width + col] = hit;
    }
  }
  if (noise.sigma_mm > 0.0) {
    std::mt19937_64 rng(noise.seed);
    std::normal_distribution<double> n(0.0, noise.sigma_mm);
    for (double& r : map.range) {
      const double e = n(rng);
      if (!std::isnan(r)) r += e;
    }
  }
  return map;
}

/// Visibility constraints from a depth map: cells the ray fully crosses
/// before its return are free, the cell the return lands in is occupied.
/// Free cells go in first so occupied wins on overlap.
inline ConstraintSet vision_constraints(const DepthMap& depth, const VoxelFrame& frame, const Dims& dims) {
  if (depth.returns() == 0) throw Error(ErrorCode::NoVisiblePixels, "depth map has no returns");
  ConstraintSet cs(dims, frame);
  const Camera& cam = depth.camera;
  std::vector<Cell> surface;
  for (int row = 0; row < cam.height; ++row) {
    for (int col = 0; col < cam.width; ++col) {
      const double r = depth.at(col, row);
      if (std::isnan(r)) continue;
      const auto [o, d] = detail::voxel_ray(frame, cam.position, cam.ray(col, row));
      traverse_cells(dims, o, d, r + 1e-6, [&](const Cell& c, double, double t1) {
        if (t1 <= r + 1e-9) {
          cs.add_target(c, 0.0f, 0);
          return true;
        }
        surface.push_back(c);
        return false;
      });
    }
  }
  for (const Cell& c : surface) cs.add_target(c, 1.0f, 1);
  return cs;
}

struct VisionOptions {
  int iterations = 200;
  double step = 10.0;
  double min_improvement = 1e-6;
  double prior_weight = 1.0;

  RefineOptions refine() const { return {iterations, step, 5, min_improvement, prior_weight}; }
};

/// Fits a latent code to one depth view by descending the constraint loss
/// from z = 0.
inline LatentCode vision_proxy(const ShapePrior& prior, const DepthMap& depth, const VoxelFrame& frame,
                               const VisionOptions& opt = {}) {
  const ConstraintSet cs = vision_constraints(depth, frame, prior.dims());
  return refine_latent(prior, prior.zero_code(), cs, opt.refine());
}

}  // namespace tactoform
