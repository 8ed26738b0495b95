#pragma once

#include <array>
#include <cmath>

#include <Eigen/Dense>

#include "tactoform/error.hpp"

namespace tactoform {

using Vec3 = Eigen::Vector3d;
using Mat3 = Eigen::Matrix3d;

/// Rigid motion x' = rotation * x + translation. Translation in mm.
struct RigidTransform {
  Mat3 rotation = Mat3::Identity();
  Vec3 translation = Vec3::Zero();

  Vec3 apply(const Vec3& x) const { return rotation * x + translation; }

  RigidTransform inverse() const {
    RigidTransform inv;
    inv.rotation = rotation.transpose();
    inv.translation = -(inv.rotation * translation);
    return inv;
  }
};

namespace detail {

// Orthonormal triad built from three points by Gram-Schmidt; columns are
// the triad axes.
inline Mat3 point_triad(const std::array<Vec3, 3>& pts) {
  const Vec3 a = pts[1] - pts[0];
  const Vec3 b = pts[2] - pts[0];
  const double scale = a.norm() * b.norm();
  if (scale == 0.0 || a.cross(b).norm() <= 1e-9 * scale) {
    throw Error(ErrorCode::DegenerateCalibration, "calibration points are collinear");
  }
  const Vec3 e1 = a.normalized();
  const Vec3 e2 = (b - e1.dot(b) * e1).normalized();
  Mat3 triad;
  triad.col(0) = e1;
  triad.col(1) = e2;
  triad.col(2) = e1.cross(e2);
  return triad;
}

// Closest proper rotation in the Frobenius sense (polar factor via SVD).
inline Mat3 nearest_rotation(const Mat3& m) {
  Eigen::JacobiSVD<Mat3> svd(m, Eigen::ComputeFullU | Eigen::ComputeFullV);
  Mat3 d = Mat3::Identity();
  if ((svd.matrixU() * svd.matrixV().transpose()).determinant() < 0.0) d(2, 2) = -1.0;
  return svd.matrixU() * d * svd.matrixV().transpose();
}

}  // namespace detail

/// Recovers X_r = R * X_w + T from three world/robot correspondences.
///
/// Each point triple is turned into an orthonormal triad; the rotation maps
/// the world triad onto the robot triad and the translation aligns the
/// centroids. Exact correspondences are reproduced to round-off; noisy ones
/// still yield a proper rotation.
inline RigidTransform solve_world_to_robot(const std::array<Vec3, 3>& world_points,
                                           const std::array<Vec3, 3>& robot_points) {
  const Mat3 world_triad = detail::point_triad(world_points);
  const Mat3 robot_triad = detail::point_triad(robot_points);

  RigidTransform t;
  t.rotation = detail::nearest_rotation(robot_triad * world_triad.transpose());
  const Vec3 world_centroid = (world_points[0] + world_points[1] + world_points[2]) / 3.0;
  const Vec3 robot_centroid = (robot_points[0] + robot_points[1] + robot_points[2]) / 3.0;
  t.translation = robot_centroid - t.rotation * world_centroid;
  return t;
}

/// Placement of the voxel grid in the world.
///
/// Voxel coordinates use the cell-center convention: cell (i, j, k) has its
/// center at voxel coordinate (i, j, k), so the grid occupies
/// [-0.5, dim - 0.5] along each axis. The axes are the rows of the linear
/// part, x_w = s * [a_x a_y a_z]^T (x_v - o_v) + o_w.
struct VoxelFrame {
  Vec3 origin_voxel = Vec3::Zero();
  Vec3 origin_world = Vec3::Zero();
  Vec3 axis_x = Vec3::UnitX();
  Vec3 axis_y = Vec3::UnitY();
  Vec3 axis_z = Vec3::UnitZ();
  int pixels_per_voxel = 1;
  double pixel_length = 1.0;  // mm

  double scale() const { return pixels_per_voxel * pixel_length; }

  Mat3 axes() const {
    Mat3 a;
    a.row(0) = axis_x.transpose();
    a.row(1) = axis_y.transpose();
    a.row(2) = axis_z.transpose();
    return a;
  }

  Mat3 linear() const { return scale() * axes(); }

  void validate() const {
    if (pixels_per_voxel < 1 || !(pixel_length > 0.0)) {
      throw Error(ErrorCode::InvalidArgument, "voxel scale must be positive");
    }
    const Mat3 a = axes();
    if (((a * a.transpose()) - Mat3::Identity()).cwiseAbs().maxCoeff() > 1e-9) {
      throw Error(ErrorCode::InvalidArgument, "voxel axes must be orthonormal");
    }
  }

  /// Frame used by the simulator: bottom center of an n^3 grid sits on the
  /// world origin, with the mirrored x axis of the tabletop camera setup.
  static VoxelFrame tabletop(int resolution, double voxel_mm) {
    VoxelFrame f;
    const double c = 0.5 * (resolution - 1);
    f.origin_voxel = Vec3(c, c, -0.5);
    f.axis_x = Vec3(-1.0, 0.0, 0.0);
    f.pixels_per_voxel = 1;
    f.pixel_length = voxel_mm;
    return f;
  }
};

inline Vec3 voxel_to_world(const VoxelFrame& frame, const Vec3& x_voxel) {
  return frame.linear() * (x_voxel - frame.origin_voxel) + frame.origin_world;
}

inline Vec3 world_to_voxel(const VoxelFrame& frame, const Vec3& x_world) {
  // The axes are orthonormal, so the inverse of s*A is A^T / s.
  return frame.axes().transpose() * (x_world - frame.origin_world) / frame.scale() +
         frame.origin_voxel;
}

/// Direction vectors carry no translation.
inline Vec3 voxel_dir_to_world(const VoxelFrame& frame, const Vec3& d_voxel) {
  return frame.axes() * d_voxel;
}

inline Vec3 world_dir_to_voxel(const VoxelFrame& frame, const Vec3& d_world) {
  return frame.axes().transpose() * d_world;
}

}  // namespace tactoform
