#include <random>

#include <gtest/gtest.h>

#include "tactoform/frames.hpp"

using namespace tactoform;

namespace {

Mat3 random_rotation(std::mt19937_64& rng) {
  std::normal_distribution<double> n;
  Eigen::Quaterniond q(n(rng), n(rng), n(rng), n(rng));
  return q.normalized().toRotationMatrix();
}

const std::array<Vec3, 3> kCalibration{Vec3(0, 0, 0), Vec3(1, 0, 0), Vec3(0, 1, 0)};

}  // namespace

TEST(WorldToRobot, Identity) {
  const auto t = solve_world_to_robot(kCalibration, kCalibration);
  EXPECT_LE((t.rotation - Mat3::Identity()).cwiseAbs().maxCoeff(), 1e-12);
  EXPECT_LE(t.translation.norm(), 1e-12);
}

TEST(WorldToRobot, QuarterTurnAndShift) {
  const Mat3 rz = Eigen::AngleAxisd(M_PI / 2, Vec3::UnitZ()).toRotationMatrix();
  const Vec3 shift(10, 0, 0);
  std::array<Vec3, 3> robot;
  for (int i = 0; i < 3; ++i) robot[i] = rz * kCalibration[i] + shift;
  const auto t = solve_world_to_robot(kCalibration, robot);
  EXPECT_LE((t.rotation - rz).cwiseAbs().maxCoeff(), 1e-12);
  EXPECT_LE((t.translation - shift).norm(), 1e-12);
  for (int i = 0; i < 3; ++i) EXPECT_LE((t.apply(kCalibration[i]) - robot[i]).norm(), 1e-9);
}

TEST(WorldToRobot, CollinearIsDegenerate) {
  const std::array<Vec3, 3> line{Vec3(0, 0, 0), Vec3(1, 1, 1), Vec3(2, 2, 2)};
  try {
    solve_world_to_robot(line, kCalibration);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::DegenerateCalibration);
  }
}

TEST(WorldToRobot, RandomTransformsAndEquivariance) {
  std::mt19937_64 rng(42);
  std::uniform_real_distribution<double> u(-200, 200);
  for (int trial = 0; trial < 100; ++trial) {
    std::array<Vec3, 3> world{Vec3(u(rng), u(rng), u(rng)), Vec3(u(rng), u(rng), u(rng)),
                              Vec3(u(rng), u(rng), u(rng))};
    const Mat3 r = random_rotation(rng);
    const Vec3 tr(u(rng), u(rng), u(rng));
    std::array<Vec3, 3> robot;
    for (int i = 0; i < 3; ++i) robot[i] = r * world[i] + tr;
    const auto t = solve_world_to_robot(world, robot);
    EXPECT_LE((t.rotation.transpose() * t.rotation - Mat3::Identity()).cwiseAbs().maxCoeff(), 1e-9);
    for (int i = 0; i < 3; ++i) EXPECT_LE((t.apply(world[i]) - robot[i]).norm(), 1e-9);

    const Mat3 q = random_rotation(rng);
    std::array<Vec3, 3> qw, qr;
    for (int i = 0; i < 3; ++i) {
      qw[i] = q * world[i];
      qr[i] = q * robot[i];
    }
    const auto tq = solve_world_to_robot(qw, qr);
    EXPECT_LE((tq.rotation - q * t.rotation * q.transpose()).cwiseAbs().maxCoeff(), 1e-9);
    EXPECT_LE((tq.translation - q * t.translation).norm(), 1e-9);
  }
}

TEST(VoxelFrame, ScaleAndPaperAxes) {
  VoxelFrame f;
  f.pixels_per_voxel = 4;
  f.pixel_length = 0.5;
  EXPECT_DOUBLE_EQ(f.scale(), 2.0);
  f.axis_x = Vec3(-1, 0, 0);
  EXPECT_EQ(voxel_to_world(f, Vec3(1, 0, 0)), Vec3(-2, 0, 0));
  f.origin_voxel = Vec3(3, 4, 5);
  f.origin_world = Vec3(-1, 7, 2);
  EXPECT_EQ(voxel_to_world(f, f.origin_voxel), f.origin_world);
}

TEST(VoxelFrame, RoundTrip) {
  std::mt19937_64 rng(9);
  std::uniform_real_distribution<double> u(-50, 50);
  for (int trial = 0; trial < 100; ++trial) {
    VoxelFrame f;
    const Mat3 r = random_rotation(rng);
    f.axis_x = r.row(0);
    f.axis_y = r.row(1);
    f.axis_z = r.row(2);
    f.origin_voxel = Vec3(u(rng), u(rng), u(rng));
    f.origin_world = Vec3(u(rng), u(rng), u(rng));
    f.pixels_per_voxel = 1 + trial % 5;
    f.pixel_length = 0.1 + 0.05 * (trial % 7);
    f.validate();
    const Vec3 x(u(rng), u(rng), u(rng));
    EXPECT_LE((world_to_voxel(f, voxel_to_world(f, x)) - x).norm(), 1e-9);
    EXPECT_LE((voxel_to_world(f, world_to_voxel(f, x)) - x).norm(), 1e-9 * f.scale());
  }
}
