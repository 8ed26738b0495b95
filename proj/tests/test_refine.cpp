#include <cmath>
#include <random>
#include <sstream>

#include <gtest/gtest.h>

#include "tactoform/refine.hpp"

using namespace tactoform;

namespace {

TouchRecord hit_along_x(int y, int z, int contact_x) {
  TouchRecord r;
  r.hit = true;
  r.normal = Vec3(1, 0, 0);
  r.start = Vec3(-0.5, y, z);
  r.contact = Cell{contact_x, y, z};
  r.ray_cells = ray_cells_from({8, 8, 8}, r.start, r.normal, r.contact, 1000);
  return r;
}

ConstraintSet random_constraints(std::mt19937_64& rng, const Dims& dims, int touches) {
  ConstraintSet cs(dims);
  std::uniform_real_distribution<double> u(-1, 1);
  for (int i = 0; i < touches; ++i) {
    TouchRecord r;
    r.normal = Vec3(u(rng), u(rng), u(rng)).normalized();
    r.start = Vec3(dims[0] / 2.0, dims[1] / 2.0, dims[2] / 2.0) - 20.0 * r.normal;
    auto cells = ray_cells_from(dims, r.start, r.normal, std::nullopt, 1000);
    if (cells.size() < 3) continue;
    const std::size_t k = cells.size() / 2 + static_cast<std::size_t>(u(rng) * 2);
    r.hit = i % 3 != 0;
    if (r.hit) r.contact = cells[k];
    cells.resize(k);
    r.ray_cells = cells;
    cs.add(r);
  }
  return cs;
}

VoxelGrid random_grid(std::mt19937_64& rng, const Dims& dims) {
  std::uniform_real_distribution<float> u(0.05f, 0.95f);
  VoxelGrid g(dims);
  for (float& v : g.values()) v = u(rng);
  return g;
}

const ShapePrior& test_prior() {
  static const ShapePrior prior = [] {
    std::vector<VoxelGrid> grids;
    for (const auto& e : generate_corpus(ShapeCorpusSpec::standard(16, 10, 4))) grids.push_back(e.grid);
    return fit_prior(std::span<const VoxelGrid>(grids), 12);
  }();
  return prior;
}

}  // namespace

TEST(Constraints, HitRayAndTargets) {
  ConstraintSet cs({8, 8, 8});
  cs.add(hit_along_x(3, 4, 5));
  EXPECT_EQ(cs.count(0.0f), 5u);
  EXPECT_EQ(cs.count(1.0f), 1u);
  EXPECT_TRUE(cs.conflicts().empty());

  TouchRecord bad = hit_along_x(3, 4, 5);
  bad.ray_cells.push_back(Cell{8, 4, 4});
  EXPECT_THROW(cs.add(bad), Error);
  bad = hit_along_x(3, 4, 5);
  bad.normal = Vec3(1, 1e-4, 0);
  EXPECT_THROW(cs.add(bad), Error);
  bad = hit_along_x(3, 4, 5);
  bad.ray_cells.push_back(*bad.contact);
  EXPECT_THROW(cs.add(bad), Error);
}

TEST(Constraints, LaterTouchWinsAndIsLogged) {
  ConstraintSet cs({8, 8, 8});
  cs.add(hit_along_x(3, 4, 5));
  cs.add(hit_along_x(3, 4, 2));  // (2,3,4) now full, (3..4) no longer constrained by it
  ASSERT_EQ(cs.conflicts().size(), 1u);
  EXPECT_EQ(cs.conflicts()[0].cell, (Cell{2, 3, 4}));
  EXPECT_EQ(cs.conflicts()[0].new_value, 1.0f);
  cs.add(hit_along_x(3, 4, 6));  // ray sweeps (2,3,4) and (5,3,4) back to free
  EXPECT_EQ(cs.conflicts().size(), 3u);
  EXPECT_EQ(cs.count(1.0f), 1u);
  EXPECT_EQ(cs.count(0.0f), 6u);
}

TEST(TouchLoss, HandValues) {
  ConstraintSet cs({8, 8, 8});
  cs.add(hit_along_x(3, 4, 5));
  VoxelGrid g({8, 8, 8});
  g.at({5, 3, 4}) = 1.0f;
  EXPECT_EQ(touch_loss(g, cs), 0.0);
  for (double v : touch_loss_grad(g, cs)) EXPECT_EQ(v, 0.0);

  VoxelGrid half({8, 8, 8}, 0.5f);
  EXPECT_DOUBLE_EQ(touch_loss(half, cs), 0.25 * 6);
  const auto grad = touch_loss_grad(half, cs);
  for (int x = 0; x < 8; ++x) {
    const double expect = x < 5 ? 1.0 : x == 5 ? -1.0 : 0.0;
    EXPECT_EQ(grad[half.index(x, 3, 4)], expect);
  }
  EXPECT_EQ(grad[half.index(0, 0, 0)], 0.0);

  TouchRecord miss;
  miss.normal = Vec3(0, 0, 1);
  miss.start = Vec3(2, 2, -0.5);
  miss.ray_cells = ray_cells_from({8, 8, 8}, miss.start, miss.normal, std::nullopt, 4);
  ConstraintSet m({8, 8, 8});
  m.add(miss);
  EXPECT_NEAR(touch_loss(VoxelGrid({8, 8, 8}, 0.3f), m), 0.09 * 4, 1e-6);

  EXPECT_THROW(touch_loss(VoxelGrid::cube(4), cs), Error);
}

TEST(TouchLoss, GradientMatchesFiniteDifferences) {
  std::mt19937_64 rng(17);
  const Dims dims{9, 8, 7};
  for (int trial = 0; trial < 5; ++trial) {
    const auto cs = random_constraints(rng, dims, 6);
    const auto g = random_grid(rng, dims);
    const auto grad = touch_loss_grad(g, cs);
    // Central differences in double on the quadratic loss itself.
    for (const Target& t : cs.targets()) {
      const double v = g[t.index], h = 1e-6;
      const double fd = ((v + h - t.value) * (v + h - t.value) - (v - h - t.value) * (v - h - t.value)) / (2 * h);
      EXPECT_NEAR(grad[t.index], fd, 1e-6);
    }
    double nonzero = 0;
    for (double x : grad) nonzero += x != 0.0;
    EXPECT_LE(nonzero, static_cast<double>(cs.targets().size()));
  }
}

TEST(LatentLoss, ChainRuleMatchesFiniteDifferences) {
  const auto& prior = test_prior();
  std::mt19937_64 rng(5);
  std::normal_distribution<double> n(0, 3);
  for (int trial = 0; trial < 4; ++trial) {
    const auto cs = random_constraints(rng, prior.dims(), 8);
    LatentCode z(prior.latent_dim());
    for (int d = 0; d < z.size(); ++d) z(d) = n(rng);
    const auto ll = latent_loss(prior, z, cs);
    // Independent path: dense double decode and the touch loss formula.
    const auto dense_loss = [&](const LatentCode& zz) {
      const Eigen::VectorXd l = prior.logits(zz);
      double s = 0;
      for (const Target& t : cs.targets()) s += std::pow(sigmoid(l(t.index)) - t.value, 2);
      return s;
    };
    EXPECT_NEAR(ll.loss, dense_loss(z), 1e-9 * std::max(1.0, ll.loss));
    for (int d = 0; d < z.size(); ++d) {
      LatentCode zp = z, zm = z;
      zp(d) += 1e-5;
      zm(d) -= 1e-5;
      const double fd = (dense_loss(zp) - dense_loss(zm)) / 2e-5;
      EXPECT_NEAR(ll.grad(d), fd, 1e-4 * std::max(std::fabs(fd), 1e-3)) << "d=" << d;
    }
  }
}

TEST(Refine, EmptyConstraintsLeaveCodeUnchanged) {
  const auto& prior = test_prior();
  LatentCode z = LatentCode::LinSpaced(prior.latent_dim(), -1, 1);
  EXPECT_EQ(refine_latent(prior, z, ConstraintSet(prior.dims())), z);
  EXPECT_THROW(refine_latent(prior, LatentCode::Zero(2), ConstraintSet(prior.dims())), Error);
}

TEST(Refine, SingleHitOnUncertainCellDecreasesLoss) {
  const auto& prior = test_prior();
  // Pick the cell whose mean occupancy is closest to 0.5.
  std::size_t best = 0;
  for (std::size_t i = 0; i < prior.cells(); ++i) {
    if (std::fabs(prior.mean()[i]) < std::fabs(prior.mean()[best])) best = i;
  }
  VoxelGrid probe(prior.dims());
  const Cell cell = probe.cell(best);
  ConstraintSet cs(prior.dims());
  TouchRecord r;
  r.hit = true;
  r.contact = cell;
  r.normal = Vec3(0, 0, -1);
  cs.add(r);
  const LatentCode z0 = prior.zero_code();
  const double before = latent_loss(prior, z0, cs).loss;
  const auto st = refine_latent_stats(prior, z0, cs, {1, 0.001, 5});
  EXPECT_LT(st.final_loss, before);
  EXPECT_EQ(st.accepted_steps, 1);
}

TEST(Refine, SafeguardNeverIncreasesLoss) {
  const auto& prior = test_prior();
  std::mt19937_64 rng(99);
  for (double lr : {1e-3, 1.0, 1e3, 1e6}) {
    const auto cs = random_constraints(rng, prior.dims(), 10);
    const LatentCode z0 = prior.zero_code();
    const auto st = refine_latent_stats(prior, z0, cs, {10, lr, 5});
    EXPECT_LE(st.final_loss, st.initial_loss);
    EXPECT_NEAR(st.final_loss, latent_loss(prior, st.z, cs).loss, 1e-12);
  }
}

TEST(Refine, CodePenaltyGradientAndShrinkage) {
  const auto& prior = test_prior();
  std::mt19937_64 rng(17);
  std::normal_distribution<double> n(0, 3);
  const auto cs = random_constraints(rng, prior.dims(), 6);
  LatentCode z(prior.latent_dim());
  for (int d = 0; d < z.size(); ++d) z(d) = n(rng);
  const double w = 0.7;
  const auto& var = prior.code_variance();
  const auto objective = [&](const LatentCode& zz) {
    double s = latent_loss(prior, zz, cs).loss;
    for (int d = 0; d < zz.size(); ++d) {
      if (var(d) > 0) s += w * zz(d) * zz(d) / var(d);
    }
    return s;
  };
  const auto ob = refine_objective(prior, z, cs, w);
  EXPECT_NEAR(ob.loss, objective(z), 1e-9 * ob.loss);
  for (int d = 0; d < z.size(); ++d) {
    LatentCode zp = z, zm = z;
    zp(d) += 1e-5;
    zm(d) -= 1e-5;
    const double fd = (objective(zp) - objective(zm)) / 2e-5;
    EXPECT_NEAR(ob.grad(d), fd, 1e-4 * std::max(std::fabs(fd), 1e-3)) << "d=" << d;
  }
  // Weight zero is the bare touch loss.
  EXPECT_EQ(refine_objective(prior, z, cs, 0.0).loss, latent_loss(prior, z, cs).loss);

  // With no constraints the penalty alone pulls the code toward zero.
  const auto st = refine_latent_stats(prior, z, ConstraintSet(prior.dims()), {10, 1e-3, 5, 0.0, 1.0});
  EXPECT_LT(st.z.norm(), z.norm());
  EXPECT_LE(st.final_loss, st.initial_loss);
}

TEST(DirectEdit, ChangesExactlyConstrainedCells) {
  ConstraintSet cs({8, 8, 8});
  cs.add(hit_along_x(3, 4, 5));
  const VoxelGrid g({8, 8, 8}, 0.5f);
  const auto e = direct_edit(g, cs);
  int changed = 0;
  for (std::size_t i = 0; i < g.size(); ++i) changed += e[i] != g[i];
  EXPECT_EQ(changed, 6);
  EXPECT_EQ(direct_edit(e, cs), e);
  EXPECT_EQ(direct_edit(g, ConstraintSet({8, 8, 8})), g);
  EXPECT_EQ(touch_loss(e, cs), 0.0);
}

TEST(PatchCells, ContactSamplesLandInsideSurface) {
  // Flat wall at x = 4.5 (voxel units, unit scale); pad pushed 0.3 along +x.
  HeightPatch p;
  p.spec = SensorSpec{3.0, 3.0, 7, 7, 3};
  p.press_depth = 0.3;
  p.height = Field::Constant(7, 7, 0.3);
  p.height(0, 0) = 0.01;  // out of contact
  p.pose.origin = Vec3(4.5, 4, 4);
  p.pose.normal = Vec3(1, 0, 0);
  p.pose.axis_u = Vec3(0, 1, 0);
  p.pose.axis_v = Vec3(0, 0, 1);
  const auto cells = patch_cells(p, VoxelFrame{}, {10, 10, 10});
  ASSERT_FALSE(cells.empty());
  for (const Cell& c : cells) EXPECT_EQ(c[0], 5);
  // Samples span y, z in 4 +- 1.29, i.e. cells 3..5 on each axis.
  EXPECT_EQ(cells.size(), 9u);
}

TEST(ConstraintLog, RoundTripReplaysRays) {
  std::mt19937_64 rng(8);
  const Dims dims{12, 12, 12};
  const auto cs = random_constraints(rng, dims, 12);
  std::stringstream ss;
  write_constraint_log(ss, cs.records());
  const auto back = read_constraint_log(ss, dims);
  ASSERT_EQ(back.size(), cs.records().size());
  for (std::size_t i = 0; i < back.size(); ++i) {
    EXPECT_EQ(back[i].hit, cs.records()[i].hit);
    EXPECT_EQ(back[i].contact, cs.records()[i].contact);
    EXPECT_EQ(back[i].ray_cells, cs.records()[i].ray_cells);
  }
  std::stringstream bad("X 1 2 3 0 0 1 2 0 0 0\n");
  EXPECT_THROW(read_constraint_log(bad, dims), Error);
}
