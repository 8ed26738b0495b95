// Acceptance suite: one PASS/FAIL line per criterion P1..P9 on stdout,
// progress on stderr. Exit status is the number of failures.

#include <chrono>
#include <cstdio>
#include <iostream>
#include <numbers>
#include <random>
#include <sstream>
#include <thread>

#include "tactoform/sim.hpp"

using namespace tactoform;

namespace {

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point t0) { return std::chrono::duration<double>(Clock::now() - t0).count(); }

int failures = 0;

void report(const char* id, bool ok, const std::string& detail) {
  std::printf("%s %s  %s\n", id, ok ? "PASS" : "FAIL", detail.c_str());
  std::fflush(stdout);
  failures += !ok;
}

std::string fmt(const char* f, auto... args) {
  char buf[512];
  std::snprintf(buf, sizeof buf, f, args...);
  return buf;
}

double rms(const Field& f) { return std::sqrt(f.square().mean()); }

// ---------------------------------------------------------------------------

void p1_poisson() {
  const int cols = 160, rows = 120;
  const double h = 0.1, len = (cols - 1) * h, wid = (rows - 1) * h, pi = std::numbers::pi;
  Field f(rows, cols), gx(rows, cols), gy(rows, cols);
  for (int i = 0; i < rows; ++i)
    for (int j = 0; j < cols; ++j) {
      const double x = j * h, y = i * h;
      f(i, j) = std::sin(pi * x / len) * std::sin(pi * y / wid);
      gx(i, j) = pi / len * std::cos(pi * x / len) * std::sin(pi * y / wid);
      gy(i, j) = pi / wid * std::sin(pi * x / len) * std::cos(pi * y / wid);
    }
  const auto t0 = Clock::now();
  const Field out = integrate_heights(gx, gy, h, h);
  const double secs = seconds_since(t0);
  const double rel = rms(out - f) / f.maxCoeff();
  report("P1", rel <= 0.01 && secs <= 1.0, fmt("eigen-dome 160x120: RMSE/peak %.5f (<= 0.01), solve %.4f s (<= 1 s)", rel, secs));
}

void p2_tactile() {
  const SensorSpec spec;
  const double R = 4.0;
  const ReflectanceLUT lut = calibrate_lut(spec, R, 50, 2024);
  std::mt19937_64 rng(99);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  double worst_g = 0.0, worst_h = 0.0;
  for (int t = 0; t < 20; ++t) {
    const SphereIndent cap{(2 * u(rng) - 1) * 3.0, (2 * u(rng) - 1) * 2.0, R, R * (0.05 + 0.25 * u(rng))};
    const Gradients exact = cap.gradient_field(spec);
    const Intensity img = render_gradients(exact.gx, exact.gy);
    const Gradients g = invert_intensity(lut, img);
    double se = 0.0;
    int n = 0;
    for (int i = 0; i < spec.res_v; ++i)
      for (int j = 0; j < spec.res_u; ++j) {
        if (!cap.in_contact(spec.u_of(j), spec.v_of(i))) continue;
        se += std::pow(g.gx(i, j) - exact.gx(i, j), 2) + std::pow(g.gy(i, j) - exact.gy(i, j), 2);
        ++n;
      }
    worst_g = std::max(worst_g, std::sqrt(se / n));
    const Field truth = cap.height_field(spec);
    const TactileFrame frame = reconstruct_frame(lut, img, spec);
    worst_h = std::max(worst_h, rms(frame.height - truth) / truth.maxCoeff());
  }
  report("P2", worst_g <= 0.05 && worst_h <= 0.02,
         fmt("20 sphere caps after 50 presses: worst gradient RMSE %.4f (<= 0.05), worst height RMSE/relief %.4f (<= 0.02)",
             worst_g, worst_h));
}

void p3_gradient() {
  std::vector<VoxelGrid> grids;
  for (const auto& e : generate_corpus(ShapeCorpusSpec::standard(16, 10, 4))) grids.push_back(e.grid);
  const ShapePrior prior = fit_prior(std::span<const VoxelGrid>(grids), 12);
  const Dims dims = prior.dims();
  std::mt19937_64 rng(31);
  std::uniform_real_distribution<double> u(-1, 1);
  std::normal_distribution<double> nz(0, 3);
  double worst = 0.0;
  int instances = 0;
  while (instances < 100) {
    ConstraintSet cs(dims);
    for (int i = 0; i < 6; ++i) {
      TouchRecord r;
      r.normal = Vec3(u(rng), u(rng), u(rng)).normalized();
      r.start = Vec3(dims[0] / 2.0, dims[1] / 2.0, dims[2] / 2.0) - 20.0 * r.normal;
      auto cells = ray_cells_from(dims, r.start, r.normal, std::nullopt, 1000);
      if (cells.size() < 3) continue;
      const std::size_t k = cells.size() / 2;
      r.hit = i % 3 != 0;
      if (r.hit) r.contact = cells[k];
      cells.resize(k);
      r.ray_cells = cells;
      cs.add(r);
    }
    if (cs.empty()) continue;
    LatentCode z(prior.latent_dim());
    for (int d = 0; d < z.size(); ++d) z(d) = nz(rng);

    // Independent path: dense double logits through the sigmoid.
    const auto loss = [&](const LatentCode& zz) {
      const Eigen::VectorXd l = prior.logits(zz);
      double s = 0.0;
      for (const Target& t : cs.targets()) s += std::pow(sigmoid(l(t.index)) - t.value, 2);
      return s;
    };
    const LatentLoss ll = latent_loss(prior, z, cs);
    Eigen::VectorXd fd(z.size());
    for (int d = 0; d < z.size(); ++d) {
      LatentCode zp = z, zm = z;
      zp(d) += 1e-5;
      zm(d) -= 1e-5;
      fd(d) = (loss(zp) - loss(zm)) / 2e-5;
    }
    const double scale = fd.cwiseAbs().maxCoeff();
    if (scale == 0.0) continue;
    worst = std::max(worst, (ll.grad - fd).cwiseAbs().maxCoeff() / scale);
    ++instances;
  }
  report("P3", worst <= 1e-4,
         fmt("100 random instances: worst max|grad - central FD| / max|FD| %.2e (<= 1e-4)", worst));
}

void p4_min_region() {
  std::mt19937_64 rng(404);
  std::uniform_real_distribution<double> u(0.0, 0.5);
  const int n = 64;
  int mismatches = 0;
  double worst = 0.0;
  for (int trial = 0; trial < 50; ++trial) {
    std::vector<double> f(n * n);
    for (double& v : f) v = u(rng);
    const IntegralMap im = integral_map(f, n);
    for (int k : {3, 7, 11}) {
      int bp = 0, bq = 0;
      double best = std::numeric_limits<double>::infinity();
      for (int p = 0; p + k <= n; ++p)
        for (int q = 0; q + k <= n; ++q) {
          double s = 0.0;
          for (int a = 0; a < k; ++a)
            for (int b = 0; b < k; ++b) s += f[static_cast<std::size_t>(p + a) * n + (q + b)];
          if (s < best) best = s, bp = p, bq = q;
        }
      const Region r = min_region(im, k);
      mismatches += r.p != bp || r.q != bq;
      worst = std::max(worst, std::abs(r.score - best) / best);
    }
  }
  report("P4", mismatches == 0 && worst <= 1e-9,
         fmt("50 grids 64x64, k in {3,7,11}: argmin mismatches %d, worst score rel err %.2e (<= 1e-9)", mismatches, worst));
}

void p5_registration() {
  std::mt19937_64 rng(5);
  std::uniform_real_distribution<double> u(-1.0, 1.0);
  double worst_solve = 0.0, worst_frame = 0.0;
  for (int t = 0; t < 100; ++t) {
    const Eigen::Quaterniond q(Eigen::Vector4d(u(rng), u(rng), u(rng), u(rng)).normalized());
    const Mat3 rot = q.toRotationMatrix();
    const Vec3 shift(500 * u(rng), 500 * u(rng), 500 * u(rng));
    std::array<Vec3, 3> world, robot;
    for (int i = 0; i < 3; ++i) {
      world[i] = Vec3(300 * u(rng), 300 * u(rng), 300 * u(rng));
      robot[i] = rot * world[i] + shift;
    }
    const RigidTransform x = solve_world_to_robot(world, robot);
    for (int i = 0; i < 3; ++i) worst_solve = std::max(worst_solve, (x.apply(world[i]) - robot[i]).norm());

    VoxelFrame f = VoxelFrame::tabletop(64, 0.5 + 5.0 * std::abs(u(rng)));
    f.axis_x = rot.row(0).transpose();
    f.axis_y = rot.row(1).transpose();
    f.axis_z = rot.row(2).transpose();
    f.origin_world = shift;
    const Vec3 v(64 * u(rng), 64 * u(rng), 64 * u(rng));
    worst_frame = std::max(worst_frame, (world_to_voxel(f, voxel_to_world(f, v)) - v).norm());
  }
  report("P5", worst_solve <= 1e-9 && worst_frame <= 1e-9,
         fmt("100 transforms: worst three-point residual %.2e mm, worst voxel-world round trip %.2e (<= 1e-9)", worst_solve,
             worst_frame));
}

double median(std::vector<double> v) {
  std::sort(v.begin(), v.end());
  const std::size_t m = v.size() / 2;
  return v.empty() ? std::numeric_limits<double>::quiet_NaN() : v.size() % 2 ? v[m] : 0.5 * (v[m - 1] + v[m]);
}

std::string suite_csv(const SuiteConfig& cfg, int jobs, std::shared_ptr<const ShapePrior> prior,
                      std::vector<EpisodeResult>* out = nullptr) {
  SuiteSpec spec = cfg.spec;
  spec.jobs = jobs;
  auto results = run_suite(spec, std::move(prior));
  std::ostringstream csv;
  write_suite_csv(csv, results);
  if (out) *out = std::move(results);
  return csv.str();
}

void p6_to_p8(const std::string& config_path) {
  const SuiteConfig cfg = load_suite_config(config_path);
  const int jobs = static_cast<int>(std::max(1u, std::thread::hardware_concurrency()));
  std::cerr << "default suite: " << cfg.spec.scenes.size() << " scenes x " << cfg.spec.policies.size()
            << " policies x " << cfg.spec.seeds.size() << " seeds, " << cfg.spec.touches << " touches, " << jobs
            << " workers\n";

  const auto t0 = Clock::now();
  const auto corpus = generate_corpus(*cfg.prior_corpus);
  const auto prior = std::make_shared<const ShapePrior>(fit_prior(std::span<const CorpusEntry>(corpus), cfg.prior_dim));
  const double fit_s = seconds_since(t0);
  std::cerr << "prior D=" << cfg.prior_dim << " fit in " << fit_s << " s\n";

  const auto t1 = Clock::now();
  std::vector<EpisodeResult> results;
  const std::string csv1 = suite_csv(cfg, jobs, prior, &results);
  const double suite_s = seconds_since(t1);
  std::cerr << "suite run in " << suite_s << " s\n";

  // P6: medians over every (scene, seed) episode at the last touch.
  std::map<Policy, std::vector<double>> last;
  std::map<std::string, std::vector<double>> random_by_scene;
  int errors = 0;
  for (const auto& r : results) {
    if (!r.error.empty() || static_cast<int>(r.steps.size()) != cfg.spec.touches + 1) {
      ++errors;
      continue;
    }
    last[r.policy].push_back(r.steps.back().cd_sum);
    if (r.policy == Policy::Random) random_by_scene[r.scene].push_back(r.steps.back().cd_sum);
  }
  std::vector<double> random_scene_means;
  for (const auto& [scene, v] : random_by_scene) {
    double s = 0.0;
    for (double x : v) s += x;
    random_scene_means.push_back(s / v.size());
  }
  const double m_active = median(last[Policy::Active]), m_random = median(last[Policy::Random]),
               m_direct = median(last[Policy::DirectEdit]);
  const bool header_ok = csv1.rfind(std::string(kSuiteCsvHeader) + "\n", 0) == 0;
  const double total_s = fit_s + suite_s;
  report("P6",
         errors == 0 && header_ok && m_active < m_random && m_active < m_direct && total_s <= 1800.0 &&
             cfg.spec.scenes.size() >= 10 && cfg.spec.seeds.size() >= 3,
         fmt("median CD at touch %d: active %.1f < random %.1f, refinement %.1f < direct edit %.1f; random by scene-mean "
             "%.1f; %zu episodes, %d failed; prior fit + suite %.0f s (<= 1800 s)",
             cfg.spec.touches, m_active, m_random, m_active, m_direct, median(random_scene_means), results.size(), errors,
             total_s));

  // P7: vision fit (noiseless depth) against the mean shape, per scene.
  int better = 0, scenes = 0;
  for (const Scene& s : cfg.spec.scenes) {
    if (s.depth_sigma_mm != 0.0) continue;
    const auto it = std::find_if(results.begin(), results.end(),
                                 [&](const EpisodeResult& r) { return r.scene == s.name && r.error.empty(); });
    if (it == results.end()) continue;
    const VoxelGrid truth = s.truth();
    const double mean_cd = chamfer_distance(extract_surface(prior->decode(prior->zero_code(), s.frame())), extract_surface(truth));
    better += it->steps.front().cd_sum < mean_cd;
    ++scenes;
  }
  report("P7", scenes >= 10 && better >= 0.8 * scenes,
         fmt("vision CD below decode(0) CD on %d of %d noiseless scenes (>= 80%%)", better, scenes));

  // P8: the same suite again with a different worker count.
  const std::string csv2 = suite_csv(cfg, jobs == 1 ? 2 : 1, prior);
  report("P8", csv1 == csv2,
         fmt("default suite rerun (workers %d vs %d): %zu vs %zu bytes, %s", jobs, jobs == 1 ? 2 : 1, csv1.size(),
             csv2.size(), csv1 == csv2 ? "identical" : "different"));
}

void p9_chamfer() {
  std::mt19937_64 rng(909);
  std::uniform_real_distribution<double> u(-50.0, 50.0);
  std::uniform_int_distribution<int> size(1, 400);
  double worst = 0.0;
  for (int t = 0; t < 50; ++t) {
    PointCloud a, b;
    const int na = size(rng), nb = size(rng);
    for (int i = 0; i < na; ++i) a.points.emplace_back(u(rng), u(rng), u(rng));
    for (int i = 0; i < nb; ++i) b.points.emplace_back(u(rng), u(rng), u(rng));
    // Some pairs on a voxel lattice, where ties and zero distances occur.
    if (t % 2) {
      for (auto* c : {&a, &b})
        for (Vec3& p : c->points) p = (p / 3.0).array().round().matrix() * 3.0;
    }
    const auto directed = [](const PointCloud& from, const PointCloud& to) {
      double s = 0.0;
      for (const Vec3& p : from.points) {
        double best = std::numeric_limits<double>::infinity();
        for (const Vec3& q : to.points) best = std::min(best, (p - q).norm());
        s += best;
      }
      return s;
    };
    const double ab = directed(a, b), ba = directed(b, a);
    const ChamferResult got = chamfer(a, b);
    const double want = ab + ba, want_n = ab / na + ba / nb;
    worst = std::max({worst, std::abs(got.sum - want) / want, std::abs(got.normalized - want_n) / want_n});
  }
  report("P9", worst <= 1e-9, fmt("50 random cloud pairs: worst rel err vs brute force %.2e (<= 1e-9)", worst));
}

}  // namespace

int main(int argc, char** argv) {
  const std::string config = argc > 1 ? argv[1] : TACTOFORM_DEFAULT_SUITE;
  const auto step = [](const char* id, auto fn) {
    std::cerr << "running " << id << "\n";
    try {
      fn();
    } catch (const std::exception& e) {
      report(id, false, std::string("threw: ") + e.what());
    }
  };
  step("P1", p1_poisson);
  step("P2", p2_tactile);
  step("P3", p3_gradient);
  step("P4", p4_min_region);
  step("P5", p5_registration);
  step("P6-P8", [&] { p6_to_p8(config); });
  step("P9", p9_chamfer);
  std::printf("%d failed\n", failures);
  return failures;
}
