#pragma once

#include <algorithm>
#include <array>
#include <atomic>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <memory>
#include <mutex>
#include <optional>
#include <ostream>
#include <random>
#include <string>
#include <thread>
#include <vector>

#include <json.hpp>

#include "tactoform/policy.hpp"
#include "tactoform/prior.hpp"
#include "tactoform/refine.hpp"
#include "tactoform/shapes.hpp"
#include "tactoform/tactile.hpp"
#include "tactoform/vision.hpp"

namespace tactoform {

struct Scene {
  std::string name = "scene";
  int resolution = 64;
  double voxel_mm = 3.0;
  double camera_height_mm = 457.2;
  double camera_tilt_deg = 30.0;
  SensorSpec sensor;
  ShapeParams shape;
  double depth_sigma_mm = 0.0;
  bool transparent = false;
  double press_depth_mm = 1.0;
  std::uint64_t seed = 0;
  // Optional world/robot point triples for registering the robot base.
  std::optional<std::pair<std::array<Vec3, 3>, std::array<Vec3, 3>>> calibration;

  VoxelFrame frame() const { return VoxelFrame::tabletop(resolution, voxel_mm); }

  std::optional<RigidTransform> world_to_robot() const {
    if (!calibration) return std::nullopt;
    return solve_world_to_robot(calibration->first, calibration->second);
  }

  void validate() const {
    if (resolution < 8) throw Error(ErrorCode::BadScene, "scene resolution must be >= 8");
    if (!(voxel_mm > 0.0)) throw Error(ErrorCode::BadScene, "voxel_mm must be positive");
    if (!(press_depth_mm > 0.0)) throw Error(ErrorCode::BadScene, "press depth must be positive");
    if (!(depth_sigma_mm >= 0.0)) throw Error(ErrorCode::BadScene, "depth noise must be non-negative");
    try {
      sensor.validate();
      shape.check_fits(resolution);
      world_to_robot();
    } catch (const Error& e) {
      throw Error(ErrorCode::BadScene, e.what());
    }
  }

  VoxelGrid truth() const { return rasterize(shape, resolution, frame()); }
  Camera camera() const {
    return Camera::tabletop(frame(), {resolution, resolution, resolution}, camera_height_mm, camera_tilt_deg);
  }
};

inline Scene scene_from_json(const nlohmann::json& j) {
  try {
    Scene s;
    s.name = j.value("name", s.name);
    s.resolution = j.value("resolution", s.resolution);
    s.voxel_mm = j.value("voxel_mm", s.voxel_mm);
    if (j.contains("camera")) {
      s.camera_height_mm = j["camera"].value("height_mm", s.camera_height_mm);
      s.camera_tilt_deg = j["camera"].value("tilt_deg", s.camera_tilt_deg);
    }
    if (j.contains("sensor")) {
      const auto& js = j["sensor"];
      s.sensor.contact_width = js.value("w_mm", s.sensor.contact_width);
      s.sensor.contact_height = js.value("h_mm", s.sensor.contact_height);
      if (js.contains("res")) {
        s.sensor.res_u = js["res"].at(0).get<int>();
        s.sensor.res_v = js["res"].at(1).get<int>();
      }
      s.sensor.footprint = js.value("k_voxels", s.sensor.footprint);
      s.press_depth_mm = js.value("press_mm", s.press_depth_mm);
    }
    s.shape = shape_from_json(j.at("shape"), s.resolution);
    if (j.contains("noise")) {
      s.depth_sigma_mm = j["noise"].value("depth_sigma_mm", 0.0);
      s.transparent = j["noise"].value("transparent", false);
    }
    s.seed = j.value("seed", std::uint64_t{0});
    if (j.contains("calibration")) {
      const auto triple = [](const nlohmann::json& a) {
        if (a.size() != 3) throw Error(ErrorCode::BadScene, "calibration needs three points per frame");
        std::array<Vec3, 3> pts;
        for (int i = 0; i < 3; ++i) pts[i] = Vec3(a[i].at(0).get<double>(), a[i].at(1).get<double>(), a[i].at(2).get<double>());
        return pts;
      };
      s.calibration.emplace(triple(j["calibration"].at("world")), triple(j["calibration"].at("robot")));
    }
    s.validate();
    return s;
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorCode::BadScene, e.what());
  } catch (const Error& e) {
    if (e.code() == ErrorCode::BadScene) throw;
    throw Error(ErrorCode::BadScene, e.what());
  }
}

inline nlohmann::json scene_to_json(const Scene& s) {
  nlohmann::json j{{"name", s.name},
                   {"resolution", s.resolution},
                   {"voxel_mm", s.voxel_mm},
                   {"camera", {{"height_mm", s.camera_height_mm}, {"tilt_deg", s.camera_tilt_deg}}},
                   {"sensor",
                    {{"w_mm", s.sensor.contact_width},
                     {"h_mm", s.sensor.contact_height},
                     {"res", {s.sensor.res_u, s.sensor.res_v}},
                     {"k_voxels", s.sensor.footprint},
                     {"press_mm", s.press_depth_mm}}},
                   {"shape", shape_to_json(s.shape)},
                   {"noise", {{"depth_sigma_mm", s.depth_sigma_mm}, {"transparent", s.transparent}}},
                   {"seed", s.seed}};
  if (s.calibration) {
    const auto pts = [](const std::array<Vec3, 3>& a) {
      nlohmann::json out = nlohmann::json::array();
      for (const Vec3& p : a) out.push_back({p.x(), p.y(), p.z()});
      return out;
    };
    j["calibration"] = {{"world", pts(s.calibration->first)}, {"robot", pts(s.calibration->second)}};
  }
  return j;
}

inline Scene load_scene(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw Error(ErrorCode::IoError, "cannot open scene " + path);
  nlohmann::json j;
  try {
    in >> j;
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorCode::BadScene, e.what());
  }
  return scene_from_json(j);
}

inline DepthMap render_depth(const Scene& scene, std::uint64_t noise_seed) {
  DepthNoise noise;
  noise.sigma_mm = scene.depth_sigma_mm;
  noise.seed = noise_seed;
  const VoxelGrid truth = scene.truth();
  if (scene.transparent) {
    noise.transparent.assign(truth.size(), 0);
    for (std::size_t i = 0; i < truth.size(); ++i) noise.transparent[i] = truth[i] >= 0.5f;
  }
  return render_depth(truth, scene.camera(), noise);
}

// ---------------------------------------------------------------------------
// Touch execution.

/// Ray-marches the analytic shape along `dir` (voxel units) from `origin`
/// and returns the first inside parameter in [t_lo, t_hi], or nullopt.
inline std::optional<double> first_inside(const ShapeParams& shape, const Vec3& origin, const Vec3& dir,
                                          double t_lo, double t_hi, double step = 0.05) {
  if (shape.inside(origin + t_lo * dir)) return t_lo;
  double prev = t_lo;
  for (double t = t_lo + step; t <= t_hi + 1e-12; t += step) {
    if (!shape.inside(origin + t * dir)) {
      prev = t;
      continue;
    }
    double a = prev, b = t;
    for (int i = 0; i < 30; ++i) {
      const double m = 0.5 * (a + b);
      (shape.inside(origin + m * dir) ? b : a) = m;
    }
    return b;
  }
  return std::nullopt;
}

/// Simulated press: the pad travels along the plan normal until its first
/// point meets the true surface, then `press_depth_mm` further. The
/// indentation map is shaded, inverted through the LUT and integrated; the
/// integrated relief is shifted so its peak equals the press depth, since
/// the zero-border integration cannot see a uniform offset.
inline HeightPatch sense_patch(const Scene& scene, const ReflectanceLUT& lut, const Vec3& line_origin,
                               const Vec3& n, const Vec3& e1, const Vec3& e2, double t_guess) {
  const SensorSpec& spec = scene.sensor;
  const double s = scene.voxel_mm;
  const double half_diag = 0.5 * std::hypot(spec.contact_width, spec.contact_height) / s;
  const double t_lo = t_guess - half_diag - 2.0, t_hi = t_guess + half_diag + 2.0;
  Field dist(spec.res_v, spec.res_u);
  double d_min = std::numeric_limits<double>::infinity();
  for (int r = 0; r < spec.res_v; ++r) {
    for (int c = 0; c < spec.res_u; ++c) {
      const Vec3 o = line_origin + (spec.u_of(c) / s) * e1 + (spec.v_of(r) / s) * e2;
      const auto t = first_inside(scene.shape, o, n, t_lo, t_hi);
      dist(r, c) = t ? *t : std::numeric_limits<double>::infinity();
      d_min = std::min(d_min, dist(r, c));
    }
  }
  const double press = scene.press_depth_mm;
  Field indent = Field::Zero(spec.res_v, spec.res_u);
  if (std::isfinite(d_min)) {
    for (Eigen::Index i = 0; i < indent.size(); ++i) {
      if (std::isfinite(dist(i))) indent(i) = std::max(0.0, press - (dist(i) - d_min) * s);
    }
  }
  const Intensity img = render_tactile(indent, spec);
  const TactileFrame frame = reconstruct_frame(lut, img, spec);
  HeightPatch patch;
  patch.spec = spec;
  patch.press_depth = press;
  patch.height = frame.height + (press - frame.height.maxCoeff());
  const VoxelFrame vf = scene.frame();
  patch.pose.origin = voxel_to_world(vf, line_origin + (std::isfinite(d_min) ? d_min : t_guess) * n);
  patch.pose.axis_u = voxel_dir_to_world(vf, e1);
  patch.pose.axis_v = voxel_dir_to_world(vf, e2);
  patch.pose.normal = voxel_dir_to_world(vf, n);
  return patch;
}

/// Marches the plan's approach through the ground truth. A hit records the
/// first truth-occupied cell, the free cells before it and a tactile height
/// patch; a miss records every cell up to 1.2x the start-to-center distance.
inline TouchRecord execute_touch(const Scene& scene, const VoxelGrid& truth, const TouchPlan& plan,
                                 const ReflectanceLUT* lut) {
  const Dims& dims = truth.dims();
  for (int a = 0; a < 3; ++a) {
    if (!(plan.center[a] >= -0.5 && plan.center[a] <= dims[a] - 0.5) || !std::isfinite(plan.start[a])) {
      throw Error(ErrorCode::PlanOutOfBounds, "touch plan leaves the grid");
    }
  }
  TouchRecord rec;
  rec.normal = plan.normal.normalized();
  rec.start = plan.start;
  const double limit = 1.2 * (plan.center - plan.start).norm();
  double t_hit = 0.0;
  traverse_cells(dims, rec.start, rec.normal, limit, [&](const Cell& c, double t0, double) {
    if (truth.at(c) >= 0.5f) {
      rec.hit = true;
      rec.contact = c;
      t_hit = t0;
      return false;
    }
    rec.ray_cells.push_back(c);
    return true;
  });
  if (rec.hit && lut) {
    const auto [e1, e2] = plane_axes(plan.yaw, rec.normal);
    rec.height_patch = sense_patch(scene, *lut, rec.start, rec.normal, e1, e2, t_hit);
  }
  return rec;
}

// ---------------------------------------------------------------------------
// Episodes.

enum class Policy { Active, Random, Human, DirectEdit };

inline const char* policy_name(Policy p) {
  switch (p) {
    case Policy::Active: return "active";
    case Policy::Random: return "random";
    case Policy::Human: return "human";
    case Policy::DirectEdit: return "direct-edit";
  }
  return "?";
}

inline Policy policy_from_name(const std::string& name) {
  for (Policy p : {Policy::Active, Policy::Random, Policy::Human, Policy::DirectEdit}) {
    if (name == policy_name(p)) return p;
  }
  throw Error(ErrorCode::InvalidArgument, "unknown policy '" + name + "'");
}

struct EpisodeOptions {
  RefineOptions refine{10, 1000.0, 5, 0.0, 1.0};
  VisionOptions vision;
  bool anchor_vision = true;  // keep the camera constraints during touch refinement
  bool tactile_patches = true;
  bool timing = false;         // record wall time; off keeps output byte-stable
  int lut_presses = 50;
  double lut_ball_mm = 4.0;
};

struct TouchStep {
  int index = 0;
  std::optional<TouchPlan> plan;
  std::optional<TouchRecord> record;
  double cd_sum = 0.0;
  double cd_norm = 0.0;
  double ms = 0.0;
  std::string note;  // why a touch was skipped, if it was
};

struct EpisodeResult {
  std::string scene;
  Policy policy = Policy::Active;
  std::uint64_t seed = 0;
  std::vector<TouchStep> steps;
  VoxelGrid final_grid;
  std::string error;
};

/// Shared stepper behind run_episode and the service sessions: vision
/// initialization, then one touch at a time.
class Episode {
 public:
  Episode(Scene scene, std::shared_ptr<const ShapePrior> prior, Policy policy, std::uint64_t seed,
          EpisodeOptions opt = {})
      : scene_(std::move(scene)), prior_(std::move(prior)), policy_(policy), seed_(seed), opt_(opt),
        rng_(seed ^ 0x9e3779b97f4a7c15ull) {
    if (!prior_) throw Error(ErrorCode::UnknownPrior, "no prior");
    scene_.validate();
    if (prior_->dims() != Dims{scene_.resolution, scene_.resolution, scene_.resolution}) {
      throw Error(ErrorCode::DimMismatch, "prior resolution does not match the scene");
    }
    const auto t0 = std::chrono::steady_clock::now();
    frame_ = scene_.frame();
    truth_ = scene_.truth();
    truth_surface_ = extract_surface(truth_);
    if (opt_.tactile_patches) {
      lut_ = std::make_shared<ReflectanceLUT>(calibrate_lut(scene_.sensor, opt_.lut_ball_mm, opt_.lut_presses, scene_.seed));
    }
    vision_ = vision_constraints(render_depth(scene_, seed_), frame_, truth_.dims());
    z_ = refine_latent(*prior_, prior_->zero_code(), vision_, opt_.vision.refine());
    prediction_ = prior_->decode(z_, frame_);
    vision_grid_ = prediction_;
    touches_ = ConstraintSet(truth_.dims(), frame_);
    if (opt_.anchor_vision) refine_set_ = vision_;
    else refine_set_ = ConstraintSet(truth_.dims(), frame_);
    record_step(std::nullopt, std::nullopt, t0, {});
  }

  const Scene& scene() const { return scene_; }
  Policy policy() const { return policy_; }
  std::uint64_t seed() const { return seed_; }
  const VoxelFrame& frame() const { return frame_; }
  const VoxelGrid& truth() const { return truth_; }
  const PointCloud& truth_surface() const { return truth_surface_; }
  const VoxelGrid& prediction() const { return prediction_; }
  const LatentCode& latent() const { return z_; }
  const ConstraintSet& touches() const { return touches_; }
  const std::vector<TouchStep>& steps() const { return steps_; }
  int touch_count() const { return static_cast<int>(steps_.size()) - 1; }

  /// The prediction as the policies see it: cells already measured by a
  /// touch carry their measured value, so they no longer look uncertain.
  VoxelGrid planning_grid() const { return touches_.empty() ? prediction_ : direct_edit(prediction_, touches_); }

  /// The active policy's choice on the planning grid.
  TouchPlan suggest() const { return next_touch(planning_grid(), scene_.sensor, executed_); }

  /// The episode policy's choice; Human has none and throws.
  TouchPlan choose() {
    switch (policy_) {
      case Policy::Active:
      case Policy::DirectEdit: return suggest();
      case Policy::Random: return random_touch(planning_grid(), scene_.sensor, rng_);
      case Policy::Human: break;
    }
    throw Error(ErrorCode::InvalidArgument, "human policy needs an explicit plan");
  }

  /// Executes `plan` on the ground truth and updates the prediction.
  const TouchStep& touch(const TouchPlan& plan) {
    const auto t0 = std::chrono::steady_clock::now();
    TouchRecord rec = execute_touch(scene_, truth_, plan, lut_.get());
    executed_.push_back(plan);
    touches_.add(rec);
    refine_set_.add(rec);
    if (policy_ == Policy::DirectEdit) {
      prediction_ = direct_edit(vision_grid_, touches_);
    } else {
      z_ = refine_latent(*prior_, z_, refine_set_, opt_.refine);
      prediction_ = prior_->decode(z_, frame_);
    }
    record_step(plan, std::move(rec), t0, {});
    return steps_.back();
  }

  /// One policy step; when no candidate exists the prediction is kept and
  /// the step notes why.
  const TouchStep& step() {
    const auto t0 = std::chrono::steady_clock::now();
    TouchPlan plan;
    try {
      plan = choose();
    } catch (const Error& e) {
      if (e.code() != ErrorCode::NoTouchableRegion) throw;
      record_step(std::nullopt, std::nullopt, t0, error_name(e.code()));
      return steps_.back();
    }
    return touch(plan);
  }

  EpisodeResult result() const { return {scene_.name, policy_, seed_, steps_, prediction_, {}}; }

 private:
  void record_step(std::optional<TouchPlan> plan, std::optional<TouchRecord> rec,
                   std::chrono::steady_clock::time_point t0, std::string note) {
    TouchStep st;
    st.index = static_cast<int>(steps_.size());
    st.plan = std::move(plan);
    st.record = std::move(rec);
    st.note = std::move(note);
    const PointCloud pred = surface_or_empty(prediction_);
    if (pred.empty()) {
      st.cd_sum = st.cd_norm = std::numeric_limits<double>::infinity();
    } else {
      const ChamferResult cd = chamfer(pred, truth_surface_);
      st.cd_sum = cd.sum;
      st.cd_norm = cd.normalized;
    }
    if (opt_.timing) {
      st.ms = std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - t0).count();
    }
    steps_.push_back(std::move(st));
  }

  static PointCloud surface_or_empty(const VoxelGrid& g) {
    try {
      return extract_surface(g);
    } catch (const Error& e) {
      if (e.code() != ErrorCode::EmptySurface) throw;
      return {};
    }
  }

  Scene scene_;
  std::shared_ptr<const ShapePrior> prior_;
  Policy policy_;
  std::uint64_t seed_;
  EpisodeOptions opt_;
  std::mt19937_64 rng_;
  VoxelFrame frame_;
  VoxelGrid truth_;
  PointCloud truth_surface_;
  std::shared_ptr<ReflectanceLUT> lut_;
  ConstraintSet vision_;
  ConstraintSet touches_;
  ConstraintSet refine_set_;
  LatentCode z_;
  VoxelGrid prediction_;
  VoxelGrid vision_grid_;
  std::vector<TouchPlan> executed_;
  std::vector<TouchStep> steps_;
};

/// Runs vision plus `n_touches` policy steps. Human episodes take their
/// plans from `human_plans`, one per touch.
inline EpisodeResult run_episode(const Scene& scene, std::shared_ptr<const ShapePrior> prior, Policy policy,
                                 int n_touches, std::uint64_t seed, const EpisodeOptions& opt = {},
                                 const std::vector<TouchPlan>& human_plans = {}) {
  Episode ep(scene, std::move(prior), policy, seed, opt);
  for (int i = 0; i < n_touches; ++i) {
    if (policy == Policy::Human) {
      if (static_cast<std::size_t>(i) >= human_plans.size()) {
        throw Error(ErrorCode::InvalidArgument, "not enough human plans for the requested touches");
      }
      ep.touch(human_plans[static_cast<std::size_t>(i)]);
    } else {
      ep.step();
    }
  }
  return ep.result();
}

// ---------------------------------------------------------------------------
// Suites.

struct SuiteSpec {
  std::vector<Scene> scenes;
  std::vector<Policy> policies{Policy::Active, Policy::Random, Policy::DirectEdit};
  std::vector<std::uint64_t> seeds{1, 2, 3};
  int touches = 10;
  EpisodeOptions options;
  int jobs = 1;
};

/// A suite as read from a config file, plus the prior recipe used when no
/// trained prior file is given.
struct SuiteConfig {
  SuiteSpec spec;
  std::optional<ShapeCorpusSpec> prior_corpus;
  int prior_dim = 50;
};

/// Config keys: "scenes" (scene file paths, relative to `base_dir`, or
/// inline scene objects), "scene_corpus" (a corpus spec whose shapes become
/// scenes), "voxel_mm", "policies", "seeds", "touches", "tactile_patches",
/// and "prior": {"corpus": spec, "dim": D}.
inline SuiteConfig suite_config_from_json(const nlohmann::json& j, const std::string& base_dir = ".") {
  SuiteConfig cfg;
  SuiteSpec& spec = cfg.spec;
  try {
    if (j.contains("scenes")) {
      for (const auto& e : j["scenes"]) {
        spec.scenes.push_back(e.is_string() ? load_scene((std::filesystem::path(base_dir) / e.get<std::string>()).string())
                                             : scene_from_json(e));
      }
    }
    if (j.contains("scene_corpus")) {
      const ShapeCorpusSpec cs = corpus_spec_from_json(j["scene_corpus"]);
      std::vector<int> per_family(5, 0);
      for (const CorpusEntry& e : generate_corpus(cs)) {
        Scene s;
        const int f = static_cast<int>(e.shape.family);
        s.name = std::string(family_name(e.shape.family)) + "_" + std::to_string(per_family[f]++);
        s.resolution = cs.resolution;
        s.voxel_mm = j.value("voxel_mm", s.voxel_mm);
        s.shape = e.shape;
        s.validate();
        spec.scenes.push_back(std::move(s));
      }
    }
    if (spec.scenes.empty()) throw Error(ErrorCode::InvalidArgument, "suite has no scenes");
    if (j.contains("policies")) {
      spec.policies.clear();
      for (const auto& p : j["policies"]) spec.policies.push_back(policy_from_name(p.get<std::string>()));
    }
    if (std::find(spec.policies.begin(), spec.policies.end(), Policy::Human) != spec.policies.end()) {
      throw Error(ErrorCode::InvalidArgument, "suites cannot run the human policy");
    }
    if (j.contains("seeds")) spec.seeds = j["seeds"].get<std::vector<std::uint64_t>>();
    spec.touches = j.value("touches", spec.touches);
    if (spec.touches < 0) throw Error(ErrorCode::InvalidArgument, "touches must be >= 0");
    spec.options.tactile_patches = j.value("tactile_patches", spec.options.tactile_patches);
    if (j.contains("prior")) {
      cfg.prior_corpus = corpus_spec_from_json(j["prior"].at("corpus"));
      cfg.prior_dim = j["prior"].value("dim", cfg.prior_dim);
    }
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorCode::InvalidArgument, std::string("suite config: ") + e.what());
  }
  return cfg;
}

inline SuiteConfig load_suite_config(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw Error(ErrorCode::IoError, "cannot open suite config " + path);
  nlohmann::json j;
  try {
    in >> j;
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorCode::InvalidArgument, std::string("suite config: ") + e.what());
  }
  const auto dir = std::filesystem::path(path).parent_path();
  return suite_config_from_json(j, dir.empty() ? "." : dir.string());
}

/// Scenes x policies x seeds, fanned out over `jobs` workers. Results come
/// back in that nested order regardless of scheduling; an episode that
/// throws yields a result carrying its error.
inline std::vector<EpisodeResult> run_suite(const SuiteSpec& spec, std::shared_ptr<const ShapePrior> prior) {
  struct Job {
    std::size_t scene;
    Policy policy;
    std::uint64_t seed;
  };
  std::vector<Job> jobs;
  for (std::size_t s = 0; s < spec.scenes.size(); ++s)
    for (Policy p : spec.policies)
      for (std::uint64_t seed : spec.seeds) jobs.push_back({s, p, seed});
  std::vector<EpisodeResult> results(jobs.size());
  std::atomic<std::size_t> next{0};
  const auto worker = [&] {
    for (std::size_t i = next++; i < jobs.size(); i = next++) {
      const Job& j = jobs[i];
      try {
        results[i] = run_episode(spec.scenes[j.scene], prior, j.policy, spec.touches, j.seed, spec.options);
      } catch (const std::exception& e) {
        results[i].scene = spec.scenes[j.scene].name;
        results[i].policy = j.policy;
        results[i].seed = j.seed;
        results[i].error = e.what();
      }
    }
  };
  const int n_workers = std::max(1, std::min<int>(spec.jobs, static_cast<int>(jobs.size())));
  std::vector<std::thread> pool;
  for (int w = 1; w < n_workers; ++w) pool.emplace_back(worker);
  worker();
  for (auto& t : pool) t.join();
  return results;
}

inline constexpr const char* kSuiteCsvHeader = "scene,policy,seed,touch_index,cd_sum,cd_norm,ms";

namespace detail {

inline std::string fmt(double v, int digits) {
  if (std::isnan(v)) return "nan";
  if (std::isinf(v)) return v > 0 ? "inf" : "-inf";
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.*f", digits, v);
  return buf;
}

inline double median(std::vector<double> v) {
  if (v.empty()) return std::numeric_limits<double>::quiet_NaN();
  std::sort(v.begin(), v.end());
  const std::size_t m = v.size() / 2;
  return v.size() % 2 ? v[m] : 0.5 * (v[m - 1] + v[m]);
}

}  // namespace detail

/// One row per episode touch. Random-policy curves additionally get "mean"
/// and "median" rows per scene and touch index over their seeds. Failed
/// episodes emit a single row with NaN distances.
inline void write_suite_csv(std::ostream& out, const std::vector<EpisodeResult>& results) {
  out << kSuiteCsvHeader << '\n';
  const auto row = [&](const std::string& scene, Policy p, const std::string& seed, int idx, double cd, double cdn,
                       double ms) {
    out << scene << ',' << policy_name(p) << ',' << seed << ',' << idx << ',' << detail::fmt(cd, 6) << ','
        << detail::fmt(cdn, 6) << ',' << detail::fmt(ms, 3) << '\n';
  };
  const double nan = std::numeric_limits<double>::quiet_NaN();
  for (std::size_t i = 0; i < results.size(); ++i) {
    const EpisodeResult& r = results[i];
    if (!r.error.empty()) {
      row(r.scene, r.policy, std::to_string(r.seed), 0, nan, nan, nan);
      continue;
    }
    for (const TouchStep& st : r.steps) row(r.scene, r.policy, std::to_string(r.seed), st.index, st.cd_sum, st.cd_norm, st.ms);

    // Aggregate after the last seed of a random-policy block.
    const bool block_end = i + 1 == results.size() || results[i + 1].scene != r.scene || results[i + 1].policy != r.policy;
    if (r.policy != Policy::Random || !block_end) continue;
    std::size_t first = i;
    while (first > 0 && results[first - 1].scene == r.scene && results[first - 1].policy == r.policy) --first;
    std::size_t touches = 0;
    for (std::size_t k = first; k <= i; ++k) touches = std::max(touches, results[k].steps.size());
    for (const char* kind : {"mean", "median"}) {
      for (std::size_t t = 0; t < touches; ++t) {
        std::vector<double> cd, cdn, ms;
        for (std::size_t k = first; k <= i; ++k) {
          if (!results[k].error.empty() || t >= results[k].steps.size()) continue;
          cd.push_back(results[k].steps[t].cd_sum);
          cdn.push_back(results[k].steps[t].cd_norm);
          ms.push_back(results[k].steps[t].ms);
        }
        if (cd.empty()) continue;
        const auto agg = [&](const std::vector<double>& v) {
          if (std::string(kind) == "median") return detail::median(v);
          double s = 0.0;
          for (double x : v) s += x;
          return s / static_cast<double>(v.size());
        };
        row(r.scene, r.policy, kind, static_cast<int>(t), agg(cd), agg(cdn), agg(ms));
      }
    }
  }
}

}  // namespace tactoform
