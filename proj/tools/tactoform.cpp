// tactoform command-line entry point.
//
// Exit codes: 0 success, 1 usage error, 2 runtime error. Diagnostics go to
// stderr; data goes to the files named by flags or to stdout.

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>

#include "tactoform/service.hpp"

#include <CLI11.hpp>

using namespace tactoform;
namespace fs = std::filesystem;

namespace {

struct UsageError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

/// TACTOFORM_SEED, when set, replaces every seed taken from flags or
/// config files.
std::optional<std::uint64_t> env_seed() {
  const char* v = std::getenv("TACTOFORM_SEED");
  if (!v || !*v) return std::nullopt;
  char* end = nullptr;
  const unsigned long long s = std::strtoull(v, &end, 10);
  if (*end != '\0') throw UsageError("TACTOFORM_SEED must be a non-negative integer");
  return s;
}

std::uint64_t seed_or_env(std::uint64_t seed) { return env_seed().value_or(seed); }

nlohmann::json read_json(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw Error(ErrorCode::IoError, "cannot open " + path);
  try {
    return nlohmann::json::parse(in);
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorCode::InvalidArgument, path + ": " + e.what());
  }
}

void write_text(const std::string& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary);
  out << text;
  if (!out) throw Error(ErrorCode::IoError, "cannot write " + path);
}

std::vector<Family> parse_families(const std::vector<std::string>& names) {
  std::vector<Family> out;
  for (const auto& n : names) out.push_back(family_from_name(n));
  return out;
}

ShapeCorpusSpec corpus_spec(const std::string& path, const std::vector<std::string>& families) {
  ShapeCorpusSpec spec = corpus_spec_from_json(read_json(path));
  spec.seed = seed_or_env(spec.seed);
  if (!families.empty()) spec = spec.filtered(parse_families(families));
  return spec;
}

// ---------------------------------------------------------------------------

struct GenCorpusArgs {
  std::string spec, out;
  int resolution = 64, per_family = 60;
  std::uint64_t seed = 1;
  std::vector<std::string> families;
};

int gen_corpus(const GenCorpusArgs& a) {
  ShapeCorpusSpec spec = a.spec.empty() ? ShapeCorpusSpec::standard(a.resolution, a.per_family, seed_or_env(a.seed))
                                        : corpus_spec(a.spec, {});
  if (!a.families.empty()) spec = spec.filtered(parse_families(a.families));
  const auto corpus = generate_corpus(spec);
  fs::create_directories(a.out);
  nlohmann::json index{{"resolution", spec.resolution}, {"seed", spec.seed}, {"entries", nlohmann::json::array()}};
  for (std::size_t i = 0; i < corpus.size(); ++i) {
    char name[64];
    std::snprintf(name, sizeof name, "%04zu_%s.vxg", i, family_name(corpus[i].shape.family));
    write_grid(corpus[i].grid, (fs::path(a.out) / name).string());
    index["entries"].push_back({{"file", name}, {"shape", shape_to_json(corpus[i].shape)}});
  }
  write_text((fs::path(a.out) / "index.json").string(), index.dump(2) + "\n");
  std::cerr << "wrote " << corpus.size() << " grids to " << a.out << "\n";
  return 0;
}

struct TrainArgs {
  std::string corpus, out;
  int dim = 0;
  std::vector<std::string> families;
};

int train_prior(const TrainArgs& a) {
  const auto spec = corpus_spec(a.corpus, a.families);
  const auto corpus = generate_corpus(spec);
  const ShapePrior prior = fit_prior(std::span<const CorpusEntry>(corpus), a.dim);
  write_prior(prior, a.out);
  std::cerr << "fit D=" << prior.latent_dim() << " on " << corpus.size() << " shapes at " << spec.resolution
            << "^3 -> " << a.out << "\n";
  return 0;
}

struct CalibrateArgs {
  int presses = 50, tests = 10;
  double ball_mm = 4.0;
  std::uint64_t seed = 1;
  std::string out_dir;
};

int calibrate(const CalibrateArgs& a) {
  const SensorSpec spec;
  const std::uint64_t seed = seed_or_env(a.seed);
  const ReflectanceLUT lut = calibrate_lut(spec, a.ball_mm, a.presses, seed);
  std::size_t occupied = 0;
  for (const auto& b : lut.table()) occupied += b.count > 0;

  // Held-out presses: gradient RMSE inside the contact disc and height
  // RMSE relative to the press relief.
  std::mt19937_64 rng(seed + 1);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  double worst_grad = 0.0, worst_height = 0.0;
  SphereIndent last;
  TactileFrame last_frame;
  Intensity last_img;
  for (int t = 0; t < a.tests; ++t) {
    SphereIndent ball{(2 * u(rng) - 1) * 3.0, (2 * u(rng) - 1) * 2.0, a.ball_mm, a.ball_mm * (0.05 + 0.2 * u(rng))};
    const Gradients exact = ball.gradient_field(spec);
    const Intensity img = render_gradients(exact.gx, exact.gy);
    const TactileFrame frame = reconstruct_frame(lut, img, spec);
    const Gradients g = invert_intensity(lut, img);
    double se = 0.0;
    int n = 0;
    for (int i = 0; i < spec.res_v; ++i)
      for (int j = 0; j < spec.res_u; ++j) {
        if (!ball.in_contact(spec.u_of(j), spec.v_of(i))) continue;
        se += std::pow(g.gx(i, j) - exact.gx(i, j), 2) + std::pow(g.gy(i, j) - exact.gy(i, j), 2);
        ++n;
      }
    const Field truth = ball.height_field(spec);
    worst_grad = std::max(worst_grad, n ? std::sqrt(se / n) : 0.0);
    worst_height = std::max(worst_height, std::sqrt((frame.height - truth).square().mean()) / truth.maxCoeff());
    last = ball;
    last_frame = frame;
    last_img = img;
  }

  nlohmann::json report{{"presses", a.presses},
                        {"ball_mm", a.ball_mm},
                        {"seed", seed},
                        {"bins_occupied", occupied},
                        {"bins_total", lut.table().size()},
                        {"test_presses", a.tests},
                        {"worst_gradient_rmse", worst_grad},
                        {"worst_height_rmse_rel", worst_height}};
  if (!a.out_dir.empty() && a.tests > 0) {
    fs::create_directories(a.out_dir);
    write_intensity_ppm(last_img, (fs::path(a.out_dir) / "press.ppm").string());
    write_height_pgm(last_frame.height, (fs::path(a.out_dir) / "height.pgm").string());
    write_height_pgm(last.height_field(spec), (fs::path(a.out_dir) / "height_truth.pgm").string());
  }
  std::cout << report.dump(2) << "\n";
  return 0;
}

struct RunArgs {
  std::string scene, prior, policy = "active", out, plans, grid_out, log_out;
  int touches = 10;
  std::uint64_t seed = 1;
  bool timing = false, no_patches = false;
};

int run(const RunArgs& a) {
  const Scene scene = load_scene(a.scene);
  const Policy policy = policy_from_name(a.policy);
  auto prior = std::make_shared<const ShapePrior>(read_prior(a.prior));
  EpisodeOptions opt;
  opt.timing = a.timing;
  opt.tactile_patches = !a.no_patches;
  const std::uint64_t seed = seed_or_env(a.seed);

  Episode ep(scene, prior, policy, seed, opt);
  if (policy == Policy::Human) {
    if (a.plans.empty()) throw UsageError("--policy human needs --plans");
    const nlohmann::json plans = read_json(a.plans);
    if (!plans.is_array() || static_cast<int>(plans.size()) < a.touches) {
      throw Error(ErrorCode::InvalidArgument, "plans file must list at least --touches plans");
    }
    for (int i = 0; i < a.touches; ++i) {
      const auto& p = plans[static_cast<std::size_t>(i)];
      const auto& c = p.at("center");
      ep.touch(manual_plan(ep.planning_grid(), scene.sensor, Vec3(c.at(0), c.at(1), c.at(2)), p.value("yaw", 0.0),
                           p.value("pitch", 0.0)));
    }
  } else {
    for (int i = 0; i < a.touches; ++i) ep.step();
  }

  std::ostringstream csv;
  write_suite_csv(csv, {ep.result()});
  if (a.out.empty()) std::cout << csv.str();
  else write_text(a.out, csv.str());
  if (!a.grid_out.empty()) write_grid(ep.prediction(), a.grid_out);
  if (!a.log_out.empty()) {
    std::ostringstream log;
    write_constraint_log(log, ep.touches().records());
    write_text(a.log_out, log.str());
  }
  const auto& last = ep.steps().back();
  std::cerr << scene.name << " " << policy_name(policy) << " seed " << seed << ": CD " << ep.steps().front().cd_sum
            << " -> " << last.cd_sum << " after " << ep.touch_count() << " touches\n";
  return 0;
}

struct SuiteArgs {
  std::string config, prior, out;
  int jobs = 1;
  bool timing = false;
};

int suite(const SuiteArgs& a) {
  SuiteConfig cfg = load_suite_config(a.config);
  if (const auto s = env_seed()) {
    for (std::size_t i = 0; i < cfg.spec.seeds.size(); ++i) cfg.spec.seeds[i] = *s + i;
    if (cfg.prior_corpus) cfg.prior_corpus->seed = *s;
  }
  cfg.spec.jobs = a.jobs;
  cfg.spec.options.timing = a.timing;

  std::shared_ptr<const ShapePrior> prior;
  if (!a.prior.empty()) {
    prior = std::make_shared<const ShapePrior>(read_prior(a.prior));
  } else if (cfg.prior_corpus) {
    std::cerr << "training prior (D=" << cfg.prior_dim << ") from the config's corpus\n";
    const auto corpus = generate_corpus(*cfg.prior_corpus);
    prior = std::make_shared<const ShapePrior>(fit_prior(std::span<const CorpusEntry>(corpus), cfg.prior_dim));
  } else {
    throw UsageError("suite needs --prior or a \"prior\" section in the config");
  }

  const auto results = run_suite(cfg.spec, prior);
  std::ostringstream csv;
  write_suite_csv(csv, results);
  if (a.out.empty()) std::cout << csv.str();
  else write_text(a.out, csv.str());
  std::size_t failed = 0;
  for (const auto& r : results) {
    if (r.error.empty()) continue;
    ++failed;
    std::cerr << "episode " << r.scene << " " << policy_name(r.policy) << " seed " << r.seed << " failed: " << r.error
              << "\n";
  }
  std::cerr << results.size() << " episodes, " << failed << " failed\n";
  return 0;
}

struct ServeArgs {
  std::string bind = "127.0.0.1", ui;
  int port = 7333;
  std::vector<std::string> priors;
  bool no_patches = false;
};

int serve(const ServeArgs& a) {
  std::map<std::string, std::shared_ptr<const ShapePrior>> priors;
  for (const std::string& p : a.priors) {
    const auto eq = p.find('=');
    const std::string id = eq == std::string::npos ? "default" : p.substr(0, eq);
    const std::string path = eq == std::string::npos ? p : p.substr(eq + 1);
    if (priors.count(id)) throw UsageError("prior id '" + id + "' given twice");
    priors[id] = std::make_shared<const ShapePrior>(read_prior(path));
  }
  ServiceOptions opt;
  opt.episode.tactile_patches = !a.no_patches;
  SessionService svc(std::move(priors), opt);
  httplib::Server server;
  mount_routes(server, svc, a.ui);
  std::cerr << "listening on http://" << a.bind << ":" << a.port << "\n";
  if (!server.listen(a.bind, a.port)) throw Error(ErrorCode::IoError, "cannot listen on " + a.bind + ":" + std::to_string(a.port));
  return 0;
}

struct EvalArgs {
  std::string pred, truth;
  double voxel_mm = 3.0;
};

int eval(const EvalArgs& a) {
  const VoxelGrid truth = read_grid(a.truth);
  const VoxelGrid pred = read_grid(a.pred);
  if (pred.dims() != truth.dims()) throw Error(ErrorCode::DimMismatch, "grids differ in dims");
  const Dims& d = truth.dims();
  if (d[0] != d[1] || d[1] != d[2]) throw Error(ErrorCode::DimMismatch, "eval expects cubic grids");
  const VoxelFrame frame = VoxelFrame::tabletop(d[0], a.voxel_mm);
  VoxelGrid t = truth, p = pred;
  t.set_frame(frame);
  p.set_frame(frame);
  const ChamferResult cd = chamfer(extract_surface(p), extract_surface(t));
  std::cout << nlohmann::json{{"cd_sum", cd.sum}, {"cd_norm", cd.normalized}}.dump() << "\n";
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"tactoform: visuo-tactile shape perception simulator"};
  app.require_subcommand(1);

  GenCorpusArgs gc;
  auto* c_gen = app.add_subcommand("gen-corpus", "Generate a procedural shape corpus as VXG1 grids");
  c_gen->add_option("--spec", gc.spec, "Corpus spec JSON (overrides --resolution/--per-family/--seed)")->check(CLI::ExistingFile);
  c_gen->add_option("--resolution", gc.resolution, "Grid resolution")->check(CLI::Range(8, 512));
  c_gen->add_option("--per-family", gc.per_family, "Shapes per family")->check(CLI::NonNegativeNumber);
  c_gen->add_option("--seed", gc.seed, "Corpus seed");
  c_gen->add_option("--family", gc.families, "Keep only these families (repeatable)");
  c_gen->add_option("--out", gc.out, "Output directory")->required();

  TrainArgs tr;
  auto* c_train = app.add_subcommand("train-prior", "Fit an eigenshape prior and write it as SPR1");
  c_train->add_option("--corpus", tr.corpus, "Corpus spec JSON")->required()->check(CLI::ExistingFile);
  c_train->add_option("--dim", tr.dim, "Latent dimension D")->required()->check(CLI::PositiveNumber);
  c_train->add_option("--out", tr.out, "Prior file to write")->required();
  c_train->add_option("--family", tr.families, "Train on these families only (repeatable)");

  CalibrateArgs ca;
  auto* c_cal = app.add_subcommand("calibrate", "Calibrate the tactile lookup table and report round-trip error");
  c_cal->add_option("--presses", ca.presses, "Calibration presses")->check(CLI::PositiveNumber);
  c_cal->add_option("--ball-mm", ca.ball_mm, "Calibration ball radius in mm")->check(CLI::PositiveNumber);
  c_cal->add_option("--seed", ca.seed, "Calibration seed");
  c_cal->add_option("--test-presses", ca.tests, "Held-out presses to evaluate")->check(CLI::NonNegativeNumber);
  c_cal->add_option("--out-dir", ca.out_dir, "Write the last test press as PPM/PGM here");

  RunArgs ru;
  auto* c_run = app.add_subcommand("run", "Run one episode and write its CD curve as CSV");
  c_run->add_option("--scene", ru.scene, "Scene JSON")->required()->check(CLI::ExistingFile);
  c_run->add_option("--prior", ru.prior, "Prior file (SPR1)")->required()->check(CLI::ExistingFile);
  c_run->add_option("--policy", ru.policy, "Touch policy")
      ->check(CLI::IsMember({"active", "random", "human", "direct-edit"}));
  c_run->add_option("--touches", ru.touches, "Number of touches")->check(CLI::NonNegativeNumber);
  c_run->add_option("--seed", ru.seed, "Episode seed");
  c_run->add_option("--out", ru.out, "CSV output (stdout if omitted)");
  c_run->add_option("--plans", ru.plans, "Human plans JSON: [{center, yaw, pitch}, ...]")->check(CLI::ExistingFile);
  c_run->add_option("--grid-out", ru.grid_out, "Write the final prediction as VXG1");
  c_run->add_option("--log-out", ru.log_out, "Write the touch constraint log");
  c_run->add_flag("--timing", ru.timing, "Record wall time per step in the ms column");
  c_run->add_flag("--no-patches", ru.no_patches, "Skip tactile height patches");

  SuiteArgs su;
  auto* c_suite = app.add_subcommand("suite", "Run scenes x policies x seeds and write one CSV");
  c_suite->add_option("--config", su.config, "Suite config JSON")->required()->check(CLI::ExistingFile);
  c_suite->add_option("--prior", su.prior, "Prior file (SPR1); default: train from the config")->check(CLI::ExistingFile);
  c_suite->add_option("--out", su.out, "CSV output (stdout if omitted)");
  c_suite->add_option("--jobs", su.jobs, "Parallel episodes")->check(CLI::PositiveNumber);
  c_suite->add_flag("--timing", su.timing, "Record wall time per step in the ms column");

  ServeArgs se;
  auto* c_serve = app.add_subcommand("serve", "Serve the HTTP session API");
  c_serve->add_option("--bind", se.bind, "Bind address");
  c_serve->add_option("--port", se.port, "Port")->check(CLI::Range(1, 65535));
  c_serve->add_option("--prior", se.priors, "Prior as PATH or ID=PATH (repeatable)")->required();
  c_serve->add_option("--ui", se.ui, "Static UI directory served under /ui");
  c_serve->add_flag("--no-patches", se.no_patches, "Skip tactile height patches");

  EvalArgs ev;
  auto* c_eval = app.add_subcommand("eval", "Chamfer distance between two VXG1 grids");
  c_eval->add_option("--pred", ev.pred, "Predicted grid")->required()->check(CLI::ExistingFile);
  c_eval->add_option("--truth", ev.truth, "Ground-truth grid")->required()->check(CLI::ExistingFile);
  c_eval->add_option("--voxel-mm", ev.voxel_mm, "Voxel edge in mm")->check(CLI::PositiveNumber);

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 1;
  }

  try {
    if (*c_gen) return gen_corpus(gc);
    if (*c_train) return train_prior(tr);
    if (*c_cal) return calibrate(ca);
    if (*c_run) return run(ru);
    if (*c_suite) return suite(su);
    if (*c_serve) return serve(se);
    if (*c_eval) return eval(ev);
  } catch (const UsageError& e) {
    std::cerr << "usage error: " << e.what() << "\n";
    return 1;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  }
  return 1;
}
