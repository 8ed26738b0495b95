#pragma once

// HTTP session service: one Episode per session, driven by manual plans
// (the human baseline) or "auto" (the active policy).

#include <atomic>
#include <cmath>
#include <filesystem>
#include <map>
#include <memory>
#include <mutex>
#include <random>
#include <shared_mutex>
#include <sstream>
#include <thread>

// Eigen (via sim.hpp) must come before httplib: <resolv.h> defines a `_res`
// macro that collides with Eigen parameter names.
#include "tactoform/sim.hpp"

#include <httplib.h>
#include <json.hpp>

namespace tactoform {

inline constexpr int kTransportMaxDim = 32;

/// Max-pools `grid` by the smallest integer factor that brings every axis
/// to at most `max_dim` cells. Edge blocks may be partial.
inline VoxelGrid pool_max(const VoxelGrid& grid, int max_dim, int* factor_out = nullptr) {
  if (max_dim < 1) throw Error(ErrorCode::InvalidArgument, "max_dim must be positive");
  const Dims& d = grid.dims();
  int f = 1;
  for (int a = 0; a < 3; ++a) f = std::max(f, (d[a] + max_dim - 1) / max_dim);
  if (factor_out) *factor_out = f;
  const Dims out{(d[0] + f - 1) / f, (d[1] + f - 1) / f, (d[2] + f - 1) / f};
  std::vector<float> v(static_cast<std::size_t>(out[0]) * out[1] * out[2], 0.0f);
  for (int i = 0; i < d[0]; ++i)
    for (int j = 0; j < d[1]; ++j)
      for (int k = 0; k < d[2]; ++k) {
        float& o = v[(static_cast<std::size_t>(i / f) * out[1] + j / f) * out[2] + k / f];
        o = std::max(o, grid.at({i, j, k}));
      }
  return VoxelGrid(out, std::move(v), grid.frame());
}

namespace detail {

inline nlohmann::json vec_json(const Vec3& v) { return {v.x(), v.y(), v.z()}; }
inline nlohmann::json cell_json(const Cell& c) { return {c[0], c[1], c[2]}; }

}  // namespace detail

inline nlohmann::json plan_to_json(const TouchPlan& p) {
  nlohmann::json j{{"center", detail::vec_json(p.center)},
                   {"normal", detail::vec_json(p.normal)},
                   {"start", detail::vec_json(p.start)},
                   {"yaw", p.yaw},
                   {"pitch", p.pitch},
                   {"k", p.k}};
  if (p.orientation >= 0) {
    j["offset"] = p.offset;
    j["score"] = p.score;
  }
  return j;
}

struct ServiceOptions {
  EpisodeOptions episode;
  int transport_max_dim = kTransportMaxDim;
};

/// Session store behind the HTTP routes. Every method returns the JSON body
/// or throws Error; route handlers map the code to a status.
class SessionService {
 public:
  explicit SessionService(std::map<std::string, std::shared_ptr<const ShapePrior>> priors, ServiceOptions opt = {})
      : priors_(std::move(priors)), opt_(std::move(opt)), id_rng_(std::random_device{}()) {}

  ~SessionService() {
    std::unique_lock lk(map_mu_);
    for (auto& [id, s] : sessions_) {
      if (s->worker.joinable()) s->worker.join();
    }
  }

  SessionService(const SessionService&) = delete;
  SessionService& operator=(const SessionService&) = delete;

  std::vector<std::string> prior_ids() const {
    std::vector<std::string> ids;
    for (const auto& [id, p] : priors_) ids.push_back(id);
    return ids;
  }

  /// Body: {"scene": {...}, "prior": id, "seed": n, "reveal_truth": bool}.
  nlohmann::json create(const nlohmann::json& body) {
    if (!body.is_object() || !body.contains("scene")) throw Error(ErrorCode::BadScene, "request needs a scene");
    const std::string prior_id = body.value("prior", std::string("default"));
    const auto it = priors_.find(prior_id);
    if (it == priors_.end()) throw Error(ErrorCode::UnknownPrior, "no prior named '" + prior_id + "'");
    const Scene scene = scene_from_json(body["scene"]);
    const std::uint64_t seed = body.value("seed", scene.seed);

    auto s = std::make_shared<Session>();
    s->reveal_truth = body.value("reveal_truth", false);
    s->episode = std::make_unique<Episode>(scene, it->second, Policy::Active, seed, opt_.episode);
    refresh(*s);

    std::string id;
    {
      std::unique_lock lk(map_mu_);
      do {
        id = token();
      } while (sessions_.count(id));
      s->id = id;
      s->snapshot["id"] = id;
      sessions_.emplace(id, s);
    }
    return state(id);
  }

  nlohmann::json state(const std::string& id) const {
    const auto s = find(id);
    std::scoped_lock lk(s->snap_mu);
    nlohmann::json j = s->snapshot;
    j["state"] = s->refining ? "refining" : "ready";
    if (!s->last_error.empty()) j["last_error"] = s->last_error;
    return j;
  }

  nlohmann::json suggestion(const std::string& id) const {
    const auto s = find(id);
    std::scoped_lock lk(s->snap_mu);
    return {{"id", id}, {"suggestion", s->snapshot["suggestion"]}, {"suggestion_error", s->snapshot["suggestion_error"]}};
  }

  std::string metrics_csv(const std::string& id) const {
    const auto s = find(id);
    std::scoped_lock lk(s->snap_mu);
    return s->metrics;
  }

  /// Body: {"plan": "auto"} or {"plan": {"center": [x,y,z], "yaw": deg,
  /// "pitch": deg}}, center in voxel coordinates; "wait": false runs the
  /// touch in the background and returns at once with state "refining".
  /// Returns {document, finished}.
  std::pair<nlohmann::json, bool> touch(const std::string& id, const nlohmann::json& body) {
    const auto s = find(id);
    if (!body.is_object() || !body.contains("plan")) throw Error(ErrorCode::InvalidArgument, "request needs a plan");
    const nlohmann::json plan = body["plan"];
    const bool wait = body.value("wait", true);
    if (!(plan.is_string() && plan.get<std::string>() == "auto") && !plan.is_object()) {
      throw Error(ErrorCode::InvalidArgument, "plan must be \"auto\" or an object");
    }

    bool expected = false;
    if (!s->refining.compare_exchange_strong(expected, true)) {
      throw Error(ErrorCode::Conflict, "a touch is already in flight for this session");
    }
    if (s->worker.joinable()) s->worker.join();
    {
      std::scoped_lock lk(s->snap_mu);
      s->last_error.clear();
    }
    if (wait) {
      try {
        apply(*s, plan);
      } catch (...) {
        s->refining = false;
        throw;
      }
      s->refining = false;
      return {state(id), true};
    }
    s->worker = std::thread([this, s, plan] {
      try {
        apply(*s, plan);
      } catch (const std::exception& e) {
        std::scoped_lock lk(s->snap_mu);
        s->last_error = e.what();
      }
      s->refining = false;
    });
    return {state(id), false};
  }

  /// Blocks until the session's background touch (if any) has finished.
  void wait_idle(const std::string& id) {
    const auto s = find(id);
    while (s->refining) std::this_thread::sleep_for(std::chrono::milliseconds(1));
  }

 private:
  struct Session {
    std::string id;
    bool reveal_truth = false;
    bool manual = false;
    std::unique_ptr<Episode> episode;  // touched only by the writer holding `refining`
    std::atomic<bool> refining{false};
    std::thread worker;
    mutable std::mutex snap_mu;
    nlohmann::json snapshot;
    std::string metrics;
    std::string last_error;
  };

  std::shared_ptr<Session> find(const std::string& id) const {
    std::shared_lock lk(map_mu_);
    const auto it = sessions_.find(id);
    if (it == sessions_.end()) throw Error(ErrorCode::NotFound, "no session '" + id + "'");
    return it->second;
  }

  std::string token() {
    std::ostringstream out;
    out << std::hex << id_rng_() << id_rng_();
    return out.str();
  }

  void apply(Session& s, const nlohmann::json& plan) {
    Episode& ep = *s.episode;
    if (plan.is_string()) {
      ep.step();
    } else {
      const auto& c = plan.at("center");
      if (!c.is_array() || c.size() != 3) throw Error(ErrorCode::InvalidArgument, "center must be [x, y, z]");
      const Vec3 center(c[0].get<double>(), c[1].get<double>(), c[2].get<double>());
      const TouchPlan p =
          manual_plan(ep.planning_grid(), ep.scene().sensor, center, plan.value("yaw", 0.0), plan.value("pitch", 0.0));
      ep.touch(p);
      s.manual = true;
    }
    refresh(s);
  }

  // Rebuilds the read-side documents from the episode; called by the writer.
  void refresh(Session& s) const {
    const Episode& ep = *s.episode;
    nlohmann::json j;
    j["id"] = s.id;
    j["scene"] = scene_to_json(ep.scene());
    j["seed"] = ep.seed();
    j["touch_count"] = ep.touch_count();

    nlohmann::json cd = nlohmann::json::array(), cdn = nlohmann::json::array(), touches = nlohmann::json::array();
    for (const TouchStep& st : ep.steps()) {
      cd.push_back(st.cd_sum);
      cdn.push_back(st.cd_norm);
      if (st.index == 0) continue;
      nlohmann::json t{{"index", st.index}};
      if (st.plan) t["plan"] = plan_to_json(*st.plan);
      if (st.record) {
        t["hit"] = st.record->hit;
        t["contact"] = st.record->contact ? detail::cell_json(*st.record->contact) : nlohmann::json();
        t["ray_cells"] = st.record->ray_cells.size();
      }
      if (!st.note.empty()) t["note"] = st.note;
      touches.push_back(std::move(t));
    }
    j["cd_history"] = std::move(cd);
    j["cd_norm_history"] = std::move(cdn);
    j["touches"] = std::move(touches);
    j["constraint_count"] = ep.touches().targets().size();

    int factor = 1;
    const VoxelGrid pooled = pool_max(ep.prediction(), opt_.transport_max_dim, &factor);
    j["grid"] = {{"dims", pooled.dims()},
                 {"pool_factor", factor},
                 {"full_dims", ep.prediction().dims()},
                 {"encoding", "VXG1+base64"},
                 {"data", httplib::detail::base64_encode(encode_grid(pooled))}};

    j["suggestion"] = nullptr;
    j["suggestion_error"] = nullptr;
    try {
      j["suggestion"] = plan_to_json(ep.suggest());
    } catch (const Error& e) {
      j["suggestion_error"] = error_name(e.code());
    }

    if (s.reveal_truth) {
      nlohmann::json pts = nlohmann::json::array();
      for (const Vec3& p : ep.truth_surface().points) pts.push_back(detail::vec_json(p));
      j["truth_surface"] = std::move(pts);
    }

    EpisodeResult r = ep.result();
    if (s.manual) r.policy = Policy::Human;
    std::ostringstream csv;
    write_suite_csv(csv, {r});

    std::scoped_lock lk(s.snap_mu);
    s.snapshot = std::move(j);
    s.metrics = csv.str();
  }

  std::map<std::string, std::shared_ptr<const ShapePrior>> priors_;
  ServiceOptions opt_;
  mutable std::shared_mutex map_mu_;
  std::map<std::string, std::shared_ptr<Session>> sessions_;
  std::mt19937_64 id_rng_;
};

inline int http_status(ErrorCode code) {
  switch (code) {
    case ErrorCode::NotFound:
    case ErrorCode::UnknownPrior: return 404;
    case ErrorCode::Conflict: return 409;
    case ErrorCode::BlockedPlan:
    case ErrorCode::NoTouchableRegion:
    case ErrorCode::NoVisiblePixels:
    case ErrorCode::DimMismatch: return 422;
    default: return 400;
  }
}

/// Registers the session routes on `server`; /ui serves `ui_dir` when it
/// exists.
inline void mount_routes(httplib::Server& server, SessionService& svc, const std::string& ui_dir = {}) {
  using httplib::Request;
  using httplib::Response;
  const auto send_json = [](Response& res, int status, const nlohmann::json& j) {
    res.status = status;
    res.set_content(j.dump(), "application/json");
  };
  const auto guarded = [send_json](auto fn) {
    return [fn, send_json](const Request& req, Response& res) {
      try {
        fn(req, res);
      } catch (const Error& e) {
        send_json(res, http_status(e.code()), {{"error", error_name(e.code())}, {"message", e.what()}});
      } catch (const nlohmann::json::exception& e) {
        send_json(res, 400, {{"error", "InvalidArgument"}, {"message", e.what()}});
      } catch (const std::exception& e) {
        send_json(res, 500, {{"error", "Internal"}, {"message", e.what()}});
      }
    };
  };
  const auto body_json = [](const Request& req) {
    return req.body.empty() ? nlohmann::json::object() : nlohmann::json::parse(req.body);
  };

  server.Get("/priors", guarded([&svc, send_json](const Request&, Response& res) {
               send_json(res, 200, {{"priors", svc.prior_ids()}});
             }));
  server.Post("/sessions", guarded([&svc, send_json, body_json](const Request& req, Response& res) {
                send_json(res, 201, svc.create(body_json(req)));
              }));
  server.Get("/sessions/:id", guarded([&svc, send_json](const Request& req, Response& res) {
               send_json(res, 200, svc.state(req.path_params.at("id")));
             }));
  server.Post("/sessions/:id/touch", guarded([&svc, send_json, body_json](const Request& req, Response& res) {
                auto [doc, finished] = svc.touch(req.path_params.at("id"), body_json(req));
                send_json(res, finished ? 200 : 202, doc);
              }));
  server.Get("/sessions/:id/suggestion", guarded([&svc, send_json](const Request& req, Response& res) {
               send_json(res, 200, svc.suggestion(req.path_params.at("id")));
             }));
  server.Get("/sessions/:id/metrics", guarded([&svc](const Request& req, Response& res) {
               const std::string id = req.path_params.at("id");
               res.set_content(svc.metrics_csv(id), "text/csv");
               res.set_header("Content-Disposition", "attachment; filename=\"" + id + ".csv\"");
             }));
  if (!ui_dir.empty() && std::filesystem::is_directory(ui_dir)) server.set_mount_point("/ui", ui_dir);
}

}  // namespace tactoform
