#include <thread>

#include <gtest/gtest.h>

#include "tactoform/service.hpp"

using namespace tactoform;
using nlohmann::json;

namespace {

std::shared_ptr<const ShapePrior> prior32() {
  static const auto p = [] {
    const auto c = generate_corpus(ShapeCorpusSpec::standard(32, 12, 21));
    return std::make_shared<const ShapePrior>(fit_prior(std::span<const CorpusEntry>(c), 20));
  }();
  return p;
}

Scene scene(int i) {
  Scene s;
  s.name = "c" + std::to_string(i);
  s.resolution = 32;
  s.shape = generate_corpus(ShapeCorpusSpec::standard(32, 2, 606))[static_cast<std::size_t>(i)].shape;
  return s;
}

json create_body(int i, std::uint64_t seed) {
  return {{"scene", scene_to_json(scene(i))}, {"prior", "p32"}, {"seed", seed}};
}

std::vector<double> history(const json& doc) { return doc["cd_history"].get<std::vector<double>>(); }

std::string b64decode(const std::string& in) {
  const std::string abc = "ABCDEFGHIJKLMNOPQRSTUVWXYZabcdefghijklmnopqrstuvwxyz0123456789+/";
  std::string out;
  int val = 0, bits = -8;
  for (char c : in) {
    if (c == '=') break;
    val = (val << 6) | static_cast<int>(abc.find(c));
    bits += 6;
    if (bits >= 0) {
      out.push_back(static_cast<char>((val >> bits) & 0xFF));
      bits -= 8;
    }
  }
  return out;
}

}  // namespace

TEST(PoolMax, MatchesBlockScanOracle) {
  std::mt19937 rng(3);
  std::uniform_real_distribution<float> u(0.0f, 1.0f);
  const Dims d{70, 33, 5};
  std::vector<float> v(static_cast<std::size_t>(d[0]) * d[1] * d[2]);
  for (float& x : v) x = u(rng);
  const VoxelGrid g(d, v);
  int f = 0;
  const VoxelGrid p = pool_max(g, 32, &f);
  EXPECT_EQ(f, 3);
  EXPECT_EQ(p.dims(), (Dims{24, 11, 2}));
  for (int a = 0; a < 24; ++a)
    for (int b = 0; b < 11; ++b)
      for (int c = 0; c < 2; ++c) {
        float m = 0.0f;
        for (int i = 3 * a; i < std::min(3 * a + 3, d[0]); ++i)
          for (int j = 3 * b; j < std::min(3 * b + 3, d[1]); ++j)
            for (int k = 3 * c; k < std::min(3 * c + 3, d[2]); ++k) m = std::max(m, g.at({i, j, k}));
        ASSERT_EQ(p.at({a, b, c}), m);
        EXPECT_GE(m, 0.0f);
        EXPECT_LE(m, 1.0f);
      }
  EXPECT_TRUE(pool_max(VoxelGrid({32, 32, 32}, std::vector<float>(32 * 32 * 32, 0.25f)), 32) ==
              VoxelGrid({32, 32, 32}, std::vector<float>(32 * 32 * 32, 0.25f)));
}

TEST(Service, AutoTouchesReproduceRunEpisode) {
  SessionService svc({{"p32", prior32()}});
  const json doc = svc.create(create_body(3, 7));
  const std::string id = doc["id"];
  EXPECT_EQ(doc["cd_history"].size(), 1u);
  EXPECT_EQ(doc["state"], "ready");
  for (int i = 0; i < 10; ++i) svc.touch(id, {{"plan", "auto"}});
  const auto want = run_episode(scene(3), prior32(), Policy::Active, 10, 7);
  const auto got = history(svc.state(id));
  ASSERT_EQ(got.size(), want.steps.size());
  for (std::size_t i = 0; i < got.size(); ++i) EXPECT_EQ(got[i], want.steps[i].cd_sum) << i;

  std::ostringstream csv;
  write_suite_csv(csv, {want});
  EXPECT_EQ(svc.metrics_csv(id), csv.str());
}

TEST(Service, SameSeedSameInitialCdAndUnknownPrior) {
  SessionService svc({{"p32", prior32()}});
  const json a = svc.create(create_body(1, 4)), b = svc.create(create_body(1, 4));
  EXPECT_NE(a["id"], b["id"]);
  EXPECT_EQ(history(a), history(b));
  json bad = create_body(1, 4);
  bad["prior"] = "nope";
  try {
    svc.create(bad);
    ADD_FAILURE();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::UnknownPrior);
    EXPECT_EQ(http_status(e.code()), 404);
  }
  EXPECT_THROW(svc.state("missing"), Error);
}

TEST(Service, SecondTouchWhileRefiningConflicts) {
  SessionService svc({{"p32", prior32()}});
  const std::string id = svc.create(create_body(2, 1))["id"];
  const auto [doc, finished] = svc.touch(id, {{"plan", "auto"}, {"wait", false}});
  EXPECT_FALSE(finished);
  EXPECT_EQ(doc["state"], "refining");
  try {
    svc.touch(id, {{"plan", "auto"}});
    ADD_FAILURE();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::Conflict);
    EXPECT_EQ(http_status(e.code()), 409);
  }
  svc.wait_idle(id);
  const json after = svc.state(id);
  EXPECT_EQ(after["state"], "ready");
  EXPECT_EQ(after["cd_history"].size(), 2u);
}

TEST(Service, InterleavedSessionsStayIsolated) {
  SessionService svc({{"p32", prior32()}});
  const std::string a = svc.create(create_body(4, 2))["id"];
  const std::string b = svc.create(create_body(5, 2))["id"];
  std::thread tb([&] {
    for (int i = 0; i < 3; ++i) svc.touch(b, {{"plan", "auto"}});
  });
  for (int i = 0; i < 3; ++i) svc.touch(a, {{"plan", "auto"}});
  tb.join();
  const auto ra = run_episode(scene(4), prior32(), Policy::Active, 3, 2);
  const auto rb = run_episode(scene(5), prior32(), Policy::Active, 3, 2);
  for (std::size_t i = 0; i < 4; ++i) {
    EXPECT_EQ(history(svc.state(a))[i], ra.steps[i].cd_sum);
    EXPECT_EQ(history(svc.state(b))[i], rb.steps[i].cd_sum);
  }
}

TEST(Service, ManualMissAddsOnlyRayCells) {
  SessionService svc({{"p32", prior32()}});
  const std::string id = svc.create(create_body(0, 1))["id"];
  // Far corner column, approached along +y: empty in truth and prediction.
  const auto [doc, finished] = svc.touch(id, {{"plan", {{"center", {1.0, 16.0, 30.0}}, {"yaw", 90.0}, {"pitch", 0.0}}}});
  ASSERT_TRUE(finished);
  ASSERT_EQ(doc["touches"].size(), 1u);
  const json& t = doc["touches"][0];
  EXPECT_FALSE(t["hit"].get<bool>());
  EXPECT_GT(t["ray_cells"].get<int>(), 0);
  EXPECT_EQ(doc["constraint_count"], t["ray_cells"]);
  EXPECT_NE(svc.metrics_csv(id).find(",human,"), std::string::npos);
}

TEST(Service, StateAfterTouchMovesOn) {
  SessionService svc({{"p32", prior32()}});
  const json d0 = svc.create(create_body(6, 3));
  const std::string id = d0["id"];
  const json d1 = svc.touch(id, {{"plan", "auto"}}).first;
  const bool same_center = d1["suggestion"]["center"] == d1["touches"][0]["plan"]["center"];
  EXPECT_TRUE(!same_center || d1["grid"]["data"] != d0["grid"]["data"]);
}

TEST(ServiceHttp, RoutesStatusCodesAndPayloads) {
  SessionService svc({{"p32", prior32()}});
  httplib::Server server;
  mount_routes(server, svc);
  const int port = server.bind_to_any_port("127.0.0.1");
  ASSERT_GT(port, 0);
  std::thread th([&] { server.listen_after_bind(); });
  server.wait_until_ready();
  httplib::Client cli("127.0.0.1", port);

  auto r = cli.Post("/sessions", create_body(1, 5).dump(), "application/json");
  ASSERT_TRUE(r);
  EXPECT_EQ(r->status, 201);
  const json doc = json::parse(r->body);
  const std::string id = doc["id"];
  EXPECT_EQ(doc["cd_history"].size(), 1u);
  EXPECT_EQ(doc["touches"].size(), 0u);
  EXPECT_FALSE(doc.contains("truth_surface"));

  const std::string bytes = b64decode(doc["grid"]["data"]);
  const VoxelGrid pooled = decode_grid(bytes);
  EXPECT_EQ(pooled.dims(), (Dims{32, 32, 32}));

  json bad = create_body(1, 5);
  bad["prior"] = "other";
  EXPECT_EQ(cli.Post("/sessions", bad.dump(), "application/json")->status, 404);
  bad = create_body(1, 5);
  bad["scene"]["voxel_mm"] = -2.0;
  EXPECT_EQ(cli.Post("/sessions", bad.dump(), "application/json")->status, 400);
  EXPECT_EQ(cli.Post("/sessions", "{not json", "application/json")->status, 400);
  EXPECT_EQ(cli.Get("/sessions/zzz")->status, 404);

  r = cli.Post("/sessions/" + id + "/touch", R"({"plan": "auto"})", "application/json");
  ASSERT_TRUE(r);
  EXPECT_EQ(r->status, 200);
  EXPECT_EQ(json::parse(r->body)["cd_history"].size(), 2u);

  r = cli.Get("/sessions/" + id + "/suggestion");
  EXPECT_EQ(r->status, 200);
  EXPECT_TRUE(json::parse(r->body)["suggestion"].is_object());

  r = cli.Get("/sessions/" + id + "/metrics");
  EXPECT_EQ(r->status, 200);
  EXPECT_EQ(r->body.substr(0, r->body.find('\n')), kSuiteCsvHeader);

  json reveal = create_body(1, 5);
  reveal["reveal_truth"] = true;
  r = cli.Post("/sessions", reveal.dump(), "application/json");
  EXPECT_FALSE(json::parse(r->body)["truth_surface"].empty());

  server.stop();
  th.join();
}
