#include <gtest/gtest.h>

#include <cmath>
#include <filesystem>
#include <fstream>
#include <thread>

#include "httplib.h"

#include "boed/service.hpp"
#include "boed/trainer.hpp"

using namespace boed;
using namespace boed::service;
using nlohmann::json;

namespace {

train::TrainConfig tiny(const std::string& model, std::size_t horizon) {
  train::TrainConfig c = train::TrainConfig::defaults(model);
  c.iterations = 4;
  c.contrastive = 16;
  c.horizon = horizon;
  c.batch_size = 8;
  c.warmup_transitions = 8;
  c.network = agents::NetworkShape{{16, 16}, 8};
  return c;
}

class ServiceTest : public ::testing::Test {
 protected:
  static void SetUpTestSuite() {
    dir_ = new std::filesystem::path(std::filesystem::temp_directory_path() / "boed_service_ckpts");
    std::filesystem::remove_all(*dir_);
    std::filesystem::create_directories(*dir_);
    ad::save_checkpoint(*dir_ / "lg.ckpt", train::train(tiny("lingauss", 3)).checkpoint);
    ad::save_checkpoint(*dir_ / "prey.ckpt", train::train(tiny("prey", 4)).checkpoint);
  }
  static void TearDownTestSuite() {
    std::filesystem::remove_all(*dir_);
    delete dir_;
  }

  void SetUp() override {
    journal_ = std::filesystem::temp_directory_path() /
               ("boed_journal_" + std::string(::testing::UnitTest::GetInstance()->current_test_info()->name()) + ".jsonl");
    std::filesystem::remove(journal_);
  }
  void TearDown() override { std::filesystem::remove(journal_); }

  ServiceConfig config() const {
    ServiceConfig c;
    c.checkpoints_dir = *dir_;
    c.journal = journal_;
    c.default_particles = 2000;
    return c;
  }

  static int status_of(const std::function<void()>& f) {
    try {
      f();
    } catch (const ApiError& e) {
      return e.status();
    }
    return 200;
  }

  static std::filesystem::path* dir_;
  std::filesystem::path journal_;
};

std::filesystem::path* ServiceTest::dir_ = nullptr;

}  // namespace

TEST_F(ServiceTest, FirstDesignIsTheEvaluationActionForAnEmptyHistory) {
  SessionStore store(config());
  const json created = store.create_session({{"model", "lingauss"}, {"checkpoint", "lg"}});
  EXPECT_EQ(created.at("step"), 1);
  const auto model = make_model("lingauss");
  const auto actor = agents::load_actor(ad::load_checkpoint(*dir_ / "lg.ckpt"), *model);
  Rng rng(0);
  const Design expected = actor->act(std::vector<double>(8, 0.0), rng, agents::ActMode::kMean).design;
  EXPECT_EQ(created.at("design").get<std::vector<double>>(), expected.values);
}

TEST_F(ServiceTest, SameSeedSameDesigns) {
  SessionStore store(config());
  const json body = {{"model", "prey"}, {"checkpoint", "prey"}, {"mode", "simulated"}, {"seed", 5}};
  const json a = store.create_session(body);
  const json b = store.create_session(body);
  EXPECT_NE(a.at("session_id"), b.at("session_id"));
  EXPECT_EQ(a.at("design"), b.at("design"));
  for (int k = 0; k < 3; ++k) {
    const json ra = store.post_outcome(a.at("session_id"), json::object());
    const json rb = store.post_outcome(b.at("session_id"), json::object());
    EXPECT_EQ(ra.at("y"), rb.at("y"));
    EXPECT_EQ(ra.value("design", json()), rb.value("design", json()));
  }
}

TEST_F(ServiceTest, SimulatedSessionMatchesEvaluationRollout) {
  for (const auto& [model_id, ckpt] : {std::pair<std::string, std::string>{"lingauss", "lg"}, {"prey", "prey"}}) {
    SessionStore store(config());
    const std::uint64_t seed = 42;
    const json created = store.create_session({{"model", model_id}, {"checkpoint", ckpt}, {"mode", "simulated"}, {"seed", seed}});
    const std::string id = created.at("session_id");
    std::size_t horizon = created.at("horizon");
    for (std::size_t t = 0; t < horizon; ++t) store.post_outcome(id, json::object());
    const json session = store.get_session(id);

    const auto model = make_model(model_id);
    std::shared_ptr<const agents::Actor> actor = agents::load_actor(ad::load_checkpoint(*dir_ / (ckpt + ".ckpt")), *model);
    const Model& m = *model;
    PolicyFactory factory = [actor, &m] { return std::make_unique<agents::ActorPolicy>(actor, m); };
    const RolloutSet set = run_rollouts(factory, *model, 10, horizon, 1, seed);
    const RolloutTrace& tr = set.rollouts[0];
    ASSERT_EQ(session.at("history").size(), horizon);
    for (std::size_t t = 0; t < horizon; ++t) {
      const json& row = session.at("history")[t];
      if (model->design_space().discrete()) {
        EXPECT_EQ(row.at("design").get<int>(), tr.designs[t].choice()) << model_id << " t=" << t;
      } else {
        EXPECT_EQ(row.at("design").get<std::vector<double>>(), tr.designs[t].values) << model_id << " t=" << t;
      }
      EXPECT_EQ(row.at("y").get<double>(), tr.outcomes[t]) << model_id << " t=" << t;
    }
  }
}

TEST_F(ServiceTest, PosteriorStartsUniform) {
  SessionStore store(config());
  const json created = store.create_session({{"model", "lingauss"}, {"checkpoint", "lg"}, {"n_particles", 50}});
  const json post = store.get_posterior(created.at("session_id"), std::nullopt);
  EXPECT_EQ(post.at("points").size(), 50u);
  EXPECT_NEAR(post.at("ess").get<double>(), 50.0, 1e-9);
  for (const json& p : post.at("points")) EXPECT_NEAR(p.at("weight").get<double>(), 1.0 / 50, 1e-15);
  const json top = store.get_posterior(created.at("session_id"), 7);
  EXPECT_EQ(top.at("points").size(), 7u);
}

TEST_F(ServiceTest, PosteriorMatchesConjugateMean) {
  SessionStore store(config());
  const json created = store.create_session({{"model", "lingauss"}, {"checkpoint", "lg"}, {"n_particles", 20000}});
  const std::string id = created.at("session_id");
  json design = created.at("design");
  double precision = 1.0, xy = 0.0;
  const std::vector<double> ys{1.2, -0.4, 0.9};
  for (double y : ys) {
    const double d = design.at(0).get<double>();
    precision += d * d;
    xy += d * y;
    const json r = store.post_outcome(id, {{"y", y}});
    design = r.value("design", json());
  }
  const json post = store.get_posterior(id, std::nullopt);
  double mean = 0.0, total = 0.0;
  for (const json& p : post.at("points")) {
    mean += p.at("weight").get<double>() * p.at("theta")[0].get<double>();
    total += p.at("weight").get<double>();
  }
  EXPECT_NEAR(total, 1.0, 1e-9);
  const double ess = post.at("ess");
  EXPECT_LE(ess, 20000.0);
  EXPECT_LT(std::abs(mean - xy / precision), 3 * std::sqrt(1.0 / precision / ess));
}

TEST_F(ServiceTest, OutcomeValidationAndCompletion) {
  SessionStore store(config());
  const json created = store.create_session({{"model", "prey"}, {"checkpoint", "prey"}});
  const std::string id = created.at("session_id");
  const int n0 = created.at("design");
  try {
    store.post_outcome(id, {{"y", n0 + 1}});
    FAIL();
  } catch (const ApiError& e) {
    EXPECT_EQ(e.status(), 422);
    EXPECT_NE(e.detail().find(std::to_string(n0)), std::string::npos) << e.detail();
  }
  EXPECT_EQ(status_of([&] { store.post_outcome(id, json::object()); }), 422);  // live sessions need y
  EXPECT_EQ(status_of([&] { store.post_outcome(id, {{"y", "three"}}); }), 422);
  json last;
  for (int t = 0; t < 4; ++t) last = store.post_outcome(id, {{"y", 0}});
  EXPECT_TRUE(last.at("done").get<bool>());
  EXPECT_FALSE(last.contains("design"));
  EXPECT_EQ(status_of([&] { store.post_outcome(id, {{"y", 0}}); }), 409);
  const json s = store.get_session(id);
  EXPECT_TRUE(s.at("design").is_null());
  EXPECT_EQ(s.at("history").size(), 4u);
}

TEST_F(ServiceTest, ErrorCodes) {
  SessionStore store(config());
  EXPECT_EQ(status_of([&] { store.get_session("missing"); }), 404);
  EXPECT_EQ(status_of([&] { store.post_outcome("missing", {{"y", 1}}); }), 404);
  EXPECT_EQ(status_of([&] { store.get_posterior("missing", std::nullopt); }), 404);
  EXPECT_EQ(status_of([&] { store.create_session({{"model", "lingauss"}, {"checkpoint", "nope"}}); }), 404);
  EXPECT_EQ(status_of([&] { store.create_session({{"model", "lingauss"}, {"checkpoint", "../etc"}}); }), 404);
  EXPECT_EQ(status_of([&] { store.create_session({{"model", "prey"}, {"checkpoint", "lg"}}); }), 422);
  EXPECT_EQ(status_of([&] { store.create_session({{"model", "zzz"}, {"checkpoint", "lg"}}); }), 422);
  EXPECT_EQ(status_of([&] { store.create_session({{"model", "lingauss"}}); }), 400);
  EXPECT_EQ(status_of([&] { store.create_session({{"model", "lingauss"}, {"checkpoint", "lg"}, {"mode", "x"}}); }), 400);
  EXPECT_EQ(status_of([&] { store.create_session({{"model", "lingauss"}, {"checkpoint", "lg"}, {"n_particles", 0}}); }),
            422);
  const json created = store.create_session({{"model", "lingauss"}, {"checkpoint", "lg"}, {"n_particles", 30}});
  EXPECT_EQ(status_of([&] { store.get_posterior(created.at("session_id"), 31); }), 422);
}

TEST_F(ServiceTest, DegeneratePosteriorIs503) {
  SessionStore store(config());
  const json created = store.create_session({{"model", "lingauss"}, {"checkpoint", "lg"}, {"n_particles", 20}});
  const std::string id = created.at("session_id");
  for (int t = 0; t < 3; ++t) store.post_outcome(id, {{"y", 40.0}});
  try {
    store.get_posterior(id, std::nullopt);
    FAIL();
  } catch (const ApiError& e) {
    EXPECT_EQ(e.status(), 503);
    EXPECT_NE(e.detail().find("n_particles"), std::string::npos);
  }
}

TEST_F(ServiceTest, CheckpointCatalog) {
  const std::filesystem::path empty = std::filesystem::temp_directory_path() / "boed_empty_ckpts";
  std::filesystem::create_directories(empty);
  ServiceConfig ec = config();
  ec.checkpoints_dir = empty;
  EXPECT_TRUE(SessionStore(ec).list_checkpoints().empty());

  std::ofstream(*dir_ / "broken.ckpt") << "not a checkpoint";
  SessionStore store(config());
  const json list = store.list_checkpoints();
  std::filesystem::remove(*dir_ / "broken.ckpt");
  std::filesystem::remove_all(empty);
  ASSERT_EQ(list.size(), 3u);
  EXPECT_EQ(list[0].at("id"), "broken");
  EXPECT_EQ(list[0].at("status"), "invalid");
  EXPECT_EQ(list[1].at("id"), "lg");
  EXPECT_EQ(list[1].at("model"), "lingauss");
  EXPECT_EQ(list[2].at("model"), "prey");
  EXPECT_EQ(list[2].at("status"), "ok");
}

TEST_F(ServiceTest, JournalReplayRestoresSessions) {
  std::string id;
  json before;
  {
    SessionStore store(config());
    id = store.create_session({{"model", "prey"}, {"checkpoint", "prey"}, {"mode", "simulated"}, {"seed", 3}})
             .at("session_id");
    store.post_outcome(id, json::object());
    store.post_outcome(id, {{"y", 1}});
    before = store.get_session(id);
  }
  SessionStore restored(config());
  EXPECT_EQ(restored.session_count(), 1u);
  EXPECT_EQ(restored.get_session(id), before);
  const json next = restored.create_session({{"model", "prey"}, {"checkpoint", "prey"}});
  EXPECT_NE(next.at("session_id"), id);
}

TEST_F(ServiceTest, HttpRoundTrip) {
  SessionStore store(config());
  HttpService http(store);
  const int port = http.bind_any_port("127.0.0.1");
  ASSERT_GT(port, 0);
  std::thread server([&http] { http.listen_after_bind(); });
  http.wait_until_ready();

  httplib::Client client("127.0.0.1", port);
  auto health = client.Get("/api/health");
  ASSERT_TRUE(health);
  EXPECT_EQ(health->status, 200);

  auto created = client.Post("/api/sessions", json{{"model", "prey"}, {"checkpoint", "prey"}}.dump(), "application/json");
  ASSERT_TRUE(created);
  ASSERT_EQ(created->status, 200) << created->body;
  const json body = json::parse(created->body);
  const std::string id = body.at("session_id");
  const int n0 = body.at("design");

  auto bad = client.Post("/api/sessions/" + id + "/outcomes", json{{"y", n0 + 5}}.dump(), "application/json");
  ASSERT_TRUE(bad);
  EXPECT_EQ(bad->status, 422);
  EXPECT_EQ(json::parse(bad->body).at("code"), "invalid_outcome");

  auto good = client.Post("/api/sessions/" + id + "/outcomes", json{{"y", 0}}.dump(), "application/json");
  ASSERT_TRUE(good);
  EXPECT_EQ(good->status, 200);
  EXPECT_EQ(json::parse(good->body).at("step"), 2);

  auto post = client.Get("/api/sessions/" + id + "/posterior?n=10");
  ASSERT_TRUE(post);
  EXPECT_EQ(post->status, 200);
  EXPECT_EQ(json::parse(post->body).at("points").size(), 10u);
  auto bad_n = client.Get("/api/sessions/" + id + "/posterior?n=abc");
  ASSERT_TRUE(bad_n);
  EXPECT_EQ(bad_n->status, 422);

  auto missing = client.Get("/api/sessions/nope");
  ASSERT_TRUE(missing);
  EXPECT_EQ(missing->status, 404);
  auto garbage = client.Post("/api/sessions", "{not json", "application/json");
  ASSERT_TRUE(garbage);
  EXPECT_EQ(garbage->status, 400);

  auto catalog = client.Get("/api/checkpoints");
  ASSERT_TRUE(catalog);
  EXPECT_EQ(json::parse(catalog->body).at("checkpoints").size(), 2u);

  http.stop();
  server.join();
}

TEST(Serve, RejectsMalformedAddress) {
  ServiceConfig c;
  EXPECT_THROW(serve(c, "localhost"), UsageError);
  EXPECT_THROW(serve(c, "localhost:abc"), UsageError);
  EXPECT_THROW(serve(c, "localhost:70000"), UsageError);
}
