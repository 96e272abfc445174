#include "boed/service.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <iostream>
#include <numeric>

#include "httplib.h"

#include "boed/autodiff/checkpoint.hpp"
#include "boed/estimators.hpp"
#include "boed/trainer.hpp"

namespace boed::service {

namespace {

constexpr std::uint64_t kParticleStream = 0x7061727469636c65ULL;
constexpr double kMinPosteriorEss = 5.0;

nlohmann::json design_json(const Design& d, const Model& model) {
  if (model.design_space().discrete()) return d.choice();
  return d.values;
}

std::string checkpoint_file_id(const std::filesystem::path& p) { return p.stem().string(); }

bool valid_id(const std::string& id) {
  if (id.empty() || id.size() > 128) return false;
  return std::all_of(id.begin(), id.end(), [](char c) { return std::isalnum(static_cast<unsigned char>(c)) || c == '-' || c == '_' || c == '.'; }) &&
         id.find("..") == std::string::npos;
}

}  // namespace

nlohmann::json ApiError::body() const {
  return {{"code", code_}, {"message", what()}, {"detail", detail_}};
}

struct SessionStore::Session {
  std::mutex mutex;
  std::string id;
  std::string model_id;
  std::string checkpoint_id;
  std::string mode;  // live | simulated
  std::uint64_t seed = 0;
  std::size_t horizon = 0;
  std::shared_ptr<const Model> model;
  std::shared_ptr<const agents::Actor> actor;

  std::vector<Design> designs;
  std::vector<Outcome> outcomes;
  std::vector<bool> sampled;
  agents::Summary summary;
  ThetaSet particles;
  std::vector<double> ell;

  // Simulated mode: hidden parameter, its log-likelihood and the outcome stream.
  std::vector<double> theta0;
  double ell0 = 0.0;
  Rng outcome_rng;
  Rng policy_rng;
  std::vector<double> information_gain;

  std::optional<Design> pending;

  std::size_t t() const { return designs.size(); }
  bool done() const { return t() >= horizon; }
};

SessionStore::SessionStore(ServiceConfig config) : config_(std::move(config)) {
  journal_path_ = config_.journal.empty() ? config_.checkpoints_dir / "sessions.jsonl" : config_.journal;
  replay_journal();
}

SessionStore::~SessionStore() = default;

std::size_t SessionStore::session_count() const {
  std::lock_guard lock(mutex_);
  return sessions_.size();
}

SessionStore::LoadedPolicy SessionStore::load_policy(const std::string& checkpoint_id, const std::string& model_id) {
  if (!valid_id(checkpoint_id)) throw ApiError(404, "unknown_checkpoint", "no checkpoint named '" + checkpoint_id + "'");
  const std::filesystem::path path = config_.checkpoints_dir / (checkpoint_id + ".ckpt");
  if (!std::filesystem::exists(path)) {
    throw ApiError(404, "unknown_checkpoint", "no checkpoint named '" + checkpoint_id + "'",
                   "looked for " + path.string());
  }
  ad::Checkpoint ckpt;
  try {
    ckpt = ad::load_checkpoint(path);
  } catch (const ad::CheckpointError& e) {
    throw ApiError(422, "invalid_checkpoint", "checkpoint '" + checkpoint_id + "' cannot be read", e.what());
  }
  const std::string stored = ckpt.meta.value("model", std::string());
  if (stored != model_id) {
    throw ApiError(422, "model_mismatch",
                   "checkpoint '" + checkpoint_id + "' was trained on '" + stored + "', not '" + model_id + "'");
  }
  LoadedPolicy lp;
  try {
    lp.model = make_model(model_id);
    lp.actor = agents::load_actor(ckpt, *lp.model);
  } catch (const Error& e) {
    throw ApiError(422, "invalid_checkpoint", "checkpoint '" + checkpoint_id + "' does not hold a usable policy",
                   e.what());
  }
  lp.horizon = train::TrainConfig::defaults(model_id).horizon;
  if (ckpt.meta.contains("train_config")) {
    lp.horizon = ckpt.meta["train_config"].value("horizon", lp.horizon);
  }
  return lp;
}

std::shared_ptr<SessionStore::Session> SessionStore::find(const std::string& id) const {
  std::lock_guard lock(mutex_);
  auto it = sessions_.find(id);
  if (it == sessions_.end()) throw ApiError(404, "unknown_session", "no session '" + id + "'");
  return it->second;
}

void SessionStore::propose(Session& s) {
  if (s.done()) {
    s.pending.reset();
    return;
  }
  s.pending = s.actor->act(s.summary.values, s.policy_rng, agents::ActMode::kMean).design;
}

nlohmann::json SessionStore::create_session(const nlohmann::json& body) { return create_impl(body, nullptr); }

nlohmann::json SessionStore::create_impl(const nlohmann::json& body, const std::string* forced_id) {
  if (!body.is_object()) throw ApiError(400, "bad_request", "request body must be a JSON object");
  std::string model_id, checkpoint_id, mode = "live";
  std::uint64_t seed = 0;
  std::size_t n_particles = config_.default_particles;
  try {
    model_id = body.at("model").get<std::string>();
    checkpoint_id = body.at("checkpoint").get<std::string>();
    mode = body.value("mode", mode);
    seed = body.value("seed", seed);
    n_particles = body.value("n_particles", n_particles);
  } catch (const nlohmann::json::exception& e) {
    throw ApiError(400, "bad_request", "session needs 'model' and 'checkpoint' strings", e.what());
  }
  if (mode != "live" && mode != "simulated") {
    throw ApiError(400, "bad_request", "mode must be 'live' or 'simulated', got '" + mode + "'");
  }
  if (n_particles < 1 || n_particles > config_.max_particles) {
    throw ApiError(422, "bad_particles",
                   "n_particles must lie in [1, " + std::to_string(config_.max_particles) + "]");
  }
  try {
    make_model(model_id);
  } catch (const UsageError& e) {
    throw ApiError(422, "unknown_model", e.what());
  }
  LoadedPolicy lp = load_policy(checkpoint_id, model_id);

  auto s = std::make_shared<Session>();
  s->model_id = model_id;
  s->checkpoint_id = checkpoint_id;
  s->mode = mode;
  s->seed = seed;
  s->horizon = lp.horizon;
  s->model = lp.model;
  s->actor = lp.actor;
  s->summary = agents::zero_summary(s->actor->encoder().summary_dim());
  s->policy_rng = Rng::substream(seed, 0, kPolicyStream);
  // Same draw order as an evaluation rollout with this seed: outcome-stream seed, then theta_0.
  Rng env = Rng::substream(seed, 0);
  s->outcome_rng = Rng(env());
  if (mode == "simulated") s->theta0 = s->model->sample_prior(env);
  Rng particle_rng = Rng::substream(seed, 0, kParticleStream);
  s->particles = ThetaSet(s->model->theta_dim(), n_particles);
  for (std::size_t i = 0; i < n_particles; ++i) s->model->sample_prior(particle_rng, s->particles.row(i));
  s->ell.assign(n_particles, 0.0);
  propose(*s);

  {
    std::lock_guard lock(mutex_);
    if (forced_id) {
      s->id = *forced_id;
    } else {
      char buf[32];
      std::snprintf(buf, sizeof buf, "s%016llx", static_cast<unsigned long long>(mix64(counter_ + 1) ^ mix64(seed)));
      s->id = buf;
    }
    ++counter_;
    sessions_[s->id] = s;
  }
  nlohmann::json record = body;
  record["event"] = "create";
  record["session_id"] = s->id;
  append_journal(record);

  nlohmann::json out = {{"session_id", s->id}, {"step", 1}, {"horizon", s->horizon}, {"done", s->done()}};
  if (s->pending) out["design"] = design_json(*s->pending, *s->model);
  return out;
}

nlohmann::json SessionStore::post_outcome(const std::string& id, const nlohmann::json& body) {
  std::shared_ptr<Session> s = find(id);
  std::lock_guard lock(s->mutex);
  return outcome_impl(*s, body);
}

nlohmann::json SessionStore::outcome_impl(Session& s, const nlohmann::json& body) {
  if (!body.is_object()) throw ApiError(400, "bad_request", "request body must be a JSON object");
  if (s.done() || !s.pending) {
    throw ApiError(409, "no_pending_design", "session '" + s.id + "' has no pending design",
                   "all " + std::to_string(s.horizon) + " experiments are recorded");
  }
  const Design d = *s.pending;
  const Model& model = *s.model;
  const bool has_y = body.contains("y") && !body.at("y").is_null();
  Outcome y = 0.0;
  Predictive truth{};
  if (s.mode == "simulated") truth = model.predictive(s.theta0, d);
  if (has_y) {
    if (!body.at("y").is_number()) {
      throw ApiError(422, "invalid_outcome", "outcome y must be a number in " + model.outcome_range(d));
    }
    y = body.at("y").get<double>();
    try {
      model.validate_outcome(d, y);
    } catch (const DomainError& e) {
      throw ApiError(422, "invalid_outcome", e.what(), "valid range: " + model.outcome_range(d));
    }
  } else if (s.mode == "simulated") {
    y = model.sample_outcome(truth, d, s.outcome_rng);
  } else {
    throw ApiError(422, "missing_outcome", "live sessions need an outcome y in " + model.outcome_range(d));
  }

  std::vector<double> inc(s.ell.size());
  model.log_likelihoods(s.particles, d, y, inc);
  for (std::size_t i = 0; i < inc.size(); ++i) s.ell[i] += inc[i];
  s.designs.push_back(d);
  s.outcomes.push_back(y);
  s.sampled.push_back(!has_y);
  agents::update_summary(s.summary, s.actor->encoder(), model, d, y);
#ifndef NDEBUG
  const agents::Summary fresh = agents::encode_history(s.actor->encoder(), model, s.designs, s.outcomes);
  if (fresh.values != s.summary.values) throw Error("session summary diverged from its history");
#endif
  if (s.mode == "simulated") {
    s.ell0 += model.log_likelihood(truth, d, y);
    std::vector<double> all{s.ell0};
    all.insert(all.end(), s.ell.begin(), s.ell.end());
    s.information_gain.push_back(g_value(all));
  }
  propose(s);

  nlohmann::json record = {{"event", "outcome"}, {"session_id", s.id}};
  if (has_y) record["y"] = y;
  append_journal(record);

  nlohmann::json out = {{"step", s.t() + (s.done() ? 0 : 1)}, {"y", y}, {"done", s.done()}};
  if (s.pending) out["design"] = design_json(*s.pending, model);
  if (!s.information_gain.empty()) out["information_gain"] = s.information_gain.back();
  return out;
}

nlohmann::json SessionStore::describe(const Session& s) const {
  nlohmann::json history = nlohmann::json::array();
  for (std::size_t k = 0; k < s.t(); ++k) {
    nlohmann::json row = {{"t", k + 1}, {"design", design_json(s.designs[k], *s.model)}, {"y", s.outcomes[k]},
                          {"simulated", static_cast<bool>(s.sampled[k])}};
    if (k < s.information_gain.size()) row["information_gain"] = s.information_gain[k];
    history.push_back(row);
  }
  nlohmann::json out = {{"session_id", s.id},
                        {"model", s.model_id},
                        {"checkpoint", s.checkpoint_id},
                        {"mode", s.mode},
                        {"seed", s.seed},
                        {"horizon", s.horizon},
                        {"step", s.t() + (s.done() ? 0 : 1)},
                        {"done", s.done()},
                        {"n_particles", s.particles.size()},
                        {"history", history}};
  out["design"] = s.pending ? design_json(*s.pending, *s.model) : nlohmann::json(nullptr);
  out["outcome_range"] = s.pending ? nlohmann::json(s.model->outcome_range(*s.pending)) : nlohmann::json(nullptr);
  return out;
}

nlohmann::json SessionStore::get_session(const std::string& id) {
  std::shared_ptr<Session> s = find(id);
  std::lock_guard lock(s->mutex);
  return describe(*s);
}

nlohmann::json SessionStore::get_posterior(const std::string& id, std::optional<std::size_t> n) {
  std::shared_ptr<Session> s = find(id);
  std::lock_guard lock(s->mutex);
  const std::size_t total = s->particles.size();
  const std::size_t count = n.value_or(total);
  if (count < 1 || count > total) {
    throw ApiError(422, "bad_n", "n must lie in [1, " + std::to_string(total) + "]");
  }
  const SnisPosterior post = posterior_snis(s->ell);
  if (post.ess < kMinPosteriorEss) {
    throw ApiError(503, "degenerate_weights",
                   "effective sample size " + std::to_string(post.ess) + " is below " +
                       std::to_string(kMinPosteriorEss),
                   "start a new session with a larger n_particles");
  }
  // The n heaviest particles, ties by index, renormalized.
  std::vector<std::size_t> order(total);
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::stable_sort(order.begin(), order.end(),
                   [&post](std::size_t a, std::size_t b) { return post.weights[a] > post.weights[b]; });
  order.resize(count);
  double kept = 0.0;
  for (std::size_t i : order) kept += post.weights[i];
  nlohmann::json points = nlohmann::json::array();
  for (std::size_t i : order) {
    const auto row = s->particles.row(i);
    points.push_back({{"theta", std::vector<double>(row.begin(), row.end())}, {"weight", post.weights[i] / kept}});
  }
  return {{"session_id", s->id},       {"step", s->t()},
          {"ess", post.ess},           {"n_particles", total},
          {"n", count},                {"theta_names", s->model->theta_names()},
          {"points", points}};
}

nlohmann::json SessionStore::list_checkpoints() const {
  nlohmann::json out = nlohmann::json::array();
  std::error_code ec;
  if (!std::filesystem::is_directory(config_.checkpoints_dir, ec)) return out;
  std::vector<std::filesystem::path> files;
  for (const auto& entry : std::filesystem::directory_iterator(config_.checkpoints_dir, ec)) {
    if (entry.is_regular_file() && entry.path().extension() == ".ckpt") files.push_back(entry.path());
  }
  std::sort(files.begin(), files.end());
  for (const auto& p : files) {
    nlohmann::json item = {{"id", checkpoint_file_id(p)}, {"file", p.filename().string()}};
    try {
      const ad::Checkpoint ckpt = ad::load_checkpoint(p);
      item["status"] = "ok";
      for (const char* key : {"model", "policy_kind", "summary_dim"}) {
        if (ckpt.meta.contains(key)) item[key] = ckpt.meta[key];
      }
      if (ckpt.meta.contains("train_config")) item["train_config"] = ckpt.meta["train_config"];
    } catch (const Error& e) {
      item["status"] = "invalid";
      item["error"] = e.what();
    }
    out.push_back(item);
  }
  return out;
}

nlohmann::json SessionStore::health() const {
  return {{"status", "ok"}, {"sessions", session_count()}, {"checkpoints_dir", config_.checkpoints_dir.string()}};
}

void SessionStore::append_journal(const nlohmann::json& record) {
  if (replaying_) return;
  std::lock_guard lock(journal_mutex_);
  std::ofstream f(journal_path_, std::ios::app | std::ios::binary);
  if (!f) throw Error("cannot append to session journal " + journal_path_.string());
  f << record.dump() << '\n';
  f.flush();
}

void SessionStore::replay_journal() {
  std::ifstream f(journal_path_, std::ios::binary);
  if (!f) return;
  replaying_ = true;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(f, line)) {
    ++lineno;
    if (line.empty()) continue;
    try {
      const nlohmann::json rec = nlohmann::json::parse(line);
      const std::string event = rec.value("event", std::string());
      const std::string id = rec.value("session_id", std::string());
      if (event == "create") {
        create_impl(rec, &id);
      } else if (event == "outcome") {
        std::shared_ptr<Session> s = find(id);
        outcome_impl(*s, rec);
      }
    } catch (const std::exception& e) {
      std::cerr << "journal " << journal_path_.string() << ":" << lineno << " skipped: " << e.what() << '\n';
    }
  }
  replaying_ = false;
}

// ---------------------------------------------------------------------------
// HTTP

struct HttpService::Impl {
  SessionStore& store;
  httplib::Server server;
  explicit Impl(SessionStore& s) : store(s) {}
};

namespace {

void send_json(httplib::Response& res, int status, const nlohmann::json& body) {
  res.status = status;
  res.set_content(body.dump(), "application/json");
}

template <class F>
void guarded(httplib::Response& res, F&& handler) {
  try {
    send_json(res, 200, handler());
  } catch (const ApiError& e) {
    send_json(res, e.status(), e.body());
  } catch (const std::exception& e) {
    send_json(res, 500, {{"code", "internal"}, {"message", e.what()}, {"detail", ""}});
  }
}

nlohmann::json parse_body(const httplib::Request& req) {
  if (req.body.empty()) return nlohmann::json::object();
  try {
    return nlohmann::json::parse(req.body);
  } catch (const nlohmann::json::exception& e) {
    throw ApiError(400, "bad_json", "request body is not valid JSON", e.what());
  }
}

}  // namespace

HttpService::HttpService(SessionStore& store) : impl_(std::make_unique<Impl>(store)) {
  httplib::Server& srv = impl_->server;
  SessionStore* st = &store;
  srv.Post("/api/sessions", [st](const httplib::Request& req, httplib::Response& res) {
    guarded(res, [&] { return st->create_session(parse_body(req)); });
  });
  srv.Post(R"(/api/sessions/([^/]+)/outcomes)", [st](const httplib::Request& req, httplib::Response& res) {
    guarded(res, [&] { return st->post_outcome(req.matches[1].str(), parse_body(req)); });
  });
  srv.Get(R"(/api/sessions/([^/]+)/posterior)", [st](const httplib::Request& req, httplib::Response& res) {
    guarded(res, [&] {
      std::optional<std::size_t> n;
      if (req.has_param("n")) {
        const std::string v = req.get_param_value("n");
        try {
          std::size_t pos = 0;
          const long long parsed = std::stoll(v, &pos);
          if (pos != v.size() || parsed < 1) throw std::invalid_argument(v);
          n = static_cast<std::size_t>(parsed);
        } catch (const std::exception&) {
          throw ApiError(422, "bad_n", "n must be a positive integer, got '" + v + "'");
        }
      }
      return st->get_posterior(req.matches[1].str(), n);
    });
  });
  srv.Get(R"(/api/sessions/([^/]+))", [st](const httplib::Request& req, httplib::Response& res) {
    guarded(res, [&] { return st->get_session(req.matches[1].str()); });
  });
  srv.Get("/api/checkpoints", [st](const httplib::Request&, httplib::Response& res) {
    guarded(res, [&] { return nlohmann::json{{"checkpoints", st->list_checkpoints()}}; });
  });
  srv.Get("/api/health", [st](const httplib::Request&, httplib::Response& res) {
    guarded(res, [&] { return st->health(); });
  });
}

HttpService::~HttpService() { stop(); }

bool HttpService::listen(const std::string& host, int port) { return impl_->server.listen(host, port); }
int HttpService::bind_any_port(const std::string& host) { return impl_->server.bind_to_any_port(host); }
bool HttpService::listen_after_bind() { return impl_->server.listen_after_bind(); }
void HttpService::stop() {
  if (impl_) impl_->server.stop();
}
void HttpService::wait_until_ready() const { impl_->server.wait_until_ready(); }

int serve(const ServiceConfig& config, const std::string& addr) {
  const auto colon = addr.rfind(':');
  if (colon == std::string::npos) throw UsageError("--addr must be HOST:PORT, got '" + addr + "'");
  const std::string host = addr.substr(0, colon);
  int port = 0;
  try {
    port = std::stoi(addr.substr(colon + 1));
  } catch (const std::exception&) {
    throw UsageError("--addr port is not a number: '" + addr + "'");
  }
  if (port < 1 || port > 65535) throw UsageError("--addr port must lie in [1, 65535]");
  SessionStore store(config);
  HttpService http(store);
  std::cerr << "serving " << config.checkpoints_dir.string() << " on http://" << host << ":" << port << '\n';
  if (!http.listen(host, port)) throw Error("cannot listen on " + addr);
  return 0;
}

}  // namespace boed::service
