#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <string>
#include <vector>

#include "json.hpp"

#include "boed/agents.hpp"
#include "boed/error.hpp"
#include "boed/models.hpp"
#include "boed/rng.hpp"

namespace boed::service {

/// Error with an HTTP status and the {code, message, detail} body.
class ApiError : public Error {
 public:
  ApiError(int status, std::string code, const std::string& message, std::string detail = {})
      : Error(message), status_(status), code_(std::move(code)), detail_(std::move(detail)) {}
  int status() const { return status_; }
  const std::string& code() const { return code_; }
  const std::string& detail() const { return detail_; }
  nlohmann::json body() const;

 private:
  int status_;
  std::string code_;
  std::string detail_;
};

struct ServiceConfig {
  std::filesystem::path checkpoints_dir = "checkpoints";
  std::filesystem::path journal;  // empty: <checkpoints_dir>/sessions.jsonl
  std::size_t default_particles = 1000;
  std::size_t max_particles = 200000;
};

/// Session logic without HTTP. Every public method is safe to call concurrently;
/// requests touching one session are serialized.
class SessionStore {
 public:
  explicit SessionStore(ServiceConfig config);
  ~SessionStore();
  SessionStore(const SessionStore&) = delete;
  SessionStore& operator=(const SessionStore&) = delete;

  nlohmann::json create_session(const nlohmann::json& body);
  nlohmann::json post_outcome(const std::string& id, const nlohmann::json& body);
  nlohmann::json get_session(const std::string& id);
  nlohmann::json get_posterior(const std::string& id, std::optional<std::size_t> n);
  nlohmann::json list_checkpoints() const;
  nlohmann::json health() const;

  std::size_t session_count() const;
  const std::filesystem::path& journal_path() const { return journal_path_; }

 private:
  struct Session;
  struct LoadedPolicy {
    std::shared_ptr<const Model> model;
    std::shared_ptr<const agents::Actor> actor;
    std::size_t horizon = 0;
  };

  LoadedPolicy load_policy(const std::string& checkpoint_id, const std::string& model_id);
  std::shared_ptr<Session> find(const std::string& id) const;
  nlohmann::json create_impl(const nlohmann::json& body, const std::string* forced_id);
  nlohmann::json outcome_impl(Session& s, const nlohmann::json& body);
  void propose(Session& s);
  nlohmann::json describe(const Session& s) const;
  void append_journal(const nlohmann::json& record);
  void replay_journal();

  ServiceConfig config_;
  std::filesystem::path journal_path_;
  mutable std::mutex mutex_;  // sessions_, counter_
  std::mutex journal_mutex_;
  std::map<std::string, std::shared_ptr<Session>> sessions_;
  std::uint64_t counter_ = 0;
  bool replaying_ = false;
};

/// HTTP front end for a SessionStore.
class HttpService {
 public:
  explicit HttpService(SessionStore& store);
  ~HttpService();

  /// Binds and serves until stop(); returns false when the address cannot be bound.
  bool listen(const std::string& host, int port);
  /// Binds to a free port and returns it; serve with listen_after_bind().
  int bind_any_port(const std::string& host);
  bool listen_after_bind();
  void stop();
  void wait_until_ready() const;

 private:
  struct Impl;
  std::unique_ptr<Impl> impl_;
};

/// `boed serve`: blocks until the process is interrupted.
int serve(const ServiceConfig& config, const std::string& addr);

}  // namespace boed::service
