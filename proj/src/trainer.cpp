#include "boed/trainer.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <numeric>
#include <set>
#include <utility>

#include "boed/error.hpp"

namespace boed::train {

namespace {


struct TableRow {
  std::size_t critics, subset, iterations, contrastive, horizon;
  double gamma, tau, actor_lr, critic_lr;
  std::size_t buffer;
};

TableRow table_row(const std::string& model) {
  if (model == "source") return {2, 2, 20000, 100000, 30, 0.9, 1e-3, 1e-4, 3e-4, 10'000'000};
  if (model == "ces") return {2, 2, 20000, 100000, 10, 0.9, 5e-3, 3e-4, 3e-4, 1'000'000};
  if (model == "prey") return {10, 2, 40000, 10000, 10, 0.95, 1e-2, 1e-4, 1e-3, 1'000'000};
  // Two-step toy problems; values chosen locally.
  if (model == "source1d" || model == "lingauss") return {2, 2, 20000, 100000, 2, 1.0, 5e-3, 3e-4, 3e-4, 1'000'000};
  throw UsageError("unknown model '" + model + "'");
}

const std::set<std::string>& known_keys() {
  static const std::set<std::string> keys{
      "model",          "profile",         "seed",         "iterations",    "contrastive",
      "horizon",        "gamma",           "target_rate",  "actor_lr",      "critic_lr",
      "alpha_lr",       "critics",         "critic_subset", "buffer_transitions", "batch_size",
      "updates_per_step", "warmup_transitions", "reward",  "batch_sampling", "initial_alpha",
      "target_entropy", "log_interval",    "summary_dim",  "hidden"};
  return keys;
}

std::string to_string(BatchSampling s) { return s == BatchSampling::kEpisodes ? "episodes" : "transitions"; }

BatchSampling parse_sampling(const std::string& s) {
  if (s == "episodes") return BatchSampling::kEpisodes;
  if (s == "transitions") return BatchSampling::kTransitions;
  throw UsageError("batch_sampling must be 'episodes' or 'transitions', got '" + s + "'");
}

/// Row sums over index ranges, in the same order as Graph::segment_sum.
ad::Array segment_sums(const ad::Array& rows, const std::vector<std::pair<std::size_t, std::size_t>>& ranges) {
  const std::size_t cols = rows.cols();
  ad::Array out = ad::Array::matrix(ranges.size(), cols);
  for (std::size_t i = 0; i < ranges.size(); ++i) {
    double* o = out.data() + i * cols;
    for (std::size_t r = ranges[i].first; r < ranges[i].second; ++r) {
      const double* x = rows.data() + r * cols;
      for (std::size_t c = 0; c < cols; ++c) o[c] += x[c];
    }
  }
  return out;
}

double mean_of(const ad::Array& a) {
  double s = 0.0;
  for (double v : a.values()) s += v;
  return a.size() ? s / static_cast<double>(a.size()) : 0.0;
}

}  // namespace

std::string to_string(sedmdp::RewardMode mode) { return mode == sedmdp::RewardMode::kDense ? "dense" : "sparse"; }

sedmdp::RewardMode parse_reward_mode(const std::string& s) {
  if (s == "dense") return sedmdp::RewardMode::kDense;
  if (s == "sparse") return sedmdp::RewardMode::kSparse;
  throw UsageError("reward must be 'dense' or 'sparse', got '" + s + "'");
}

// ---------------------------------------------------------------------------
// Config

TrainConfig TrainConfig::defaults(const std::string& model, const std::string& profile) {
  if (profile != "desk" && profile != "paper") throw UsageError("profile must be 'desk' or 'paper', got '" + profile + "'");
  const TableRow row = table_row(model);
  TrainConfig c;
  c.model = model;
  c.profile = profile;
  c.critics = row.critics;
  c.critic_subset = row.subset;
  c.iterations = row.iterations;
  c.contrastive = row.contrastive;
  c.horizon = row.horizon;
  c.gamma = row.gamma;
  c.target_rate = row.tau;
  c.actor_lr = row.actor_lr;
  c.critic_lr = row.critic_lr;
  c.buffer_transitions = row.buffer;
  if (profile == "desk") {
    c.iterations = row.iterations / 10;
    c.contrastive = std::max<std::size_t>(1000, row.contrastive / 100);
  }
  return c;
}

nlohmann::json TrainConfig::to_json() const {
  nlohmann::json j;
  j["model"] = model;
  j["profile"] = profile;
  j["seed"] = seed;
  j["iterations"] = iterations;
  j["contrastive"] = contrastive;
  j["horizon"] = horizon;
  j["gamma"] = gamma;
  j["target_rate"] = target_rate;
  j["actor_lr"] = actor_lr;
  j["critic_lr"] = critic_lr;
  j["alpha_lr"] = alpha_lr;
  j["critics"] = critics;
  j["critic_subset"] = critic_subset;
  j["buffer_transitions"] = buffer_transitions;
  j["batch_size"] = batch_size;
  j["updates_per_step"] = updates_per_step;
  j["warmup_transitions"] = warmup_transitions;
  j["reward"] = to_string(reward);
  j["batch_sampling"] = to_string(sampling);
  j["initial_alpha"] = initial_alpha;
  j["target_entropy"] = target_entropy ? nlohmann::json(*target_entropy) : nlohmann::json(nullptr);
  j["log_interval"] = log_interval;
  j["summary_dim"] = network.summary_dim;
  j["hidden"] = network.hidden;
  return j;
}

TrainConfig TrainConfig::from_json(const nlohmann::json& j) {
  if (!j.is_object()) throw UsageError("training config must be a JSON object");
  for (const auto& [key, _] : j.items()) {
    if (!known_keys().count(key)) throw UsageError("unknown training config key '" + key + "'");
  }
  TrainConfig c = defaults(j.value("model", std::string("source")), j.value("profile", std::string("desk")));
  try {
    auto get = [&j](const char* key, auto& field) {
      if (j.contains(key)) field = j.at(key).get<std::remove_reference_t<decltype(field)>>();
    };
    get("seed", c.seed);
    get("iterations", c.iterations);
    get("contrastive", c.contrastive);
    get("horizon", c.horizon);
    get("gamma", c.gamma);
    get("target_rate", c.target_rate);
    get("actor_lr", c.actor_lr);
    get("critic_lr", c.critic_lr);
    get("alpha_lr", c.alpha_lr);
    get("critics", c.critics);
    get("critic_subset", c.critic_subset);
    get("buffer_transitions", c.buffer_transitions);
    get("batch_size", c.batch_size);
    get("updates_per_step", c.updates_per_step);
    get("warmup_transitions", c.warmup_transitions);
    get("initial_alpha", c.initial_alpha);
    get("log_interval", c.log_interval);
    get("summary_dim", c.network.summary_dim);
    get("hidden", c.network.hidden);
    if (j.contains("reward")) c.reward = parse_reward_mode(j.at("reward").get<std::string>());
    if (j.contains("batch_sampling")) c.sampling = parse_sampling(j.at("batch_sampling").get<std::string>());
    if (j.contains("target_entropy")) {
      const auto& te = j.at("target_entropy");
      c.target_entropy = te.is_null() ? std::nullopt : std::optional<double>(te.get<double>());
    }
  } catch (const nlohmann::json::exception& e) {
    throw UsageError(std::string("training config: ") + e.what());
  }
  c.validate();
  return c;
}

void TrainConfig::validate() const {
  table_row(model);
  auto fail = [](const std::string& what) { throw UsageError("training config: " + what); };
  if (profile != "desk" && profile != "paper") fail("profile must be 'desk' or 'paper'");
  if (critics < 2) fail("critics (N) must be >= 2");
  if (critic_subset < 2 || critic_subset > critics) fail("critic_subset (M) must satisfy 2 <= M <= N");
  if (iterations < 1) fail("iterations must be >= 1");
  if (contrastive < 1) fail("contrastive (L) must be >= 1");
  if (horizon < 1) fail("horizon (T) must be >= 1");
  if (!(gamma >= 0.0 && gamma <= 1.0)) fail("gamma must lie in [0, 1]");
  if (!(target_rate > 0.0 && target_rate <= 1.0)) fail("target_rate must lie in (0, 1]");
  if (!(actor_lr > 0) || !(critic_lr > 0) || !(alpha_lr > 0)) fail("learning rates must be > 0");
  if (batch_size < 1) fail("batch_size must be >= 1");
  if (buffer_transitions < horizon) fail("buffer_transitions must hold at least one episode");
  if (updates_per_step < 1) fail("updates_per_step must be >= 1");
  if (!(initial_alpha > 0)) fail("initial_alpha must be > 0");
  if (log_interval < 1) fail("log_interval must be >= 1");
  if (network.summary_dim < 1 || network.hidden.empty()) fail("network needs a summary width and hidden layers");
}

// ---------------------------------------------------------------------------
// Replay buffer

double Episode::total_reward() const { return std::accumulate(rewards.begin(), rewards.end(), 0.0); }

ReplayBuffer::ReplayBuffer(std::size_t capacity_transitions) : capacity_(capacity_transitions) {
  if (capacity_ < 1) throw UsageError("replay buffer capacity must be >= 1");
}

void ReplayBuffer::add(Episode episode) {
  const std::size_t len = episode.length();
  if (len == 0 || episode.outcomes.size() != len || episode.rewards.size() != len) {
    throw UsageError("replay buffer: malformed episode");
  }
  if (!episodes_.empty() && episodes_.front().length() != len) {
    throw UsageError("replay buffer: episodes must share one length");
  }
  if (len > capacity_) throw UsageError("replay buffer: episode longer than the capacity");
  while (transitions_ + len > capacity_) {
    transitions_ -= episodes_.front().length();
    episodes_.pop_front();
  }
  transitions_ += len;
  episodes_.push_back(std::move(episode));
}

std::vector<TransitionRef> ReplayBuffer::sample(std::size_t batch, BatchSampling mode, Rng& rng) const {
  if (episodes_.empty()) throw UsageError("cannot sample from an empty replay buffer");
  if (batch > transitions_) {
    throw UsageError("batch of " + std::to_string(batch) + " exceeds the " + std::to_string(transitions_) +
                     " stored transitions");
  }
  const std::size_t len = episodes_.front().length();
  const int last = static_cast<int>(episodes_.size()) - 1;
  std::vector<TransitionRef> out;
  out.reserve(batch + len);
  if (mode == BatchSampling::kTransitions) {
    for (std::size_t b = 0; b < batch; ++b) {
      const auto e = static_cast<std::size_t>(rng.uniform_int(0, last));
      const auto t = static_cast<std::size_t>(rng.uniform_int(0, static_cast<int>(len) - 1));
      out.push_back({e, t});
    }
  } else {
    while (out.size() < batch) {
      const auto e = static_cast<std::size_t>(rng.uniform_int(0, last));
      for (std::size_t t = 0; t < len; ++t) out.push_back({e, t});
    }
  }
  return out;
}

void write_train_log_csv(const std::filesystem::path& path, const std::vector<TrainLogRow>& rows) {
  std::ofstream f(path, std::ios::binary);
  if (!f) throw Error("cannot write " + path.string());
  f << "iteration,mean_return,return_stderr,critic_loss,actor_loss,alpha,seconds\n";
  char buf[512];
  for (const TrainLogRow& r : rows) {
    std::snprintf(buf, sizeof buf, "%zu,%.17g,%.17g,%.17g,%.17g,%.17g,%.3f\n", r.iteration, r.mean_return,
                  r.return_stderr, r.critic_loss, r.actor_loss, r.alpha, r.seconds);
    f << buf;
  }
  if (!f) throw Error("failed writing " + path.string());
}

// ---------------------------------------------------------------------------
// Trainer

struct Trainer::BatchTensors {
  ad::Array features;  // [pairs, F], one block per distinct episode
  std::vector<std::pair<std::size_t, std::size_t>> now;   // rows of h_t
  std::vector<std::pair<std::size_t, std::size_t>> next;  // rows of h_{t+1}
  ad::Array actions;   // [B, A]
  ad::Array rewards;   // [B, 1]
  ad::Array not_done;  // [B, 1]
};

Trainer::Trainer(TrainConfig config)
    : config_(std::move(config)),
      buffer_(1),
      update_rng_(Rng::substream(config_.seed, 0, kUpdateStream)) {
  config_.validate();
  model_ = make_model(config_.model);
  Rng init = Rng::substream(config_.seed, 0, kInitStream);
  actor_ = agents::make_actor(*model_, config_.network, init);
  critics_ = agents::CriticEnsemble(*model_, actor_->action_dim(), config_.critics, config_.network, init);
  target_ = critics_;
  actor_opt_ = ad::Adam({config_.actor_lr});
  critic_opt_ = ad::Adam({config_.critic_lr});
  alpha_opt_ = ad::Adam({config_.alpha_lr});
  log_alpha_ = {"log_alpha", ad::Array::scalar(std::log(config_.initial_alpha))};
  const double a = static_cast<double>(actor_->action_dim());
  target_entropy_ = config_.target_entropy.value_or(actor_->kind() == agents::PolicyKind::kContinuous
                                                         ? -a
                                                         : 0.5 * std::log(a));
  buffer_ = ReplayBuffer(config_.buffer_transitions);
}

double Trainer::alpha() const { return std::exp(log_alpha_.value[0]); }

const Episode& Trainer::collect_episode() {
  const std::size_t index = episodes_collected_++;
  Rng env = Rng::substream(config_.seed, index, kEnvStream);
  Rng act = Rng::substream(config_.seed, index, kActStream);
  auto ctx = sedmdp::reset(*model_, config_.contrastive, config_.horizon, config_.reward, env, config_.gamma);
  agents::Summary summary = agents::zero_summary(actor_->encoder().summary_dim());
  Episode ep;
  ep.index = index;
  while (!ctx.done()) {
    const agents::ActionSample a = actor_->act(summary.values, act, agents::ActMode::kSample);
    const sedmdp::StepResult res = sedmdp::step(ctx, a.design);
    ep.designs.push_back(a.design);
    ep.outcomes.push_back(res.y);
    ep.rewards.push_back(res.reward);
    agents::update_summary(summary, actor_->encoder(), *model_, a.design, res.y);
  }
  buffer_.add(std::move(ep));
  return buffer_.episode(buffer_.episodes() - 1);
}

Trainer::BatchTensors Trainer::assemble(const std::vector<TransitionRef>& batch) const {
  BatchTensors bt;
  // Each distinct episode contributes the pairs up to the longest prefix it needs.
  std::vector<std::size_t> order;
  std::vector<std::size_t> need(buffer_.episodes(), 0);
  for (const TransitionRef& r : batch) {
    if (need[r.episode] == 0) order.push_back(r.episode);
    need[r.episode] = std::max(need[r.episode], r.t + 1);
  }
  std::vector<std::size_t> offset(buffer_.episodes(), 0);
  std::size_t pairs = 0;
  for (std::size_t e : order) {
    offset[e] = pairs;
    pairs += need[e];
  }
  const std::size_t f = model_->feature_dim();
  bt.features = ad::Array::matrix(pairs, f);
  for (std::size_t e : order) {
    const Episode& ep = buffer_.episode(e);
    for (std::size_t k = 0; k < need[e]; ++k) {
      const std::vector<double> row = model_->features(ep.designs[k], ep.outcomes[k]);
      std::copy(row.begin(), row.end(), bt.features.data() + (offset[e] + k) * f);
    }
  }
  const std::size_t a_dim = actor_->action_dim();
  bt.actions = ad::Array::matrix(batch.size(), a_dim);
  bt.rewards = ad::Array::matrix(batch.size(), 1);
  bt.not_done = ad::Array::matrix(batch.size(), 1);
  for (std::size_t b = 0; b < batch.size(); ++b) {
    const TransitionRef& r = batch[b];
    const Episode& ep = buffer_.episode(r.episode);
    bt.now.emplace_back(offset[r.episode], offset[r.episode] + r.t);
    bt.next.emplace_back(offset[r.episode], offset[r.episode] + r.t + 1);
    const std::vector<double> a = actor_->action_vector(ep.designs[r.t]);
    std::copy(a.begin(), a.end(), bt.actions.data() + b * a_dim);
    bt.rewards[b] = ep.rewards[r.t];
    bt.not_done[b] = r.t + 1 < ep.length() ? 1.0 : 0.0;
  }
  return bt;
}

std::vector<std::size_t> draw_critic_subset(std::size_t members, std::size_t subset, Rng& rng) {
  if (subset < 1 || subset > members) throw UsageError("critic subset must lie in [1, " + std::to_string(members) + "]");
  std::vector<std::size_t> idx(members);
  std::iota(idx.begin(), idx.end(), std::size_t{0});
  for (std::size_t i = 0; i < subset; ++i) {
    const auto j = static_cast<std::size_t>(rng.uniform_int(static_cast<int>(i), static_cast<int>(members) - 1));
    std::swap(idx[i], idx[j]);
  }
  idx.resize(subset);
  return idx;
}

ad::Array soft_bellman_targets(const ad::Array& rewards, const ad::Array& not_done, const std::vector<ad::Array>& q_next,
                               const ad::Array& next_log_prob, double gamma, double alpha) {
  ad::Array y = rewards;
  if (gamma == 0.0) return y;
  if (q_next.empty()) throw Error("soft_bellman_targets needs at least one critic");
  for (std::size_t b = 0; b < y.size(); ++b) {
    double q_min = q_next[0][b];
    for (std::size_t i = 1; i < q_next.size(); ++i) q_min = std::min(q_min, q_next[i][b]);
    y[b] += gamma * not_done[b] * (q_min - alpha * next_log_prob[b]);
  }
  return y;
}

double Trainer::critic_update(const std::vector<TransitionRef>& batch) {
  const BatchTensors bt = assemble(batch);
  const std::size_t n = batch.size();

  // Bootstrapped targets, no gradients.
  ad::Array y = bt.rewards;
  if (config_.gamma > 0) {
    const ad::Array actor_next = segment_sums(actor_->encoder().apply(bt.features), bt.next);
    ad::Graph scratch;
    const agents::GraphSample next = actor_->sample(scratch, scratch.constant(actor_next), update_rng_);
    const ad::Array& a_next = scratch.value(next.action);
    const ad::Array& logp_next = scratch.value(next.log_prob);
    const ad::Array target_next = segment_sums(target_.encoder().apply(bt.features), bt.next);

    const std::vector<std::size_t> members = draw_critic_subset(target_.size(), config_.critic_subset, update_rng_);
    std::vector<ad::Array> q_next;
    for (const std::size_t m : members) q_next.push_back(target_.q_values(m, target_next, a_next));
    y = soft_bellman_targets(bt.rewards, bt.not_done, q_next, logp_next, config_.gamma, alpha());
  }
  if (!y.all_finite()) {
    throw NumericalError("critic targets are not finite (batch of " + std::to_string(n) + ", alpha " +
                         std::to_string(alpha()) + ")");
  }

  ad::Graph g;
  const ad::Node s = g.segment_sum(critics_.encoder().forward(g, g.constant(bt.features)), bt.now);
  const ad::Node actions = g.constant(bt.actions);
  const ad::Node target = g.constant(std::move(y));
  ad::Node loss{};
  for (std::size_t i = 0; i < critics_.size(); ++i) {
    const ad::Node diff = g.sub(critics_.q(g, i, s, actions), target);
    const ad::Node mse = g.mean(g.multiply(diff, diff));
    loss = i == 0 ? mse : g.add(loss, mse);
  }
  const double value = g.value(loss)[0] / static_cast<double>(critics_.size());
  critic_opt_.step(critics_.parameters(), g.backward(loss));
  return value;
}

double Trainer::actor_update(const std::vector<TransitionRef>& batch) {
  const BatchTensors bt = assemble(batch);
  const ad::Array critic_now = segment_sums(critics_.encoder().apply(bt.features), bt.now);

  ad::Graph g;
  const ad::Node s = g.segment_sum(actor_->encoder().forward(g, g.constant(bt.features)), bt.now);
  const agents::GraphSample pi = actor_->sample(g, s, update_rng_);
  const ad::Node sq = g.constant(critic_now);
  ad::Node q_sum{};
  for (std::size_t i = 0; i < critics_.size(); ++i) {
    const ad::Node q = critics_.q(g, i, sq, pi.action, /*frozen=*/true);
    q_sum = i == 0 ? q : g.add(q_sum, q);
  }
  const double a = alpha();
  const ad::Node q_mean = g.scale(q_sum, 1.0 / static_cast<double>(critics_.size()));
  const ad::Node loss = g.mean(g.sub(g.scale(pi.expected_log_prob, a), q_mean));
  const double value = g.value(loss)[0];
  const double mean_log_prob = mean_of(g.value(pi.expected_log_prob));
  actor_opt_.step(actor_->parameters(), g.backward(loss));

  // Temperature: minimize -log_alpha * (E[log pi] + target entropy).
  ad::Gradients ga;
  ga.emplace(log_alpha_.name, ad::Array::scalar(-(mean_log_prob + target_entropy_)));
  alpha_opt_.step({&log_alpha_}, ga);
  return value;
}

UpdateStats Trainer::update() {
  const std::vector<TransitionRef> batch = buffer_.sample(config_.batch_size, config_.sampling, update_rng_);
  UpdateStats st;
  st.critic_loss = critic_update(batch);
  st.actor_loss = actor_update(batch);
  ad::soft_update(target_.parameters(), std::as_const(critics_).parameters(), config_.target_rate);
  st.alpha = alpha();
  return st;
}

std::vector<TrainLogRow> Trainer::run(const std::function<void(const TrainLogRow&)>& on_log) {
  using Clock = std::chrono::steady_clock;
  const auto start = Clock::now();
  std::vector<TrainLogRow> log;
  std::vector<double> returns;
  double critic_sum = 0.0, actor_sum = 0.0;
  std::size_t updates = 0;
  const std::size_t warmup = std::max(config_.warmup_transitions, config_.batch_size);
  for (std::size_t it = 1; it <= config_.iterations; ++it) {
    iteration_ = it;
    try {
      returns.push_back(collect_episode().total_reward());
      if (buffer_.transitions() >= warmup) {
        for (std::size_t u = 0; u < config_.horizon * config_.updates_per_step; ++u) {
          const UpdateStats st = update();
          critic_sum += st.critic_loss;
          actor_sum += st.actor_loss;
          ++updates;
        }
      }
    } catch (const Error& e) {
      throw Error("training iteration " + std::to_string(it) + ": " + e.what());
    }
    if (it % config_.log_interval == 0 || it == config_.iterations) {
      const BoundEstimate est = summarize(returns, BoundKind::kLower, config_.contrastive, config_.horizon);
      TrainLogRow row;
      row.iteration = it;
      row.mean_return = est.mean;
      row.return_stderr = est.stderr_;
      row.critic_loss = updates ? critic_sum / static_cast<double>(updates) : 0.0;
      row.actor_loss = updates ? actor_sum / static_cast<double>(updates) : 0.0;
      row.alpha = alpha();
      row.seconds = std::chrono::duration<double>(Clock::now() - start).count();
      log.push_back(row);
      if (on_log) on_log(row);
      returns.clear();
      critic_sum = actor_sum = 0.0;
      updates = 0;
    }
  }
  return log;
}

ad::Checkpoint Trainer::checkpoint() const {
  nlohmann::json meta;
  meta["train_config"] = config_.to_json();
  meta["iterations_completed"] = iteration_;
  meta["episodes_collected"] = episodes_collected_;
  meta["alpha"] = alpha();
  return agents::make_policy_checkpoint(*actor_, &critics_, *model_, config_.network, std::move(meta));
}

TrainResult train(const TrainConfig& config, const std::function<void(const TrainLogRow&)>& on_log) {
  Trainer trainer(config);
  TrainResult result;
  result.log = trainer.run(on_log);
  result.checkpoint = trainer.checkpoint();
  return result;
}

}  // namespace boed::train
