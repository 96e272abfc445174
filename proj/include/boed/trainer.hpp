#pragma once

#include <cstddef>
#include <cstdint>
#include <deque>
#include <filesystem>
#include <functional>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "json.hpp"

#include "boed/agents.hpp"
#include "boed/autodiff/adam.hpp"
#include "boed/autodiff/checkpoint.hpp"
#include "boed/models.hpp"
#include "boed/rng.hpp"
#include "boed/sedmdp.hpp"

namespace boed::train {

/// Random streams of a training run: Rng::substream(seed, index, stream), with
/// index 0 for network initialization and updates and the episode number for
/// the environment and the acting policy.
inline constexpr std::uint64_t kInitStream = 0x696e697400000001ULL;
inline constexpr std::uint64_t kEnvStream = 0x656e760000000001ULL;
inline constexpr std::uint64_t kActStream = 0x6163740000000001ULL;
inline constexpr std::uint64_t kUpdateStream = 0x7570640000000001ULL;

enum class BatchSampling {
  kEpisodes,     // whole episodes until the batch is full; every transition stays equally likely
  kTransitions,  // independent uniform transitions
};

struct TrainConfig {
  std::string model = "source";
  std::string profile = "desk";
  std::uint64_t seed = 0;

  std::size_t iterations = 2000;
  std::size_t contrastive = 1000;  // L during training
  std::size_t horizon = 30;        // T
  double gamma = 0.9;
  double target_rate = 1e-3;       // tau
  double actor_lr = 1e-4;
  double critic_lr = 3e-4;
  double alpha_lr = 3e-4;
  std::size_t critics = 2;         // N
  std::size_t critic_subset = 2;   // M
  std::size_t buffer_transitions = 10'000'000;
  std::size_t batch_size = 256;
  std::size_t updates_per_step = 1;  // UTD ratio; an iteration runs T * UTD updates
  std::size_t warmup_transitions = 256;
  sedmdp::RewardMode reward = sedmdp::RewardMode::kDense;
  BatchSampling sampling = BatchSampling::kEpisodes;
  double initial_alpha = 0.1;
  std::optional<double> target_entropy;  // empty: -action_dim (box) or 0.5 log |A| (discrete)
  std::size_t log_interval = 50;
  agents::NetworkShape network;

  /// Per-model defaults; "desk" divides iterations by 10 and L by 100 (floor 1000).
  static TrainConfig defaults(const std::string& model, const std::string& profile = "desk");

  nlohmann::json to_json() const;
  /// Starts from defaults(model, profile) and overrides the keys present. Unknown keys throw UsageError.
  static TrainConfig from_json(const nlohmann::json& j);
  /// Throws UsageError naming the first invalid field.
  void validate() const;
};

std::string to_string(sedmdp::RewardMode mode);
sedmdp::RewardMode parse_reward_mode(const std::string& s);

struct Episode {
  std::vector<Design> designs;
  std::vector<Outcome> outcomes;
  std::vector<double> rewards;
  std::size_t index = 0;  // collection order

  std::size_t length() const { return designs.size(); }
  double total_reward() const;
};

/// Transition t of an episode: state h_t (first t pairs), action d_{t+1}, next state h_{t+1}.
struct TransitionRef {
  std::size_t episode = 0;  // position in the buffer at sampling time
  std::size_t t = 0;
};

/// Whole-episode FIFO storage; evicts the oldest episodes once the transition capacity is exceeded.
class ReplayBuffer {
 public:
  explicit ReplayBuffer(std::size_t capacity_transitions);

  void add(Episode episode);
  std::size_t transitions() const { return transitions_; }
  std::size_t episodes() const { return episodes_.size(); }
  std::size_t capacity() const { return capacity_; }
  const Episode& episode(std::size_t i) const { return episodes_.at(i); }

  std::vector<TransitionRef> sample(std::size_t batch, BatchSampling mode, Rng& rng) const;

 private:
  std::size_t capacity_;
  std::size_t transitions_ = 0;
  std::deque<Episode> episodes_;
};

struct TrainLogRow {
  std::size_t iteration = 0;
  double mean_return = 0.0;
  double return_stderr = 0.0;
  double critic_loss = 0.0;
  double actor_loss = 0.0;
  double alpha = 0.0;
  double seconds = 0.0;
};

void write_train_log_csv(const std::filesystem::path& path, const std::vector<TrainLogRow>& rows);

struct UpdateStats {
  double critic_loss = 0.0;
  double actor_loss = 0.0;
  double alpha = 0.0;
};

/// M distinct critic indices out of N, drawn by a partial Fisher-Yates shuffle.
std::vector<std::size_t> draw_critic_subset(std::size_t members, std::size_t subset, Rng& rng);

/// y = r + gamma * not_done * (min_i q_next[i] - alpha * log pi(a' | B')), elementwise over the batch.
ad::Array soft_bellman_targets(const ad::Array& rewards, const ad::Array& not_done, const std::vector<ad::Array>& q_next,
                               const ad::Array& next_log_prob, double gamma, double alpha);

/// REDQ / SAC learner on the sequential design MDP.
class Trainer {
 public:
  explicit Trainer(TrainConfig config);

  const TrainConfig& config() const { return config_; }
  const Model& model() const { return *model_; }
  agents::Actor& actor() { return *actor_; }
  const agents::Actor& actor() const { return *actor_; }
  agents::CriticEnsemble& critics() { return critics_; }
  agents::CriticEnsemble& target_critics() { return target_; }
  ReplayBuffer& buffer() { return buffer_; }
  double alpha() const;
  double target_entropy() const { return target_entropy_; }

  /// Runs one episode with the sampling policy and stores it.
  const Episode& collect_episode();
  /// Critic regression towards the min over a random M-subset of target critics.
  double critic_update(const std::vector<TransitionRef>& batch);
  /// Policy step against the mean critic, then the temperature step.
  double actor_update(const std::vector<TransitionRef>& batch);
  /// Sample a batch, update critics, actor and temperature, then move the targets.
  UpdateStats update();

  /// Full loop. The callback (optional) sees every log row as it is produced.
  std::vector<TrainLogRow> run(const std::function<void(const TrainLogRow&)>& on_log = {});

  ad::Checkpoint checkpoint() const;

 private:
  struct BatchTensors;
  BatchTensors assemble(const std::vector<TransitionRef>& batch) const;

  TrainConfig config_;
  std::unique_ptr<Model> model_;
  std::unique_ptr<agents::Actor> actor_;
  agents::CriticEnsemble critics_;
  agents::CriticEnsemble target_;
  ad::Adam actor_opt_;
  ad::Adam critic_opt_;
  ad::Adam alpha_opt_;
  ad::Parameter log_alpha_;
  double target_entropy_ = 0.0;
  ReplayBuffer buffer_;
  Rng update_rng_;
  std::size_t episodes_collected_ = 0;
  std::size_t iteration_ = 0;
};

struct TrainResult {
  ad::Checkpoint checkpoint;
  std::vector<TrainLogRow> log;
};

/// Trains with the given config and returns the final policy checkpoint and log.
TrainResult train(const TrainConfig& config, const std::function<void(const TrainLogRow&)>& on_log = {});

}  // namespace boed::train
