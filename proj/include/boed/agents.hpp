#pragma once

#include <cstddef>
#include <memory>
#include <span>
#include <string>
#include <vector>

#include "boed/autodiff/checkpoint.hpp"
#include "boed/autodiff/graph.hpp"
#include "boed/autodiff/mlp.hpp"
#include "boed/estimators.hpp"
#include "boed/models.hpp"
#include "boed/policy.hpp"
#include "boed/rng.hpp"

namespace boed::agents {

struct NetworkShape {
  std::vector<std::size_t> hidden{128, 128};
  std::size_t summary_dim = 64;
};

/// Per-pair history encoder ENC(d, y); the history summary is the sum of encodings.
class Encoder {
 public:
  Encoder() = default;
  Encoder(const Model& model, const NetworkShape& shape, const std::string& prefix, Rng& rng);

  std::size_t summary_dim() const { return net_.spec().output_dim; }
  std::size_t feature_dim() const { return net_.spec().input_dim; }

  /// ENC of a single pair, tape-free.
  std::vector<double> encode(const Model& model, const Design& d, Outcome y) const;
  /// Records encodings of feature rows [P, feature_dim] -> [P, summary_dim].
  ad::Node forward(ad::Graph& g, ad::Node features, bool frozen = false);
  ad::Array apply(const ad::Array& features) const { return net_.apply(features); }

  ad::Mlp& net() { return net_; }
  const ad::Mlp& net() const { return net_; }

 private:
  ad::Mlp net_;
};

/// B_t = sum_{k <= t} ENC(d_k, y_k); B_0 = 0.
///
/// The per-pair encodings are kept and summed in lexicographic order of the
/// encoding vectors, so B is bitwise independent of the pair order and an
/// incremental update reproduces a from-scratch encoding exactly.
struct Summary {
  std::vector<double> values;
  std::size_t step = 0;
  std::vector<std::vector<double>> encodings;
};

Summary zero_summary(std::size_t dim);
/// Adds ENC(d, y) to the running summary.
void update_summary(Summary& summary, const Encoder& encoder, const Model& model, const Design& d, Outcome y);
/// Equal to zero_summary() followed by update_summary() for each pair.
Summary encode_history(const Encoder& encoder, const Model& model, std::span<const Design> designs,
                       std::span<const Outcome> outcomes);

/// Feature rows for a list of pairs.
ad::Array pair_features(const Model& model, std::span<const Design> designs, std::span<const Outcome> outcomes);

enum class PolicyKind { kContinuous, kDiscrete };
std::string to_string(PolicyKind kind);

/// How an actor turns its distribution into an action.
enum class ActMode {
  kSample,   // draw from the policy (training-time exploration)
  kMean,     // continuous: tanh(mean); discrete: argmax of the logits (evaluation)
  kRelaxed,  // discrete only: Gumbel-softmax relaxed vector
};

struct ActionSample {
  Design design;
  std::vector<double> action;  // critic input: normalized design in [-1, 1] or a one-hot / relaxed vector
  double log_prob = 0.0;
};

/// Batched, differentiable policy sample.
struct GraphSample {
  ad::Node action;             // [batch, action_dim]
  ad::Node log_prob;           // [batch, 1] log pi of the sampled action
  ad::Node expected_log_prob;  // [batch, 1] single-sample log pi (continuous) or E_pi[log pi] (discrete)
};

/// Stochastic policy pi(a | B) with its own history encoder.
class Actor {
 public:
  virtual ~Actor() = default;

  virtual PolicyKind kind() const = 0;
  virtual std::size_t action_dim() const = 0;
  virtual std::unique_ptr<Actor> clone() const = 0;

  virtual ActionSample act(std::span<const double> summary, Rng& rng, ActMode mode) const = 0;
  /// Reparameterized (continuous) or straight-through Gumbel-softmax (discrete) sample per row.
  virtual GraphSample sample(ad::Graph& g, ad::Node summaries, Rng& rng) = 0;
  /// Critic-input encoding of a design taken in the environment.
  virtual std::vector<double> action_vector(const Design& d) const = 0;

  Encoder& encoder() { return encoder_; }
  const Encoder& encoder() const { return encoder_; }
  ad::Mlp& head() { return head_; }
  const ad::Mlp& head() const { return head_; }
  std::vector<ad::Parameter*> parameters();
  std::vector<const ad::Parameter*> parameters() const;

 protected:
  Encoder encoder_;
  ad::Mlp head_;
};

/// Independent Tanh-Gaussian per design coordinate, rescaled to the design box.
/// The head emits a mean and a log-variance (clamped to [-20, 2]) per coordinate.
class ContinuousPolicy final : public Actor {
 public:
  static constexpr double kMinLogVar = -20.0;
  static constexpr double kMaxLogVar = 2.0;

  ContinuousPolicy(const Model& model, const NetworkShape& shape, Rng& rng);

  PolicyKind kind() const override { return PolicyKind::kContinuous; }
  std::size_t action_dim() const override { return lower_.size(); }
  std::unique_ptr<Actor> clone() const override { return std::make_unique<ContinuousPolicy>(*this); }

  ActionSample act(std::span<const double> summary, Rng& rng, ActMode mode) const override;
  GraphSample sample(ad::Graph& g, ad::Node summaries, Rng& rng) override;
  std::vector<double> action_vector(const Design& d) const override;

  /// log density of a design-space point given head outputs, including the tanh and affine Jacobians.
  double log_density(std::span<const double> head_out, const Design& d) const;

 private:
  Design to_design(std::span<const double> squashed) const;

  std::vector<double> lower_, upper_;
};

/// Categorical over the discrete design set, trained through a Gumbel-softmax relaxation.
class DiscretePolicy final : public Actor {
 public:
  DiscretePolicy(const Model& model, const NetworkShape& shape, Rng& rng, double temperature = 1.0);

  PolicyKind kind() const override { return PolicyKind::kDiscrete; }
  std::size_t action_dim() const override { return static_cast<std::size_t>(num_choices_); }
  std::unique_ptr<Actor> clone() const override { return std::make_unique<DiscretePolicy>(*this); }

  ActionSample act(std::span<const double> summary, Rng& rng, ActMode mode) const override;
  GraphSample sample(ad::Graph& g, ad::Node summaries, Rng& rng) override;
  std::vector<double> action_vector(const Design& d) const override;

  double temperature() const { return temperature_; }
  /// Relaxed sample softmax((logits + gumbel) / temperature) for given noise.
  std::vector<double> relaxed(std::span<const double> logits, std::span<const double> gumbel,
                              double temperature) const;

 private:
  int first_choice_ = 1;
  int num_choices_ = 0;
  double temperature_ = 1.0;
};

std::unique_ptr<Actor> make_actor(const Model& model, const NetworkShape& shape, Rng& rng);

/// N Q-heads on a shared critic encoder: Q_i(B, a) = head_i([B, a]).
class CriticEnsemble {
 public:
  CriticEnsemble() = default;
  CriticEnsemble(const Model& model, std::size_t action_dim, std::size_t members, const NetworkShape& shape,
                 Rng& rng);

  std::size_t size() const { return heads_.size(); }
  Encoder& encoder() { return encoder_; }
  const Encoder& encoder() const { return encoder_; }

  /// Q_i for a batch, [batch, 1].
  ad::Node q(ad::Graph& g, std::size_t member, ad::Node summaries, ad::Node actions, bool frozen = false);
  /// Tape-free Q_i for a batch of summaries [batch, S] and actions [batch, A].
  ad::Array q_values(std::size_t member, const ad::Array& summaries, const ad::Array& actions) const;

  std::vector<ad::Parameter*> parameters();
  std::vector<const ad::Parameter*> parameters() const;

 private:
  Encoder encoder_;
  std::vector<ad::Mlp> heads_;
};

/// Stable log(1 - tanh(u)^2) = 2 (log 2 - u - softplus(-2u)).
double log1m_tanh_sq(double u);

// ---------------------------------------------------------------------------
// Baselines and DesignPolicy adapters

/// Uniform over the box or the discrete choice set.
Design baseline_random(const Model& model, Rng& rng);

struct MyopicChoice {
  Design design;
  std::vector<double> scores;  // one per candidate
};

/// One-step information score of each candidate using the SNIS-weighted particle
/// set as contrastive samples; returns the argmax (first candidate on ties).
/// Throws NumericalError when the particle ESS drops below 10.
MyopicChoice baseline_myopic_discrete(const Model& model, const ThetaSet& particles, std::span<const double> ell,
                                      std::span<const Design> candidates, std::size_t outer, Rng& rng);

/// Every design of a discrete space.
std::vector<Design> enumerate_designs(const DesignSpace& space);

class RandomPolicy final : public DesignPolicy {
 public:
  explicit RandomPolicy(const Model& model) : model_(&model) {}
  std::string name() const override { return "random"; }
  void reset() override {}
  Design propose(Rng& rng) override { return baseline_random(*model_, rng); }
  void observe(const Design&, Outcome) override {}

 private:
  const Model* model_;
};

class MyopicSnisPolicy final : public DesignPolicy {
 public:
  MyopicSnisPolicy(const Model& model, std::size_t particles, std::size_t outer);
  std::string name() const override { return "myopic-snis"; }
  void reset() override;
  Design propose(Rng& rng) override;
  void observe(const Design& d, Outcome y) override;

 private:
  const Model* model_;
  std::size_t num_particles_;
  std::size_t outer_;
  ThetaSet particles_;
  std::vector<double> ell_;
  std::vector<Design> candidates_;
};

/// Runs a trained actor: keeps the summary up to date and acts in the given mode.
class ActorPolicy final : public DesignPolicy {
 public:
  ActorPolicy(std::shared_ptr<const Actor> actor, const Model& model, ActMode mode = ActMode::kMean);
  std::string name() const override { return "rl"; }
  void reset() override;
  Design propose(Rng& rng) override;
  void observe(const Design& d, Outcome y) override;
  const Summary& summary() const { return summary_; }

 private:
  std::shared_ptr<const Actor> actor_;
  const Model* model_;
  ActMode mode_;
  Summary summary_;
};

// ---------------------------------------------------------------------------
// Persistence

/// Checkpoint metadata keys: policy_kind, model, summary_dim, hidden, plus caller-supplied fields.
ad::Checkpoint make_policy_checkpoint(const Actor& actor, const CriticEnsemble* critics, const Model& model,
                                      const NetworkShape& shape, nlohmann::json extra_meta);

/// Rebuilds the actor stored in a checkpoint; throws UsageError when its model differs from `model`.
std::unique_ptr<Actor> load_actor(const ad::Checkpoint& ckpt, const Model& model);

}  // namespace boed::agents
