#pragma once

#include <cstddef>
#include <span>
#include <vector>

#include "boed/estimators.hpp"
#include "boed/models.hpp"
#include "boed/rng.hpp"

namespace boed::sedmdp {

enum class RewardMode { kDense, kSparse };

/// Environment state of one episode of the hidden-parameter MDP.
///
/// thetas.row(0) generates outcomes; rows 1..L are contrastive. Only prior
/// draws and likelihood evaluations are ever used; there is no posterior here.
struct EpisodeContext {
  const Model* model = nullptr;
  ThetaSet thetas;
  std::size_t horizon = 0;  // T
  std::size_t t = 0;
  std::vector<Design> designs;
  std::vector<Outcome> outcomes;
  LogContrastiveLikelihoods ell;
  Outcome last_outcome = 0.0;  // y_t; unused by reward and policy
  RewardMode mode = RewardMode::kDense;
  double gamma = 1.0;
  Rng outcome_rng;

  std::size_t contrastive() const { return thetas.size() - 1; }
  bool done() const { return t == horizon; }
};

struct StepResult {
  Outcome y = 0.0;
  double reward = 0.0;
  bool done = false;
  double log_lik_true = 0.0;   // log p(y_t | theta_0, d_t)
  double lse_current = 0.0;    // logsumexp(ell_t)
  double lse_previous = 0.0;   // logsumexp(ell_{t-1})
};

/// Draws an outcome-stream seed and then theta_0..theta_L i.i.d. from the prior, in that order.
EpisodeContext reset(const Model& model, std::size_t contrastive, std::size_t horizon, RewardMode mode,
                     Rng& rng, double gamma = 1.0);

/// Samples y_t under theta_0, updates ell additively and returns the reward.
/// Throws Error after the final step and DomainError for designs outside the space.
StepResult step(EpisodeContext& ctx, const Design& design);

double undiscounted_return(std::span<const double> rewards);
double discounted_return(std::span<const double> rewards, double gamma);

}  // namespace boed::sedmdp
