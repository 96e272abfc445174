#include "boed/sedmdp.hpp"

#include <cmath>

#include "boed/error.hpp"

namespace boed::sedmdp {

EpisodeContext reset(const Model& model, std::size_t contrastive, std::size_t horizon, RewardMode mode, Rng& rng,
                     double gamma) {
  if (contrastive < 1) throw UsageError("contrastive sample count L must be >= 1");
  if (horizon < 1) throw UsageError("horizon T must be >= 1");
  if (!(gamma >= 0.0 && gamma <= 1.0)) throw UsageError("discount gamma must lie in [0, 1]");
  EpisodeContext ctx;
  ctx.model = &model;
  ctx.horizon = horizon;
  ctx.mode = mode;
  ctx.gamma = gamma;
  ctx.outcome_rng = Rng(rng());
  ctx.thetas = ThetaSet(model.theta_dim(), contrastive + 1);
  for (std::size_t l = 0; l <= contrastive; ++l) model.sample_prior(rng, ctx.thetas.row(l));
  ctx.ell = LogContrastiveLikelihoods(contrastive);
  return ctx;
}

StepResult step(EpisodeContext& ctx, const Design& design) {
  if (ctx.model == nullptr) throw Error("step on an episode that was never reset");
  if (ctx.done()) throw Error("step after the episode finished (t = T = " + std::to_string(ctx.horizon) + ")");
  const Model& model = *ctx.model;
  model.validate_design(design);

  StepResult res;
  const Predictive truth = model.predictive(ctx.thetas.row(0), design);
  res.y = model.sample_outcome(truth, design, ctx.outcome_rng);

  std::vector<double> increments(ctx.thetas.size());
  increments[0] = model.log_likelihood(truth, design, res.y);
  for (std::size_t l = 1; l < ctx.thetas.size(); ++l) {
    increments[l] = model.log_likelihood(model.predictive(ctx.thetas.row(l), design), design, res.y);
  }
  if (!std::isfinite(increments[0])) {
    throw NumericalError(model.id() + ": sampled outcome has non-finite log-likelihood under theta_0");
  }

  res.lse_previous = logsumexp(ctx.ell.values());
  ctx.ell.add(increments);
  res.lse_current = logsumexp(ctx.ell.values());
  res.log_lik_true = increments[0];

  ctx.designs.push_back(design);
  ctx.outcomes.push_back(res.y);
  ctx.last_outcome = res.y;
  ++ctx.t;
  res.done = ctx.done();

  if (ctx.mode == RewardMode::kDense) {
    res.reward = res.log_lik_true - res.lse_current + res.lse_previous;
  } else {
    res.reward = res.done ? g_value(ctx.ell) : 0.0;
  }
  return res;
}

double undiscounted_return(std::span<const double> rewards) {
  double s = 0.0;
  for (double r : rewards) s += r;
  return s;
}

double discounted_return(std::span<const double> rewards, double gamma) {
  double s = 0.0, w = 1.0;
  for (double r : rewards) {
    s += w * r;
    w *= gamma;
  }
  return s;
}

}  // namespace boed::sedmdp
