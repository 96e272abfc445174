#include "boed/estimators.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numbers>

#include "boed/error.hpp"
#include "boed/sedmdp.hpp"

namespace boed {

namespace {

constexpr double kNegInf = -std::numeric_limits<double>::infinity();

}  // namespace

double logsumexp(std::span<const double> x) {
  if (x.empty()) return kNegInf;
  const double m = *std::max_element(x.begin(), x.end());
  if (!std::isfinite(m)) return m;
  double s = 0.0;
  for (double v : x) s += std::exp(v - m);
  return m + std::log(s);
}

void LogContrastiveLikelihoods::add(std::span<const double> increments) {
  if (increments.size() != ell_.size()) {
    throw Error("contrastive likelihood update has " + std::to_string(increments.size()) + " entries, expected " +
                std::to_string(ell_.size()));
  }
  for (std::size_t l = 0; l < ell_.size(); ++l) ell_[l] += increments[l];
  ++step_;
}

double g_value(std::span<const double> ell) {
  if (ell.empty()) throw Error("g_value: empty contrastive vector");
  return ell[0] - logsumexp(ell) + std::log(static_cast<double>(ell.size()));
}

double g_upper_value(std::span<const double> ell) {
  if (ell.size() < 2) throw Error("g_upper_value: need at least one contrastive sample");
  return ell[0] - logsumexp(ell.subspan(1)) + std::log(static_cast<double>(ell.size() - 1));
}

BoundEstimate summarize(std::span<const double> samples, BoundKind kind, std::size_t contrastive,
                        std::size_t horizon) {
  BoundEstimate est;
  est.kind = kind;
  est.contrastive = contrastive;
  est.horizon = horizon;
  est.rollouts = samples.size();
  if (samples.empty()) return est;
  double sum = 0.0;
  for (double v : samples) sum += v;
  const double n = static_cast<double>(samples.size());
  est.mean = sum / n;
  if (samples.size() > 1) {
    double ss = 0.0;
    for (double v : samples) ss += (v - est.mean) * (v - est.mean);
    est.stderr_ = std::sqrt(ss / (n - 1.0)) / std::sqrt(n);
  }
  return est;
}

namespace {

BoundEstimate aggregate(const RolloutSet& set, std::size_t t, BoundKind kind) {
  if (t == 0 || t > set.horizon) throw Error("bound requested at t=" + std::to_string(t) + " outside [1, T]");
  std::vector<double> samples;
  samples.reserve(set.rollouts.size());
  for (const RolloutTrace& r : set.rollouts) samples.push_back(kind == BoundKind::kLower ? r.lower[t - 1] : r.upper[t - 1]);
  return summarize(samples, kind, set.contrastive, t);
}

}  // namespace

BoundEstimate RolloutSet::lower_at(std::size_t t) const { return aggregate(*this, t, BoundKind::kLower); }
BoundEstimate RolloutSet::upper_at(std::size_t t) const { return aggregate(*this, t, BoundKind::kUpper); }

RolloutSet run_rollouts(const PolicyFactory& policy_factory, const Model& model, std::size_t contrastive,
                        std::size_t horizon, std::size_t rollouts, std::uint64_t seed) {
  if (contrastive < 1) throw UsageError("contrastive sample count L must be >= 1");
  if (horizon < 1) throw UsageError("horizon T must be >= 1");
  RolloutSet set;
  set.contrastive = contrastive;
  set.horizon = horizon;
  set.rollouts.reserve(rollouts);
  for (std::size_t r = 0; r < rollouts; ++r) {
    Rng env_rng = Rng::substream(seed, r);
    auto ctx = sedmdp::reset(model, contrastive, horizon, sedmdp::RewardMode::kDense, env_rng);
    auto policy = policy_factory();
    policy->reset();
    Rng policy_rng = Rng::substream(seed, r, kPolicyStream);
    RolloutTrace trace;
    for (std::size_t t = 1; t <= horizon; ++t) {
      Design d = policy->propose(policy_rng);
      sedmdp::StepResult res;
      try {
        res = sedmdp::step(ctx, d);
      } catch (const DomainError& e) {
        throw DomainError("policy '" + policy->name() + "' rollout " + std::to_string(r) + " step " +
                          std::to_string(t) + ": " + e.what());
      }
      policy->observe(d, res.y);
      trace.lower.push_back(g_value(ctx.ell));
      trace.upper.push_back(g_upper_value(ctx.ell));
      trace.designs.push_back(std::move(d));
      trace.outcomes.push_back(res.y);
    }
    set.rollouts.push_back(std::move(trace));
  }
  return set;
}

BoundEstimate spce(const PolicyFactory& policy, const Model& model, std::size_t contrastive, std::size_t horizon,
                   std::size_t rollouts, std::uint64_t seed) {
  return run_rollouts(policy, model, contrastive, horizon, rollouts, seed).lower_at(horizon);
}

BoundEstimate snmc(const PolicyFactory& policy, const Model& model, std::size_t contrastive, std::size_t horizon,
                   std::size_t rollouts, std::uint64_t seed) {
  return run_rollouts(policy, model, contrastive, horizon, rollouts, seed).upper_at(horizon);
}

BoundEstimate pce(const Model& model, const Design& design, std::size_t contrastive, std::size_t outer,
                  std::uint64_t seed) {
  model.validate_design(design);
  PolicyFactory fixed = [&design] { return std::make_unique<FixedDesignPolicy>(design); };
  return spce(fixed, model, contrastive, 1, outer, seed);
}

// ---------------------------------------------------------------------------
// 1-D oracle

double eig_1d_oracle(const SourceModel& model, double design, const OracleGrid& grid) {
  const SourceParams& p = model.params();
  if (p.num_sources != 1 || p.dim != 1) throw DomainError("eig_1d_oracle needs the one-source 1-D model");
  if (grid.theta_points < 3 || grid.outcome_points < 3) throw DomainError("eig_1d_oracle: grids need >= 3 points");
  const double prior_sd = 1.0;
  const double lo = -grid.theta_sigmas * prior_sd, hi = grid.theta_sigmas * prior_sd;
  const double tail = std::erfc(grid.theta_sigmas / std::numbers::sqrt2);
  if (tail > 1e-4) {
    throw DomainError("eig_1d_oracle: theta grid leaves prior tail mass " + std::to_string(tail) + " > 1e-4");
  }

  // theta = d + c sinh(v) with v uniform: dense where the intensity spikes, log-spaced elsewhere.
  const double c = std::sqrt(p.max_signal);
  const double v_lo = std::asinh((lo - design) / c), v_hi = std::asinh((hi - design) / c);
  const std::size_t nt = grid.theta_points;
  const double dv = (v_hi - v_lo) / static_cast<double>(nt - 1);
  std::vector<double> weight(nt), mean(nt);
  double covered = 0.0;
  for (std::size_t i = 0; i < nt; ++i) {
    const double v = v_lo + dv * static_cast<double>(i);
    const double theta = design + c * std::sinh(v);
    const double trap = (i == 0 || i + 1 == nt) ? 0.5 : 1.0;
    const double prior = std::exp(-0.5 * theta * theta) / std::sqrt(2.0 * std::numbers::pi);
    weight[i] = trap * dv * c * std::cosh(v) * prior;
    covered += weight[i];
    const double s = theta - design;
    mean[i] = std::log(p.background + 1.0 / (p.max_signal + s * s));
  }
  if (std::abs(1.0 - covered) > 1e-4) {
    throw DomainError("eig_1d_oracle: theta grid integrates the prior to " + std::to_string(covered));
  }
  for (double& w : weight) w /= covered;

  const double sd = p.noise_sd;
  const auto [mn, mx] = std::minmax_element(mean.begin(), mean.end());
  const double y_lo = *mn - grid.outcome_margin * sd, y_hi = *mx + grid.outcome_margin * sd;
  const std::size_t ny = grid.outcome_points;
  const double dy = (y_hi - y_lo) / static_cast<double>(ny - 1);
  const double norm = 1.0 / (sd * std::sqrt(2.0 * std::numbers::pi));
  double entropy = 0.0, mass = 0.0;
  for (std::size_t j = 0; j < ny; ++j) {
    const double y = y_lo + dy * static_cast<double>(j);
    double marginal = 0.0;
    for (std::size_t i = 0; i < nt; ++i) {
      const double z = (y - mean[i]) / sd;
      marginal += weight[i] * norm * std::exp(-0.5 * z * z);
    }
    const double trap = (j == 0 || j + 1 == ny) ? 0.5 : 1.0;
    mass += trap * dy * marginal;
    if (marginal > 0) entropy -= trap * dy * marginal * std::log(marginal);
  }
  if (std::abs(1.0 - mass) > 1e-4) {
    throw DomainError("eig_1d_oracle: outcome grid integrates the marginal to " + std::to_string(mass));
  }
  const double conditional_entropy = 0.5 * std::log(2.0 * std::numbers::pi * std::numbers::e * sd * sd);
  return entropy - conditional_entropy;
}

GridOptimum grid_search_optimal_design_1d(const SourceModel& model, double step, const OracleGrid& grid) {
  if (!(step > 0)) throw DomainError("grid step must be positive");
  const double box = model.params().box;
  const auto half = static_cast<long>(std::floor(box / step + 1e-9));
  GridOptimum out;
  bool have = false;
  for (long i = -half; i <= half; ++i) {
    const double d = static_cast<double>(i) * step;
    const double eig = eig_1d_oracle(model, d, grid);
    out.designs.push_back(d);
    out.eigs.push_back(eig);
    if (!have) {
      out.design = d;
      out.eig = eig;
      have = true;
      continue;
    }
    const double tol = 1e-12 * std::max(1.0, std::abs(out.eig));
    const bool better = eig > out.eig + tol;
    const bool tie = std::abs(eig - out.eig) <= tol;
    const bool canonical = std::abs(d) < std::abs(out.design) ||
                           (std::abs(d) == std::abs(out.design) && d > out.design);
    if (better) {
      out.design = d;
      out.eig = eig;
    } else if (tie && canonical) {
      out.design = d;
      out.eig = std::max(eig, out.eig);
    }
  }
  return out;
}

SnisPosterior posterior_snis(std::span<const double> ell) {
  if (ell.empty()) throw Error("posterior_snis: no samples");
  const double lse = logsumexp(ell);
  if (!std::isfinite(lse)) throw NumericalError("posterior_snis: every sample has zero likelihood");
  SnisPosterior post;
  post.weights.resize(ell.size());
  double sum = 0.0, sq = 0.0;
  for (std::size_t i = 0; i < ell.size(); ++i) {
    post.weights[i] = std::exp(ell[i] - lse);
    sum += post.weights[i];
  }
  for (double& w : post.weights) {
    w /= sum;
    sq += w * w;
  }
  post.ess = 1.0 / sq;
  return post;
}

}  // namespace boed
