#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "boed/models.hpp"
#include "boed/policy.hpp"

namespace boed {

/// Overflow-safe log(sum(exp(x))). Returns -inf for an empty or all -inf input.
double logsumexp(std::span<const double> x);

/// Per-sample log history likelihoods ell_l = sum_{k<=t} log p(y_k | theta_l, d_k),
/// l = 0..L. Entry 0 belongs to the outcome-generating parameter.
class LogContrastiveLikelihoods {
 public:
  LogContrastiveLikelihoods() = default;
  explicit LogContrastiveLikelihoods(std::size_t contrastive) : ell_(contrastive + 1, 0.0) {}

  std::size_t contrastive() const { return ell_.empty() ? 0 : ell_.size() - 1; }
  std::size_t step() const { return step_; }
  std::span<const double> values() const { return ell_; }
  double operator[](std::size_t l) const { return ell_[l]; }

  /// Adds one experiment's log-likelihoods (one per parameter sample).
  void add(std::span<const double> increments);

 private:
  std::vector<double> ell_;
  std::size_t step_ = 0;
};

/// sPCE integrand: ell_0 - logsumexp(ell_0..L) + log(L + 1). Always <= log(L + 1).
double g_value(std::span<const double> ell);
inline double g_value(const LogContrastiveLikelihoods& ell) { return g_value(ell.values()); }

/// sNMC integrand: ell_0 - logsumexp(ell_1..L) + log(L). Exceeds g_value on the same ell exactly when
/// ell_0 is above the log-mean-exp of ell_1..L, so the ordering holds in expectation only.
double g_upper_value(std::span<const double> ell);
inline double g_upper_value(const LogContrastiveLikelihoods& ell) { return g_upper_value(ell.values()); }

enum class BoundKind { kLower, kUpper };

struct BoundEstimate {
  double mean = 0.0;
  double stderr_ = 0.0;  // sample std / sqrt(n)
  std::size_t rollouts = 0;
  std::size_t contrastive = 0;
  std::size_t horizon = 0;
  BoundKind kind = BoundKind::kLower;
};

/// Mean and standard error of samples, summed in index order.
BoundEstimate summarize(std::span<const double> samples, BoundKind kind, std::size_t contrastive,
                        std::size_t horizon);

/// One evaluated trajectory. lower[t-1] / upper[t-1] are the prefix integrands after t experiments.
struct RolloutTrace {
  std::vector<Design> designs;
  std::vector<Outcome> outcomes;
  std::vector<double> lower;
  std::vector<double> upper;
};

/// Rollouts sharing contrastive sets between the lower and upper bound.
struct RolloutSet {
  std::size_t contrastive = 0;
  std::size_t horizon = 0;
  std::vector<RolloutTrace> rollouts;

  /// Aggregate at step t in [1, T].
  BoundEstimate lower_at(std::size_t t) const;
  BoundEstimate upper_at(std::size_t t) const;
};

/// Rollout r uses Rng::substream(seed, r) for the environment and
/// Rng::substream(seed, r, kPolicyStream) for the policy.
inline constexpr std::uint64_t kPolicyStream = 0x706f6c6963790001ULL;

RolloutSet run_rollouts(const PolicyFactory& policy, const Model& model, std::size_t contrastive,
                        std::size_t horizon, std::size_t rollouts, std::uint64_t seed);

/// Sequential PCE lower bound at t = T.
BoundEstimate spce(const PolicyFactory& policy, const Model& model, std::size_t contrastive,
                   std::size_t horizon, std::size_t rollouts, std::uint64_t seed);
/// Sequential NMC upper bound at t = T on the same draws as spce() with equal arguments.
BoundEstimate snmc(const PolicyFactory& policy, const Model& model, std::size_t contrastive,
                   std::size_t horizon, std::size_t rollouts, std::uint64_t seed);
/// Single-experiment PCE; identical to spce with T = 1 and a fixed design.
BoundEstimate pce(const Model& model, const Design& design, std::size_t contrastive, std::size_t outer,
                  std::uint64_t seed);

/// Quadrature settings for the 1-D source EIG oracle.
struct OracleGrid {
  std::size_t theta_points = 4001;
  std::size_t outcome_points = 1201;
  double theta_sigmas = 4.0;     // theta range = +- theta_sigmas prior sds
  double outcome_margin = 6.0;   // outcome range extends this many noise sds past the mean range
};

/// EIG(d) of the one-source, one-dimensional source model by nested trapezoid
/// quadrature. Throws DomainError when the grids leave more than 1e-4 of
/// probability mass uncovered.
double eig_1d_oracle(const SourceModel& model, double design, const OracleGrid& grid = {});

struct GridOptimum {
  double design = 0.0;
  double eig = 0.0;
  std::vector<double> designs;
  std::vector<double> eigs;
};

/// Argmax of eig_1d_oracle over designs -box, -box + step, ..., box. Ties
/// (within 1e-12 relative) resolve to the smallest |d|, then to d >= 0.
GridOptimum grid_search_optimal_design_1d(const SourceModel& model, double step, const OracleGrid& grid = {});

struct SnisPosterior {
  std::vector<double> weights;  // sum to 1
  double ess = 0.0;             // (sum w)^2 / sum w^2
};

/// Self-normalized importance weights w_l proportional to exp(ell_l).
/// Throws NumericalError if every ell_l is -inf.
SnisPosterior posterior_snis(std::span<const double> ell);

}  // namespace boed
