#pragma once

#include <array>
#include <cstddef>
#include <memory>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "json.hpp"

#include "boed/rng.hpp"

namespace boed {

/// An experimental design. Continuous designs hold one coordinate per
/// dimension; discrete designs hold the chosen integer value in values[0].
struct Design {
  std::vector<double> values;

  static Design discrete(int choice) { return Design{{static_cast<double>(choice)}}; }
  int choice() const { return static_cast<int>(values.at(0)); }
  friend bool operator==(const Design&, const Design&) = default;
};

using Outcome = double;

/// Row-per-draw storage of latent parameter vectors.
class ThetaSet {
 public:
  ThetaSet() = default;
  ThetaSet(std::size_t dim, std::size_t count) : dim_(dim), data_(dim * count, 0.0) {}

  std::size_t dim() const { return dim_; }
  std::size_t size() const { return dim_ == 0 ? 0 : data_.size() / dim_; }
  std::span<double> row(std::size_t i) { return {data_.data() + i * dim_, dim_}; }
  std::span<const double> row(std::size_t i) const { return {data_.data() + i * dim_, dim_}; }
  std::span<const double> flat() const { return data_; }

 private:
  std::size_t dim_ = 0;
  std::vector<double> data_;
};

struct DesignSpace {
  enum class Kind { kBox, kDiscrete };

  Kind kind = Kind::kBox;
  std::vector<double> lower;  // box bounds
  std::vector<double> upper;
  int first_choice = 1;       // discrete choices are first_choice .. first_choice + num_choices - 1
  int num_choices = 0;

  static DesignSpace box(std::vector<double> lo, std::vector<double> hi);
  static DesignSpace choices(int first, int count);

  bool discrete() const { return kind == Kind::kDiscrete; }
  /// Number of design coordinates (1 for discrete spaces).
  std::size_t dim() const { return discrete() ? 1 : lower.size(); }
  /// Width of the policy's action vector: box dimension or number of choices.
  std::size_t action_dim() const { return discrete() ? static_cast<std::size_t>(num_choices) : lower.size(); }
  bool contains(const Design& d) const;
  /// Human-readable description, used in error messages.
  std::string describe() const;
};

/// Design-dependent, outcome-independent quantities of p(y | theta, d).
/// Computing them once per (theta, design) makes repeated likelihood
/// evaluations over many outcomes cheap.
using Predictive = std::array<double, 2>;

/// A generative experiment model: prior, likelihood, outcome sampler, design space.
class Model {
 public:
  virtual ~Model() = default;

  virtual std::string id() const = 0;
  virtual const DesignSpace& design_space() const = 0;
  virtual std::size_t theta_dim() const = 0;
  virtual std::vector<std::string> theta_names() const = 0;
  virtual nlohmann::json hyperparameters() const = 0;

  virtual void sample_prior(Rng& rng, std::span<double> theta) const = 0;
  virtual Predictive predictive(std::span<const double> theta, const Design& d) const = 0;
  virtual double log_likelihood(const Predictive& pred, const Design& d, Outcome y) const = 0;
  virtual Outcome sample_outcome(const Predictive& pred, const Design& d, Rng& rng) const = 0;

  /// Throws DomainError naming the valid range when y is outside the outcome space.
  virtual void validate_outcome(const Design& d, Outcome y) const = 0;
  virtual std::string outcome_range(const Design& d) const = 0;

  /// Scaled encoder input for one (design, outcome) pair.
  virtual std::vector<double> features(const Design& d, Outcome y) const = 0;
  virtual std::size_t feature_dim() const { return design_space().dim() + 1; }

  // Conveniences composed from the primitives above.
  std::vector<double> sample_prior(Rng& rng) const;
  double log_likelihood(std::span<const double> theta, const Design& d, Outcome y) const;
  Outcome sample_outcome(std::span<const double> theta, const Design& d, Rng& rng) const;
  /// out[i] = log p(y | thetas[i], d).
  void log_likelihoods(const ThetaSet& thetas, const Design& d, Outcome y, std::span<double> out) const;
  /// Throws DomainError when d is not in the design space.
  void validate_design(const Design& d) const;
};

struct SourceParams {
  std::size_t num_sources = 2;
  std::size_t dim = 2;
  double background = 0.1;     // b
  double max_signal = 1e-4;    // m
  double noise_sd = 0.5;       // sigma on the log-intensity
  double box = 4.0;            // designs in [-box, box]^dim
};

/// Additive inverse-square signal sources; the outcome is the noisy log total intensity.
class SourceModel final : public Model {
 public:
  explicit SourceModel(SourceParams p = {});

  std::string id() const override { return params_.num_sources == 1 && params_.dim == 1 ? "source1d" : "source"; }
  const DesignSpace& design_space() const override { return space_; }
  std::size_t theta_dim() const override { return params_.num_sources * params_.dim; }
  std::vector<std::string> theta_names() const override;
  nlohmann::json hyperparameters() const override;

  void sample_prior(Rng& rng, std::span<double> theta) const override;
  Predictive predictive(std::span<const double> theta, const Design& d) const override;
  double log_likelihood(const Predictive& pred, const Design& d, Outcome y) const override;
  Outcome sample_outcome(const Predictive& pred, const Design& d, Rng& rng) const override;
  void validate_outcome(const Design& d, Outcome y) const override;
  std::string outcome_range(const Design& d) const override;
  std::vector<double> features(const Design& d, Outcome y) const override;

  using Model::log_likelihood;
  using Model::sample_outcome;
  using Model::sample_prior;

  const SourceParams& params() const { return params_; }
  /// Total intensity mu(theta, d).
  double intensity(std::span<const double> theta, std::span<const double> design) const;

 private:
  SourceParams params_;
  DesignSpace space_;
};

struct CesParams {
  double tau = 0.005;
  double epsilon = 0x1p-22;
  double max_good = 100.0;
};

/// Constant elasticity of substitution: rating of the utility difference of two 3-good baskets.
/// theta = (rho, alpha_1, alpha_2, alpha_3, u); design = (x_1..x_3, x'_1..x'_3).
class CesModel final : public Model {
 public:
  explicit CesModel(CesParams p = {});

  std::string id() const override { return "ces"; }
  const DesignSpace& design_space() const override { return space_; }
  std::size_t theta_dim() const override { return 5; }
  std::vector<std::string> theta_names() const override { return {"rho", "alpha1", "alpha2", "alpha3", "u"}; }
  nlohmann::json hyperparameters() const override;

  void sample_prior(Rng& rng, std::span<double> theta) const override;
  /// (mu_eta, sigma_eta).
  Predictive predictive(std::span<const double> theta, const Design& d) const override;
  double log_likelihood(const Predictive& pred, const Design& d, Outcome y) const override;
  Outcome sample_outcome(const Predictive& pred, const Design& d, Rng& rng) const override;
  void validate_outcome(const Design& d, Outcome y) const override;
  std::string outcome_range(const Design& d) const override;
  std::vector<double> features(const Design& d, Outcome y) const override;

  using Model::log_likelihood;
  using Model::sample_outcome;
  using Model::sample_prior;

  const CesParams& params() const { return params_; }
  static double utility(std::span<const double> basket, double rho, std::span<const double> alpha);

 private:
  CesParams params_;
  DesignSpace space_;
};

struct PreyParams {
  double horizon = 24.0;   // hours
  double ode_step = 0.1;
  int max_population = 300;
  double log_prior_mean = -1.4;
  double log_prior_sd = 1.35;
};

/// Holling type-II depletion; the outcome is the number of prey consumed.
/// theta = (a, T_h); design = initial population N0 in {1..300}.
class PreyModel final : public Model {
 public:
  explicit PreyModel(PreyParams p = {});

  std::string id() const override { return "prey"; }
  const DesignSpace& design_space() const override { return space_; }
  std::size_t theta_dim() const override { return 2; }
  std::vector<std::string> theta_names() const override { return {"a", "T_h"}; }
  nlohmann::json hyperparameters() const override;
  std::size_t feature_dim() const override { return 2; }

  void sample_prior(Rng& rng, std::span<double> theta) const override;
  /// (p_T, N_T).
  Predictive predictive(std::span<const double> theta, const Design& d) const override;
  double log_likelihood(const Predictive& pred, const Design& d, Outcome y) const override;
  Outcome sample_outcome(const Predictive& pred, const Design& d, Rng& rng) const override;
  void validate_outcome(const Design& d, Outcome y) const override;
  std::string outcome_range(const Design& d) const override;
  std::vector<double> features(const Design& d, Outcome y) const override;

  using Model::log_likelihood;
  using Model::sample_outcome;
  using Model::sample_prior;

  const PreyParams& params() const { return params_; }

 private:
  PreyParams params_;
  DesignSpace space_;
};

struct LinearGaussianParams {
  double prior_var = 1.0;
  double noise_var = 1.0;
  double box = 4.0;
};

/// y = theta * d + noise; conjugate, used to validate estimators against closed forms.
class LinearGaussianModel final : public Model {
 public:
  explicit LinearGaussianModel(LinearGaussianParams p = {});

  std::string id() const override { return "lingauss"; }
  const DesignSpace& design_space() const override { return space_; }
  std::size_t theta_dim() const override { return 1; }
  std::vector<std::string> theta_names() const override { return {"slope"}; }
  nlohmann::json hyperparameters() const override;

  void sample_prior(Rng& rng, std::span<double> theta) const override;
  Predictive predictive(std::span<const double> theta, const Design& d) const override;
  double log_likelihood(const Predictive& pred, const Design& d, Outcome y) const override;
  Outcome sample_outcome(const Predictive& pred, const Design& d, Rng& rng) const override;
  void validate_outcome(const Design& d, Outcome y) const override;
  std::string outcome_range(const Design& d) const override;
  std::vector<double> features(const Design& d, Outcome y) const override;

  using Model::log_likelihood;
  using Model::sample_outcome;
  using Model::sample_prior;

  const LinearGaussianParams& params() const { return params_; }

 private:
  LinearGaussianParams params_;
  DesignSpace space_;
};

/// Model ids: source, source1d, ces, prey, lingauss. Unknown ids throw UsageError.
std::unique_ptr<Model> make_model(std::string_view id);
std::vector<std::string> model_ids();

/// Remaining prey population after the horizon: fixed-step RK4 on
/// dN/dt = -a N^2 / (1 + a T_h N^2), clamped to [0, N0].
double integrate_prey_ode(double a, double handling_time, double n0, double horizon = 24.0, double step = 0.1);

/// EIG of one experiment y = theta d + noise under a Gaussian prior: 0.5 log(1 + d^2 prior_var / noise_var).
double eig_closed_form_lingauss(double d, double prior_var, double noise_var);

/// log Phi(z), accurate in both tails.
double log_normal_cdf(double z);

}  // namespace boed
