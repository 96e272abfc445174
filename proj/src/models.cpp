#include "boed/models.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numbers>
#include <random>
#include <sstream>

#include "boed/error.hpp"

namespace boed {

namespace {

constexpr double kHalfLog2Pi = 0.91893853320467274178;
constexpr double kInf = std::numeric_limits<double>::infinity();

double normal_log_pdf(double x, double mean, double sd) {
  const double z = (x - mean) / sd;
  return -0.5 * z * z - std::log(sd) - kHalfLog2Pi;
}

double logit(double p) { return std::log(p) - std::log1p(-p); }

double sigmoid(double x) {
  if (x >= 0) return 1.0 / (1.0 + std::exp(-x));
  const double e = std::exp(x);
  return e / (1.0 + e);
}

std::string fmt(double v) {
  std::ostringstream os;
  os.precision(17);
  os << v;
  return os.str();
}

}  // namespace

// ---------------------------------------------------------------------------
// Design space

DesignSpace DesignSpace::box(std::vector<double> lo, std::vector<double> hi) {
  DesignSpace s;
  s.kind = Kind::kBox;
  s.lower = std::move(lo);
  s.upper = std::move(hi);
  return s;
}

DesignSpace DesignSpace::choices(int first, int count) {
  DesignSpace s;
  s.kind = Kind::kDiscrete;
  s.first_choice = first;
  s.num_choices = count;
  return s;
}

bool DesignSpace::contains(const Design& d) const {
  if (discrete()) {
    if (d.values.size() != 1) return false;
    const double v = d.values[0];
    return std::isfinite(v) && v == std::floor(v) && v >= first_choice && v < first_choice + num_choices;
  }
  if (d.values.size() != lower.size()) return false;
  for (std::size_t i = 0; i < lower.size(); ++i) {
    const double v = d.values[i];
    if (!std::isfinite(v) || v < lower[i] || v > upper[i]) return false;
  }
  return true;
}

std::string DesignSpace::describe() const {
  if (discrete()) {
    return "integers in [" + std::to_string(first_choice) + ", " +
           std::to_string(first_choice + num_choices - 1) + "]";
  }
  std::ostringstream os;
  os << lower.size() << "-d box";
  for (std::size_t i = 0; i < lower.size(); ++i) os << " [" << lower[i] << ", " << upper[i] << "]";
  return os.str();
}

// ---------------------------------------------------------------------------
// Model conveniences

std::vector<double> Model::sample_prior(Rng& rng) const {
  std::vector<double> theta(theta_dim());
  sample_prior(rng, theta);
  return theta;
}

void Model::validate_design(const Design& d) const {
  if (!design_space().contains(d)) {
    std::ostringstream os;
    os << id() << ": design (";
    for (std::size_t i = 0; i < d.values.size(); ++i) os << (i ? ", " : "") << d.values[i];
    os << ") outside design space " << design_space().describe();
    throw DomainError(os.str());
  }
}

double Model::log_likelihood(std::span<const double> theta, const Design& d, Outcome y) const {
  validate_design(d);
  validate_outcome(d, y);
  return log_likelihood(predictive(theta, d), d, y);
}

Outcome Model::sample_outcome(std::span<const double> theta, const Design& d, Rng& rng) const {
  validate_design(d);
  return sample_outcome(predictive(theta, d), d, rng);
}

void Model::log_likelihoods(const ThetaSet& thetas, const Design& d, Outcome y, std::span<double> out) const {
  for (std::size_t i = 0; i < thetas.size(); ++i) out[i] = log_likelihood(predictive(thetas.row(i), d), d, y);
}

// ---------------------------------------------------------------------------
// Source location

SourceModel::SourceModel(SourceParams p) : params_(p) {
  if (!(p.background > 0 && p.max_signal > 0 && p.noise_sd > 0 && p.box > 0) || p.num_sources == 0 ||
      p.dim == 0) {
    throw UsageError("source: b, m, sigma and box must be positive");
  }
  space_ = DesignSpace::box(std::vector<double>(p.dim, -p.box), std::vector<double>(p.dim, p.box));
}

std::vector<std::string> SourceModel::theta_names() const {
  std::vector<std::string> names;
  for (std::size_t k = 0; k < params_.num_sources; ++k) {
    for (std::size_t j = 0; j < params_.dim; ++j) {
      names.push_back("theta" + std::to_string(k + 1) + "_" + std::to_string(j + 1));
    }
  }
  return names;
}

nlohmann::json SourceModel::hyperparameters() const {
  return {{"num_sources", params_.num_sources}, {"dim", params_.dim}, {"b", params_.background},
          {"m", params_.max_signal}, {"sigma", params_.noise_sd}, {"box", params_.box}};
}

void SourceModel::sample_prior(Rng& rng, std::span<double> theta) const {
  for (double& v : theta) v = rng.normal();
}

double SourceModel::intensity(std::span<const double> theta, std::span<const double> design) const {
  double mu = params_.background;
  const std::size_t dim = params_.dim;
  for (std::size_t k = 0; k < params_.num_sources; ++k) {
    double sq = 0.0;
    for (std::size_t j = 0; j < dim; ++j) {
      const double diff = theta[k * dim + j] - design[j];
      sq += diff * diff;
    }
    mu += 1.0 / (params_.max_signal + sq);
  }
  return mu;
}

Predictive SourceModel::predictive(std::span<const double> theta, const Design& d) const {
  return {std::log(intensity(theta, d.values)), 0.0};
}

double SourceModel::log_likelihood(const Predictive& pred, const Design&, Outcome y) const {
  return normal_log_pdf(y, pred[0], params_.noise_sd);
}

Outcome SourceModel::sample_outcome(const Predictive& pred, const Design&, Rng& rng) const {
  return pred[0] + params_.noise_sd * rng.normal();
}

void SourceModel::validate_outcome(const Design& d, Outcome y) const {
  if (!std::isfinite(y)) throw DomainError(id() + ": outcome must be " + outcome_range(d));
}

std::string SourceModel::outcome_range(const Design&) const { return "a finite real log-intensity"; }

std::vector<double> SourceModel::features(const Design& d, Outcome y) const {
  std::vector<double> f;
  f.reserve(params_.dim + 1);
  for (double v : d.values) f.push_back(v / params_.box);
  f.push_back(y / 5.0);
  return f;
}

// ---------------------------------------------------------------------------
// CES

CesModel::CesModel(CesParams p) : params_(p) {
  if (!(p.tau > 0 && p.epsilon > 0 && p.epsilon < 0.5 && p.max_good > 0)) {
    throw UsageError("ces: tau > 0 and 0 < epsilon < 0.5 required");
  }
  space_ = DesignSpace::box(std::vector<double>(6, 0.0), std::vector<double>(6, p.max_good));
}

nlohmann::json CesModel::hyperparameters() const {
  return {{"tau", params_.tau}, {"epsilon", params_.epsilon}, {"max_good", params_.max_good}};
}

void CesModel::sample_prior(Rng& rng, std::span<double> theta) const {
  // rho ~ Beta(1, 1) on the open interval.
  double rho = 0.0;
  while (rho <= 0.0) rho = rng.uniform();
  theta[0] = rho;
  std::gamma_distribution<double> gamma(1.0, 1.0);
  double g[3];
  double total = 0.0;
  for (double& v : g) {
    v = gamma(rng.engine());
    total += v;
  }
  // Dirichlet(1,1,1) through normalized gammas; the last coordinate closes the simplex exactly.
  theta[1] = g[0] / total;
  theta[2] = g[1] / total;
  theta[3] = 1.0 - theta[1] - theta[2];
  theta[4] = std::exp(rng.normal(1.0, 3.0));
}

double CesModel::utility(std::span<const double> basket, double rho, std::span<const double> alpha) {
  double s = 0.0;
  for (std::size_t i = 0; i < 3; ++i) s += std::pow(basket[i], rho) * alpha[i];
  return std::pow(s, 1.0 / rho);
}

Predictive CesModel::predictive(std::span<const double> theta, const Design& d) const {
  const double rho = theta[0];
  const double u = theta[4];
  const std::span<const double> alpha = theta.subspan(1, 3);
  const std::span<const double> x = std::span<const double>(d.values).subspan(0, 3);
  const std::span<const double> xp = std::span<const double>(d.values).subspan(3, 3);
  double dist2 = 0.0;
  for (std::size_t i = 0; i < 3; ++i) dist2 += (x[i] - xp[i]) * (x[i] - xp[i]);
  const double mu = (utility(x, rho, alpha) - utility(xp, rho, alpha)) * u;
  const double sd = (1.0 + std::sqrt(dist2)) * params_.tau * u;
  return {mu, sd};
}

double CesModel::log_likelihood(const Predictive& pred, const Design&, Outcome y) const {
  const double eps = params_.epsilon;
  const double mu = pred[0], sd = pred[1];
  if (y <= eps) return log_normal_cdf((logit(eps) - mu) / sd);
  if (y >= 1.0 - eps) return log_normal_cdf(-(logit(1.0 - eps) - mu) / sd);
  return normal_log_pdf(logit(y), mu, sd) - std::log(y) - std::log1p(-y);
}

Outcome CesModel::sample_outcome(const Predictive& pred, const Design&, Rng& rng) const {
  const double eta = pred[0] + pred[1] * rng.normal();
  return std::clamp(sigmoid(eta), params_.epsilon, 1.0 - params_.epsilon);
}

void CesModel::validate_outcome(const Design& d, Outcome y) const {
  if (!std::isfinite(y) || y < params_.epsilon || y > 1.0 - params_.epsilon) {
    throw DomainError("ces: outcome must be " + outcome_range(d));
  }
}

std::string CesModel::outcome_range(const Design&) const {
  return "a rating in [" + fmt(params_.epsilon) + ", " + fmt(1.0 - params_.epsilon) + "]";
}

std::vector<double> CesModel::features(const Design& d, Outcome y) const {
  std::vector<double> f;
  f.reserve(7);
  for (double v : d.values) f.push_back(v / params_.max_good);
  f.push_back(logit(y) / -logit(params_.epsilon));
  return f;
}

// ---------------------------------------------------------------------------
// Prey population

PreyModel::PreyModel(PreyParams p) : params_(p) {
  if (!(p.horizon > 0 && p.ode_step > 0 && p.max_population >= 1 && p.log_prior_sd > 0)) {
    throw UsageError("prey: horizon, step, population and prior sd must be positive");
  }
  space_ = DesignSpace::choices(1, p.max_population);
}

nlohmann::json PreyModel::hyperparameters() const {
  return {{"horizon", params_.horizon}, {"ode_step", params_.ode_step},
          {"max_population", params_.max_population}, {"log_prior_mean", params_.log_prior_mean},
          {"log_prior_sd", params_.log_prior_sd}};
}

void PreyModel::sample_prior(Rng& rng, std::span<double> theta) const {
  theta[0] = std::exp(rng.normal(params_.log_prior_mean, params_.log_prior_sd));
  theta[1] = std::exp(rng.normal(params_.log_prior_mean, params_.log_prior_sd));
}

Predictive PreyModel::predictive(std::span<const double> theta, const Design& d) const {
  const double n0 = d.values[0];
  const double remaining = integrate_prey_ode(theta[0], theta[1], n0, params_.horizon, params_.ode_step);
  return {std::clamp((n0 - remaining) / n0, 0.0, 1.0), remaining};
}

double PreyModel::log_likelihood(const Predictive& pred, const Design& d, Outcome y) const {
  const double n = d.values[0];
  const double p = pred[0];
  double ll = std::lgamma(n + 1.0) - std::lgamma(y + 1.0) - std::lgamma(n - y + 1.0);
  if (y > 0) ll += p > 0 ? y * std::log(p) : -kInf;
  if (n - y > 0) ll += p < 1 ? (n - y) * std::log1p(-p) : -kInf;
  return ll;
}

Outcome PreyModel::sample_outcome(const Predictive& pred, const Design& d, Rng& rng) const {
  std::binomial_distribution<int> binom(d.choice(), pred[0]);
  return static_cast<double>(binom(rng.engine()));
}

void PreyModel::validate_outcome(const Design& d, Outcome y) const {
  if (!std::isfinite(y) || y != std::floor(y) || y < 0 || y > d.values.at(0)) {
    throw DomainError("prey: outcome must be " + outcome_range(d));
  }
}

std::string PreyModel::outcome_range(const Design& d) const {
  return "an integer count in [0, " + std::to_string(d.choice()) + "]";
}

std::vector<double> PreyModel::features(const Design& d, Outcome y) const {
  const double n0 = d.values[0];
  return {n0 / params_.max_population, y / n0};
}

// ---------------------------------------------------------------------------
// Linear Gaussian

LinearGaussianModel::LinearGaussianModel(LinearGaussianParams p) : params_(p) {
  if (!(p.prior_var > 0 && p.noise_var > 0 && p.box > 0)) {
    throw UsageError("lingauss: variances and box must be positive");
  }
  space_ = DesignSpace::box({-p.box}, {p.box});
}

nlohmann::json LinearGaussianModel::hyperparameters() const {
  return {{"prior_var", params_.prior_var}, {"noise_var", params_.noise_var}, {"box", params_.box}};
}

void LinearGaussianModel::sample_prior(Rng& rng, std::span<double> theta) const {
  theta[0] = std::sqrt(params_.prior_var) * rng.normal();
}

Predictive LinearGaussianModel::predictive(std::span<const double> theta, const Design& d) const {
  return {theta[0] * d.values[0], 0.0};
}

double LinearGaussianModel::log_likelihood(const Predictive& pred, const Design&, Outcome y) const {
  return normal_log_pdf(y, pred[0], std::sqrt(params_.noise_var));
}

Outcome LinearGaussianModel::sample_outcome(const Predictive& pred, const Design&, Rng& rng) const {
  return pred[0] + std::sqrt(params_.noise_var) * rng.normal();
}

void LinearGaussianModel::validate_outcome(const Design& d, Outcome y) const {
  if (!std::isfinite(y)) throw DomainError("lingauss: outcome must be " + outcome_range(d));
}

std::string LinearGaussianModel::outcome_range(const Design&) const { return "a finite real"; }

std::vector<double> LinearGaussianModel::features(const Design& d, Outcome y) const {
  return {d.values[0] / params_.box, y / 5.0};
}

// ---------------------------------------------------------------------------

std::unique_ptr<Model> make_model(std::string_view id) {
  if (id == "source") return std::make_unique<SourceModel>();
  if (id == "source1d") {
    SourceParams p;
    p.num_sources = 1;
    p.dim = 1;
    return std::make_unique<SourceModel>(p);
  }
  if (id == "ces") return std::make_unique<CesModel>();
  if (id == "prey") return std::make_unique<PreyModel>();
  if (id == "lingauss") return std::make_unique<LinearGaussianModel>();
  throw UsageError("unknown model '" + std::string(id) + "' (expected one of source, source1d, ces, prey, lingauss)");
}

std::vector<std::string> model_ids() { return {"source", "source1d", "ces", "prey", "lingauss"}; }

double integrate_prey_ode(double a, double handling_time, double n0, double horizon, double step) {
  if (!std::isfinite(a) || !std::isfinite(handling_time) || !std::isfinite(n0)) {
    throw NumericalError("prey ode: non-finite parameters");
  }
  if (a < 0 || handling_time < 0 || n0 < 0) throw DomainError("prey ode: a, T_h and N0 must be non-negative");
  if (a == 0.0) return n0;
  auto rate = [a, handling_time](double n) { return -a * n * n / (1.0 + a * handling_time * n * n); };
  const auto steps = static_cast<long>(std::llround(horizon / step));
  double n = n0;
  for (long i = 0; i < steps; ++i) {
    const double k1 = rate(n);
    const double k2 = rate(n + 0.5 * step * k1);
    const double k3 = rate(n + 0.5 * step * k2);
    const double k4 = rate(n + step * k3);
    n += step / 6.0 * (k1 + 2.0 * k2 + 2.0 * k3 + k4);
  }
  return std::clamp(n, 0.0, n0);
}

double eig_closed_form_lingauss(double d, double prior_var, double noise_var) {
  if (!(prior_var > 0 && noise_var > 0)) throw DomainError("lingauss eig: variances must be positive");
  return 0.5 * std::log1p(d * d * prior_var / noise_var);
}

double log_normal_cdf(double z) {
  if (z > 0) return std::log1p(-0.5 * std::erfc(z / std::numbers::sqrt2));
  if (z > -20) return std::log(0.5 * std::erfc(-z / std::numbers::sqrt2));
  // Asymptotic expansion of the lower tail.
  const double z2 = z * z;
  const double series = 1.0 - 1.0 / z2 + 3.0 / (z2 * z2) - 15.0 / (z2 * z2 * z2) + 105.0 / (z2 * z2 * z2 * z2);
  return -0.5 * z2 - kHalfLog2Pi - std::log(-z) + std::log(series);
}

}  // namespace boed
