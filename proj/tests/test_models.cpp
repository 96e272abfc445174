#include <gtest/gtest.h>

#include <cmath>
#include <numbers>

#include "boed/error.hpp"
#include "boed/models.hpp"

using namespace boed;

namespace {

double sigmoid(double x) { return 1.0 / (1.0 + std::exp(-x)); }

// Fine forward-Euler reference for the prey ODE.
double euler_prey(double a, double th, double n0, double horizon, double step) {
  double n = n0;
  const auto steps = static_cast<long>(std::llround(horizon / step));
  for (long i = 0; i < steps; ++i) n += step * (-a * n * n / (1.0 + a * th * n * n));
  return n;
}

}  // namespace

TEST(Registry, KnownIdsAndUnknownId) {
  for (const std::string& id : model_ids()) EXPECT_EQ(make_model(id)->id(), id);
  EXPECT_THROW(make_model("nope"), UsageError);
}

TEST(Registry, EverySampledOutcomeHasFiniteLikelihood) {
  for (const std::string& id : model_ids()) {
    const auto model = make_model(id);
    Rng rng(11);
    for (int i = 0; i < 200; ++i) {
      const auto theta = model->sample_prior(rng);
      Design d;
      const DesignSpace& space = model->design_space();
      if (space.discrete()) {
        d = Design::discrete(rng.uniform_int(space.first_choice, space.first_choice + space.num_choices - 1));
      } else {
        for (std::size_t j = 0; j < space.dim(); ++j) d.values.push_back(rng.uniform(space.lower[j], space.upper[j]));
      }
      const Outcome y = model->sample_outcome(theta, d, rng);
      EXPECT_TRUE(std::isfinite(model->log_likelihood(theta, d, y))) << id;
      EXPECT_EQ(model->features(d, y).size(), model->feature_dim()) << id;
    }
  }
}

TEST(Source, PriorMoments) {
  SourceModel model;
  Rng rng(1);
  const int n = 100000;
  double mean[2] = {0, 0}, sq[2] = {0, 0};
  for (int i = 0; i < n; ++i) {
    const auto theta = model.sample_prior(rng);
    for (int j = 0; j < 2; ++j) {
      mean[j] += theta[j];
      sq[j] += theta[j] * theta[j];
    }
  }
  for (int j = 0; j < 2; ++j) {
    const double m = mean[j] / n;
    EXPECT_NEAR(m, 0.0, 0.02);
    EXPECT_NEAR(sq[j] / n - m * m, 1.0, 0.05);
  }
}

TEST(Source, LikelihoodAtMean) {
  SourceModel model;
  const std::vector<double> theta{0, 0, 0, 0};
  const Design d{{0, 0}};
  EXPECT_NEAR(model.intensity(theta, d.values), 20000.1, 1e-9);
  const double y = std::log(20000.1);
  EXPECT_NEAR(model.log_likelihood(theta, d, y), -std::log(0.5 * std::sqrt(2 * std::numbers::pi)), 1e-12);
  EXPECT_NEAR(model.log_likelihood(theta, d, y), -0.2258, 1e-4);
}

TEST(Source, SwappingSourcesLeavesLikelihoodUnchanged) {
  SourceModel model;
  Rng rng(2);
  for (int i = 0; i < 100; ++i) {
    const auto theta = model.sample_prior(rng);
    const std::vector<double> swapped{theta[2], theta[3], theta[0], theta[1]};
    const Design d{{rng.uniform(-4, 4), rng.uniform(-4, 4)}};
    const Outcome y = model.sample_outcome(theta, d, rng);
    EXPECT_NEAR(model.log_likelihood(theta, d, y), model.log_likelihood(swapped, d, y), 1e-12);
  }
}

TEST(Source, OutcomeMeanIsLogIntensity) {
  SourceModel model;
  Rng rng(3);
  const std::vector<double> theta{0.3, -0.5, 1.2, 0.1};
  const Design d{{0.5, 0.5}};
  const int n = 100000;
  double sum = 0, sq = 0;
  for (int i = 0; i < n; ++i) {
    const double y = model.sample_outcome(theta, d, rng);
    sum += y;
    sq += y * y;
  }
  const double mean = sum / n;
  const double se = std::sqrt((sq / n - mean * mean) / n);
  EXPECT_LT(std::abs(mean - std::log(model.intensity(theta, d.values))), 3 * se);
}

TEST(Source, DesignOutsideBoxIsRejected) {
  SourceModel model;
  const std::vector<double> theta{0, 0, 0, 0};
  EXPECT_THROW(model.log_likelihood(theta, Design{{4.5, 0}}, 0.0), DomainError);
  EXPECT_THROW(model.log_likelihood(theta, Design{{0}}, 0.0), DomainError);
  EXPECT_THROW(model.log_likelihood(theta, Design{{0, 0}}, NAN), DomainError);
}

TEST(Source, OneDimensionalVariantSharesTheFormula) {
  const auto model = make_model("source1d");
  const auto& src = dynamic_cast<const SourceModel&>(*model);
  EXPECT_EQ(src.theta_dim(), 1u);
  EXPECT_EQ(src.design_space().dim(), 1u);
  const std::vector<double> theta{0.7};
  EXPECT_DOUBLE_EQ(src.intensity(theta, std::vector<double>{0.2}), 0.1 + 1.0 / (1e-4 + 0.25));
}

TEST(Ces, AlphaOnSimplex) {
  CesModel model;
  Rng rng(4);
  for (int i = 0; i < 1000; ++i) {
    const auto theta = model.sample_prior(rng);
    EXPECT_NEAR(theta[1] + theta[2] + theta[3], 1.0, 1e-12);
    EXPECT_GT(theta[0], 0.0);
    EXPECT_LT(theta[0], 1.0);
    EXPECT_GT(theta[4], 0.0);
  }
}

TEST(Ces, EqualBasketsGiveZeroMean) {
  CesModel model;
  const std::vector<double> theta{0.5, 0.2, 0.3, 0.5, 2.0};
  const Design d{{10, 20, 30, 10, 20, 30}};
  const Predictive p = model.predictive(theta, d);
  EXPECT_EQ(p[0], 0.0);
  EXPECT_DOUBLE_EQ(p[1], 0.005 * 2.0);
}

TEST(Ces, CensoredLikelihoodNormalizes) {
  CesModel model;
  const Design d{{1, 2, 3, 4, 5, 6}};
  const double eps = model.params().epsilon;
  for (const Predictive pred : {Predictive{0.3, 2.0}, Predictive{-5.0, 4.0}, Predictive{20.0, 3.0}}) {
    // Interior in eta = logit(y); each interior y has density p(y) dy/deta = p(y) y (1 - y).
    const double lo = std::log(eps / (1 - eps)), hi = -lo;
    const int n = 200000;
    const double h = (hi - lo) / n;
    double interior = 0.0;
    for (int i = 0; i <= n; ++i) {
      const double eta = lo + i * h;
      const double y = sigmoid(eta);
      if (y <= eps || y >= 1 - eps) continue;
      const double w = (i == 0 || i == n) ? 0.5 : 1.0;
      interior += w * std::exp(model.log_likelihood(pred, d, y)) * y * (1 - y) * h;
    }
    const double atoms = std::exp(model.log_likelihood(pred, d, eps)) + std::exp(model.log_likelihood(pred, d, 1 - eps));
    EXPECT_NEAR(interior + atoms, 1.0, 1e-4) << pred[0] << ", " << pred[1];
  }
}

TEST(Ces, LargePositiveMeanSaturatesHigh) {
  CesModel model;
  Rng rng(5);
  const Design d{{1, 2, 3, 4, 5, 6}};
  const Predictive pred{30.0, 1.0};
  int top = 0;
  const int n = 10000;
  for (int i = 0; i < n; ++i) top += model.sample_outcome(pred, d, rng) == 1.0 - model.params().epsilon;
  EXPECT_GE(top, 0.999 * n);
}

TEST(Ces, OutcomeOutsideRangeIsRejected) {
  CesModel model;
  const Design d{{1, 2, 3, 4, 5, 6}};
  EXPECT_THROW(model.validate_outcome(d, 0.0), DomainError);
  EXPECT_THROW(model.validate_outcome(d, 1.0), DomainError);
  EXPECT_NO_THROW(model.validate_outcome(d, 0.5));
}

TEST(Prey, PriorSupport) {
  PreyModel model;
  Rng rng(6);
  for (int i = 0; i < 1000; ++i) {
    const auto theta = model.sample_prior(rng);
    EXPECT_GT(theta[0], 0.0);
    EXPECT_GT(theta[1], 0.0);
  }
}

TEST(Prey, FrozenDynamicsWithoutAttack) {
  PreyModel model;
  const std::vector<double> theta{0.0, 0.5};
  const Design d = Design::discrete(50);
  EXPECT_EQ(integrate_prey_ode(0.0, 0.5, 50.0), 50.0);
  const Predictive p = model.predictive(theta, d);
  EXPECT_EQ(p[0], 0.0);
  EXPECT_EQ(p[1], 50.0);
  EXPECT_EQ(model.log_likelihood(theta, d, 0.0), 0.0);
  Rng rng(7);
  for (int i = 0; i < 100; ++i) EXPECT_EQ(model.sample_outcome(theta, d, rng), 0.0);
}

TEST(Prey, BinomialPmf) {
  PreyModel model;
  EXPECT_NEAR(model.log_likelihood(Predictive{0.5, 1.0}, Design::discrete(2), 1.0), std::log(0.5), 1e-12);
}

TEST(Prey, Rk4MatchesFineEuler) {
  const double rk4 = integrate_prey_ode(0.1, 0.2, 50.0);
  const double euler = euler_prey(0.1, 0.2, 50.0, 24.0, 1e-4);
  EXPECT_LT(std::abs(rk4 - euler) / euler, 1e-4);
}

TEST(Prey, MoreAttackMeansFewerSurvivors) {
  EXPECT_LE(integrate_prey_ode(0.2, 0.2, 50.0), integrate_prey_ode(0.1, 0.2, 50.0));
}

TEST(Prey, ConsumptionProbabilityInUnitInterval) {
  PreyModel model;
  Rng rng(8);
  for (int i = 0; i < 500; ++i) {
    const auto theta = model.sample_prior(rng);
    const Predictive p = model.predictive(theta, Design::discrete(rng.uniform_int(1, 300)));
    EXPECT_GE(p[0], 0.0);
    EXPECT_LE(p[0], 1.0);
  }
}

TEST(Prey, OutcomeSupport) {
  PreyModel model;
  const Design d = Design::discrete(10);
  EXPECT_THROW(model.validate_outcome(d, 11), DomainError);
  EXPECT_THROW(model.validate_outcome(d, -1), DomainError);
  EXPECT_THROW(model.validate_outcome(d, 2.5), DomainError);
  EXPECT_NO_THROW(model.validate_outcome(d, 10));
  EXPECT_THROW(model.validate_design(Design::discrete(301)), DomainError);
  EXPECT_THROW(model.validate_design(Design{{2.5}}), DomainError);
}

TEST(Prey, NegativeParametersRejected) { EXPECT_THROW(integrate_prey_ode(-0.1, 0.2, 5.0), DomainError); }

TEST(LinearGaussian, ClosedFormEig) {
  EXPECT_EQ(eig_closed_form_lingauss(0.0, 1, 1), 0.0);
  EXPECT_NEAR(eig_closed_form_lingauss(1.0, 1, 1), 0.5 * std::log(2.0), 1e-15);
  EXPECT_NEAR(eig_closed_form_lingauss(3.0, 1, 1), 0.5 * std::log(10.0), 1e-15);
  EXPECT_THROW(eig_closed_form_lingauss(1.0, 0, 1), DomainError);
}

TEST(LogNormalCdf, MatchesErfcAndTails) {
  for (double z : {-5.0, -1.0, 0.0, 0.5, 3.0}) {
    EXPECT_NEAR(log_normal_cdf(z), std::log(0.5 * std::erfc(-z / std::numbers::sqrt2)), 1e-12);
  }
  // Far lower tail stays finite and close to the leading asymptotic term.
  const double z = -40.0;
  EXPECT_TRUE(std::isfinite(log_normal_cdf(z)));
  EXPECT_NEAR(log_normal_cdf(z), -0.5 * z * z - 0.5 * std::log(2 * std::numbers::pi) - std::log(-z), 1e-3);
}
