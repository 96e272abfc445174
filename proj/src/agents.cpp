#include "boed/agents.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <limits>
#include <numbers>

#include "boed/error.hpp"

namespace boed::agents {

namespace {

constexpr double kSquashLimit = 1.0 - 1e-12;
constexpr double kMinParticleEss = 10.0;

double softplus(double x) { return std::max(x, 0.0) + std::log1p(std::exp(-std::abs(x))); }

/// Open-interval uniform, so the Gumbel transform never sees log(0).
double open_uniform(Rng& rng) { return (static_cast<double>(rng() >> 11) + 0.5) * 0x1p-53; }
double gumbel(Rng& rng) { return -std::log(-std::log(open_uniform(rng))); }

ad::Array row_array(std::span<const double> v) {
  return ad::Array({1, v.size()}, std::vector<double>(v.begin(), v.end()));
}

std::size_t argmax(std::span<const double> v) {
  return static_cast<std::size_t>(std::max_element(v.begin(), v.end()) - v.begin());
}

ad::MlpSpec encoder_spec(const Model& model, const NetworkShape& shape) {
  return {model.feature_dim(), shape.hidden, ad::Activation::kRelu, shape.summary_dim};
}

}  // namespace

double log1m_tanh_sq(double u) { return 2.0 * (std::numbers::ln2 - u - softplus(-2.0 * u)); }

std::string to_string(PolicyKind kind) { return kind == PolicyKind::kContinuous ? "continuous" : "discrete"; }

// ---------------------------------------------------------------------------
// Encoder and summaries

Encoder::Encoder(const Model& model, const NetworkShape& shape, const std::string& prefix, Rng& rng)
    : net_(encoder_spec(model, shape), prefix, rng) {}

std::vector<double> Encoder::encode(const Model& model, const Design& d, Outcome y) const {
  const ad::Array out = net_.apply(row_array(model.features(d, y)));
  return {out.values().begin(), out.values().end()};
}

ad::Node Encoder::forward(ad::Graph& g, ad::Node features, bool frozen) { return net_.forward(g, features, frozen); }

Summary zero_summary(std::size_t dim) { return Summary{std::vector<double>(dim, 0.0), 0, {}}; }

void update_summary(Summary& summary, const Encoder& encoder, const Model& model, const Design& d, Outcome y) {
  if (summary.values.size() != encoder.summary_dim()) {
    throw UsageError("summary has width " + std::to_string(summary.values.size()) + ", encoder emits " +
                     std::to_string(encoder.summary_dim()));
  }
  summary.encodings.push_back(encoder.encode(model, d, y));
  std::vector<const std::vector<double>*> order;
  for (const auto& e : summary.encodings) order.push_back(&e);
  std::sort(order.begin(), order.end(), [](const auto* a, const auto* b) { return *a < *b; });
  std::fill(summary.values.begin(), summary.values.end(), 0.0);
  for (const auto* e : order)
    for (std::size_t i = 0; i < e->size(); ++i) summary.values[i] += (*e)[i];
  ++summary.step;
}

Summary encode_history(const Encoder& encoder, const Model& model, std::span<const Design> designs,
                       std::span<const Outcome> outcomes) {
  if (designs.size() != outcomes.size()) throw UsageError("history has unequal design and outcome counts");
  Summary s = zero_summary(encoder.summary_dim());
  for (std::size_t k = 0; k < designs.size(); ++k) update_summary(s, encoder, model, designs[k], outcomes[k]);
  return s;
}

ad::Array pair_features(const Model& model, std::span<const Design> designs, std::span<const Outcome> outcomes) {
  if (designs.size() != outcomes.size()) throw UsageError("history has unequal design and outcome counts");
  const std::size_t f = model.feature_dim();
  ad::Array out = ad::Array::matrix(designs.size(), f);
  for (std::size_t k = 0; k < designs.size(); ++k) {
    const std::vector<double> row = model.features(designs[k], outcomes[k]);
    std::copy(row.begin(), row.end(), out.data() + k * f);
  }
  return out;
}

// ---------------------------------------------------------------------------
// Actors

std::vector<ad::Parameter*> Actor::parameters() {
  std::vector<ad::Parameter*> out = encoder_.net().parameters();
  for (ad::Parameter* p : head_.parameters()) out.push_back(p);
  return out;
}

std::vector<const ad::Parameter*> Actor::parameters() const {
  std::vector<const ad::Parameter*> out = encoder_.net().parameters();
  for (const ad::Parameter* p : head_.parameters()) out.push_back(p);
  return out;
}

ContinuousPolicy::ContinuousPolicy(const Model& model, const NetworkShape& shape, Rng& rng) {
  const DesignSpace& space = model.design_space();
  if (space.discrete()) throw UsageError("continuous policy needs a box design space, " + model.id() + " is discrete");
  lower_ = space.lower;
  upper_ = space.upper;
  encoder_ = Encoder(model, shape, "actor.enc", rng);
  head_ = ad::Mlp({shape.summary_dim, shape.hidden, ad::Activation::kRelu, 2 * lower_.size()}, "actor.head", rng);
}

Design ContinuousPolicy::to_design(std::span<const double> squashed) const {
  Design d;
  d.values.resize(lower_.size());
  for (std::size_t i = 0; i < lower_.size(); ++i) {
    const double half = 0.5 * (upper_[i] - lower_[i]);
    const double s = std::clamp(squashed[i], -kSquashLimit, kSquashLimit);
    d.values[i] = lower_[i] + half * (1.0 + s);
  }
  return d;
}

ActionSample ContinuousPolicy::act(std::span<const double> summary, Rng& rng, ActMode mode) const {
  if (mode == ActMode::kRelaxed) throw UsageError("relaxed actions exist only for discrete policies");
  const ad::Array out = head_.apply(row_array(summary));
  const std::size_t dim = lower_.size();
  ActionSample s;
  s.action.resize(dim);
  std::vector<double> u(dim);
  for (std::size_t i = 0; i < dim; ++i) {
    const double mean = out[i];
    const double log_std = 0.5 * std::clamp(out[dim + i], kMinLogVar, kMaxLogVar);
    u[i] = mode == ActMode::kSample ? mean + std::exp(log_std) * rng.normal() : mean;
    s.action[i] = std::clamp(std::tanh(u[i]), -kSquashLimit, kSquashLimit);
  }
  s.design = to_design(s.action);
  s.log_prob = log_density(out.values(), s.design);
  return s;
}

double ContinuousPolicy::log_density(std::span<const double> head_out, const Design& d) const {
  const std::size_t dim = lower_.size();
  if (head_out.size() != 2 * dim || d.values.size() != dim) throw UsageError("log_density: width mismatch");
  double lp = 0.0;
  for (std::size_t i = 0; i < dim; ++i) {
    const double half = 0.5 * (upper_[i] - lower_[i]);
    const double s = std::clamp((d.values[i] - lower_[i]) / half - 1.0, -kSquashLimit, kSquashLimit);
    const double u = std::atanh(s);
    const double mean = head_out[i];
    const double log_std = 0.5 * std::clamp(head_out[dim + i], kMinLogVar, kMaxLogVar);
    const double z = (u - mean) * std::exp(-log_std);
    lp += -0.5 * z * z - log_std - 0.5 * std::log(2.0 * std::numbers::pi) - log1m_tanh_sq(u) - std::log(half);
  }
  return lp;
}

GraphSample ContinuousPolicy::sample(ad::Graph& g, ad::Node summaries, Rng& rng) {
  const std::size_t dim = lower_.size();
  const ad::Node out = head_.forward(g, summaries);
  const std::size_t batch = g.value(out).rows();
  const ad::Node mean = g.slice_cols(out, 0, dim);
  const ad::Node log_std = g.scale(g.clamp(g.slice_cols(out, dim, 2 * dim), kMinLogVar, kMaxLogVar), 0.5);
  ad::Array noise = ad::Array::matrix(batch, dim);
  for (double& v : noise.values()) v = rng.normal();
  const ad::Node u = g.add(mean, g.multiply(g.exp(log_std), g.constant(std::move(noise))));
  const ad::Node action = g.tanh(u);

  double log_half = 0.0;
  for (std::size_t i = 0; i < dim; ++i) log_half += std::log(0.5 * (upper_[i] - lower_[i]));
  // log(1 - tanh(u)^2) = 2 (log 2 - u - softplus(-2u))
  const ad::Node jac = g.scale(g.add_scalar(g.sub(g.scale(u, -1.0), g.softplus(g.scale(u, -2.0))), std::numbers::ln2), 2.0);
  const ad::Node per_dim = g.sub(g.gaussian_log_pdf(u, mean, log_std), jac);
  const ad::Node log_prob = g.add_scalar(g.sum_cols(per_dim), -log_half);
  return {action, log_prob, log_prob};
}

std::vector<double> ContinuousPolicy::action_vector(const Design& d) const {
  if (d.values.size() != lower_.size()) throw UsageError("design width does not match the policy");
  std::vector<double> a(lower_.size());
  for (std::size_t i = 0; i < a.size(); ++i) {
    const double half = 0.5 * (upper_[i] - lower_[i]);
    a[i] = (d.values[i] - lower_[i]) / half - 1.0;
  }
  return a;
}

DiscretePolicy::DiscretePolicy(const Model& model, const NetworkShape& shape, Rng& rng, double temperature)
    : temperature_(temperature) {
  const DesignSpace& space = model.design_space();
  if (!space.discrete()) throw UsageError("discrete policy needs a finite design set, " + model.id() + " is a box");
  if (!(temperature > 0)) throw UsageError("Gumbel-softmax temperature must be positive");
  first_choice_ = space.first_choice;
  num_choices_ = space.num_choices;
  encoder_ = Encoder(model, shape, "actor.enc", rng);
  head_ = ad::Mlp({shape.summary_dim, shape.hidden, ad::Activation::kRelu, static_cast<std::size_t>(num_choices_)},
                  "actor.head", rng);
}

std::vector<double> DiscretePolicy::relaxed(std::span<const double> logits, std::span<const double> noise,
                                            double temperature) const {
  std::vector<double> z(logits.size());
  for (std::size_t i = 0; i < z.size(); ++i) z[i] = (logits[i] + noise[i]) / temperature;
  const double m = *std::max_element(z.begin(), z.end());
  double s = 0.0;
  for (double& v : z) s += (v = std::exp(v - m));
  for (double& v : z) v /= s;
  return z;
}

ActionSample DiscretePolicy::act(std::span<const double> summary, Rng& rng, ActMode mode) const {
  const ad::Array out = head_.apply(row_array(summary));
  const std::span<const double> logits = out.values();
  const double lse = logsumexp(logits);
  const std::size_t k = logits.size();
  ActionSample s;
  std::size_t index = 0;
  if (mode == ActMode::kMean) {
    index = argmax(logits);
  } else {
    std::vector<double> noise(k);
    for (double& v : noise) v = gumbel(rng);
    if (mode == ActMode::kRelaxed) {
      s.action = relaxed(logits, noise, temperature_);
      index = argmax(s.action);
    } else {
      std::vector<double> z(k);
      for (std::size_t i = 0; i < k; ++i) z[i] = logits[i] + noise[i];
      index = argmax(z);
    }
  }
  if (s.action.empty()) {
    s.action.assign(k, 0.0);
    s.action[index] = 1.0;
  }
  s.design = Design::discrete(first_choice_ + static_cast<int>(index));
  s.log_prob = logits[index] - lse;
  return s;
}

GraphSample DiscretePolicy::sample(ad::Graph& g, ad::Node summaries, Rng& rng) {
  const ad::Node logits = head_.forward(g, summaries);
  const std::size_t batch = g.value(logits).rows(), k = g.value(logits).cols();
  ad::Array noise = ad::Array::matrix(batch, k);
  for (double& v : noise.values()) v = gumbel(rng);
  const ad::Node z = g.scale(g.add(logits, g.constant(std::move(noise))), 1.0 / temperature_);
  const ad::Node soft = g.exp(g.sub(z, g.logsumexp(z)));

  const ad::Array& zv = g.value(z);
  const ad::Array& sv = g.value(soft);
  ad::Array hard = ad::Array::matrix(batch, k);
  ad::Array shift = ad::Array::matrix(batch, k);
  for (std::size_t r = 0; r < batch; ++r) {
    const std::size_t idx = argmax(zv.row(r));
    hard.at(r, idx) = 1.0;
    for (std::size_t c = 0; c < k; ++c) shift.at(r, c) = hard.at(r, c) - sv.at(r, c);
  }
  // Straight-through: the forward value is the one-hot sample, gradients follow the relaxed sample.
  const ad::Node action = g.add(soft, g.constant(std::move(shift)));
  const ad::Node log_p = g.sub(logits, g.logsumexp(logits));
  const ad::Node log_prob = g.sum_cols(g.multiply(log_p, g.constant(std::move(hard))));
  const ad::Node expected = g.sum_cols(g.multiply(g.exp(log_p), log_p));
  return {action, log_prob, expected};
}

std::vector<double> DiscretePolicy::action_vector(const Design& d) const {
  const int idx = d.choice() - first_choice_;
  if (idx < 0 || idx >= num_choices_) throw DomainError("design " + std::to_string(d.choice()) + " outside the choice set");
  std::vector<double> a(static_cast<std::size_t>(num_choices_), 0.0);
  a[static_cast<std::size_t>(idx)] = 1.0;
  return a;
}

std::unique_ptr<Actor> make_actor(const Model& model, const NetworkShape& shape, Rng& rng) {
  if (model.design_space().discrete()) return std::make_unique<DiscretePolicy>(model, shape, rng);
  return std::make_unique<ContinuousPolicy>(model, shape, rng);
}

// ---------------------------------------------------------------------------
// Critics

CriticEnsemble::CriticEnsemble(const Model& model, std::size_t action_dim, std::size_t members,
                               const NetworkShape& shape, Rng& rng)
    : encoder_(model, shape, "critic.enc", rng) {
  if (members < 1) throw UsageError("critic ensemble needs at least one member");
  for (std::size_t i = 0; i < members; ++i) {
    heads_.emplace_back(ad::MlpSpec{shape.summary_dim + action_dim, shape.hidden, ad::Activation::kRelu, 1},
                        "critic.q" + std::to_string(i), rng);
  }
}

ad::Node CriticEnsemble::q(ad::Graph& g, std::size_t member, ad::Node summaries, ad::Node actions, bool frozen) {
  return heads_.at(member).forward(g, g.concatenate(summaries, actions), frozen);
}

ad::Array CriticEnsemble::q_values(std::size_t member, const ad::Array& summaries, const ad::Array& actions) const {
  const std::size_t rows = summaries.rows(), cs = summaries.cols(), ca = actions.cols();
  if (actions.rows() != rows) throw AutodiffError("q_values: summaries and actions have different batch sizes");
  ad::Array x = ad::Array::matrix(rows, cs + ca);
  for (std::size_t r = 0; r < rows; ++r) {
    std::copy_n(summaries.data() + r * cs, cs, x.data() + r * (cs + ca));
    std::copy_n(actions.data() + r * ca, ca, x.data() + r * (cs + ca) + cs);
  }
  return heads_.at(member).apply(x);
}

std::vector<ad::Parameter*> CriticEnsemble::parameters() {
  std::vector<ad::Parameter*> out = encoder_.net().parameters();
  for (ad::Mlp& h : heads_)
    for (ad::Parameter* p : h.parameters()) out.push_back(p);
  return out;
}

std::vector<const ad::Parameter*> CriticEnsemble::parameters() const {
  std::vector<const ad::Parameter*> out = encoder_.net().parameters();
  for (const ad::Mlp& h : heads_)
    for (const ad::Parameter* p : h.parameters()) out.push_back(p);
  return out;
}

// ---------------------------------------------------------------------------
// Baselines

Design baseline_random(const Model& model, Rng& rng) {
  const DesignSpace& space = model.design_space();
  if (space.discrete()) return Design::discrete(rng.uniform_int(space.first_choice, space.first_choice + space.num_choices - 1));
  Design d;
  for (std::size_t i = 0; i < space.lower.size(); ++i) d.values.push_back(rng.uniform(space.lower[i], space.upper[i]));
  return d;
}

std::vector<Design> enumerate_designs(const DesignSpace& space) {
  if (!space.discrete()) throw UsageError("cannot enumerate a continuous design space");
  std::vector<Design> out;
  out.reserve(static_cast<std::size_t>(space.num_choices));
  for (int i = 0; i < space.num_choices; ++i) out.push_back(Design::discrete(space.first_choice + i));
  return out;
}

MyopicChoice baseline_myopic_discrete(const Model& model, const ThetaSet& particles, std::span<const double> ell,
                                      std::span<const Design> candidates, std::size_t outer, Rng& rng) {
  if (particles.size() != ell.size()) throw UsageError("particle and log-likelihood counts differ");
  if (candidates.empty()) throw UsageError("no candidate designs");
  if (outer < 1) throw UsageError("myopic baseline needs at least one outer sample");
  const SnisPosterior post = posterior_snis(ell);
  if (post.ess < kMinParticleEss) {
    char buf[160];
    std::snprintf(buf, sizeof buf, "myopic baseline: particle ESS %.2f below %.0f; use more particles (now %zu)",
                  post.ess, kMinParticleEss, particles.size());
    throw NumericalError(buf);
  }
  const std::size_t n = particles.size();
  std::vector<double> log_w(n), cumulative(n);
  double acc = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    log_w[i] = post.weights[i] > 0 ? std::log(post.weights[i]) : -std::numeric_limits<double>::infinity();
    cumulative[i] = (acc += post.weights[i]);
  }
  // Common random numbers: every candidate sees the same parameter draws and uniforms.
  const std::uint64_t crn_seed = rng();

  MyopicChoice choice;
  choice.scores.reserve(candidates.size());
  std::vector<Predictive> preds(n);
  std::vector<double> terms(n);
  for (const Design& d : candidates) {
    model.validate_design(d);
    for (std::size_t i = 0; i < n; ++i) preds[i] = model.predictive(particles.row(i), d);
    Rng crn(crn_seed);
    double score = 0.0;
    for (std::size_t j = 0; j < outer; ++j) {
      const double u = crn.uniform() * acc;
      const std::size_t i0 = std::min<std::size_t>(
          static_cast<std::size_t>(std::upper_bound(cumulative.begin(), cumulative.end(), u) - cumulative.begin()),
          n - 1);
      const Outcome y = model.sample_outcome(preds[i0], d, crn);
      for (std::size_t i = 0; i < n; ++i) terms[i] = log_w[i] + model.log_likelihood(preds[i], d, y);
      score += model.log_likelihood(preds[i0], d, y) - logsumexp(terms);
    }
    choice.scores.push_back(score / static_cast<double>(outer));
  }
  choice.design = candidates[argmax(choice.scores)];
  return choice;
}

MyopicSnisPolicy::MyopicSnisPolicy(const Model& model, std::size_t particles, std::size_t outer)
    : model_(&model), num_particles_(particles), outer_(outer) {
  if (particles < 1) throw UsageError("myopic baseline needs at least one particle");
  candidates_ = enumerate_designs(model.design_space());
}

void MyopicSnisPolicy::reset() {
  particles_ = ThetaSet();
  ell_.clear();
}

Design MyopicSnisPolicy::propose(Rng& rng) {
  if (particles_.size() == 0) {
    particles_ = ThetaSet(model_->theta_dim(), num_particles_);
    for (std::size_t i = 0; i < num_particles_; ++i) model_->sample_prior(rng, particles_.row(i));
    ell_.assign(num_particles_, 0.0);
  }
  return baseline_myopic_discrete(*model_, particles_, ell_, candidates_, outer_, rng).design;
}

void MyopicSnisPolicy::observe(const Design& d, Outcome y) {
  if (particles_.size() == 0) throw UsageError("observe before propose");
  std::vector<double> inc(ell_.size());
  model_->log_likelihoods(particles_, d, y, inc);
  for (std::size_t i = 0; i < ell_.size(); ++i) ell_[i] += inc[i];
}

ActorPolicy::ActorPolicy(std::shared_ptr<const Actor> actor, const Model& model, ActMode mode)
    : actor_(std::move(actor)), model_(&model), mode_(mode) {
  if (!actor_) throw UsageError("ActorPolicy needs an actor");
  reset();
}

void ActorPolicy::reset() { summary_ = zero_summary(actor_->encoder().summary_dim()); }

Design ActorPolicy::propose(Rng& rng) { return actor_->act(summary_.values, rng, mode_).design; }

void ActorPolicy::observe(const Design& d, Outcome y) { update_summary(summary_, actor_->encoder(), *model_, d, y); }

// ---------------------------------------------------------------------------
// Persistence

ad::Checkpoint make_policy_checkpoint(const Actor& actor, const CriticEnsemble* critics, const Model& model,
                                      const NetworkShape& shape, nlohmann::json extra_meta) {
  ad::Checkpoint ckpt;
  ckpt.meta = extra_meta.is_object() ? std::move(extra_meta) : nlohmann::json::object();
  ckpt.meta["format"] = "boed-policy";
  ckpt.meta["policy_kind"] = to_string(actor.kind());
  ckpt.meta["model"] = model.id();
  ckpt.meta["model_hyperparameters"] = model.hyperparameters();
  ckpt.meta["summary_dim"] = shape.summary_dim;
  ckpt.meta["hidden"] = shape.hidden;
  ckpt.meta["action_dim"] = actor.action_dim();
  if (const auto* dp = dynamic_cast<const DiscretePolicy*>(&actor)) ckpt.meta["temperature"] = dp->temperature();
  std::vector<const ad::Parameter*> params = actor.parameters();
  if (critics) {
    ckpt.meta["critics"] = critics->size();
    for (const ad::Parameter* p : critics->parameters()) params.push_back(p);
  }
  ckpt.tensors = ad::to_tensors(params);
  return ckpt;
}

std::unique_ptr<Actor> load_actor(const ad::Checkpoint& ckpt, const Model& model) {
  const nlohmann::json& m = ckpt.meta;
  if (m.value("format", std::string()) != "boed-policy") throw UsageError("checkpoint does not hold a policy");
  const std::string stored = m.value("model", std::string());
  if (stored != model.id()) {
    throw UsageError("checkpoint was trained on model '" + stored + "', not '" + model.id() + "'");
  }
  NetworkShape shape;
  try {
    shape.summary_dim = m.at("summary_dim").get<std::size_t>();
    shape.hidden = m.at("hidden").get<std::vector<std::size_t>>();
  } catch (const nlohmann::json::exception& e) {
    throw UsageError(std::string("checkpoint metadata is incomplete: ") + e.what());
  }
  Rng scratch(0);
  std::unique_ptr<Actor> actor;
  if (model.design_space().discrete()) {
    actor = std::make_unique<DiscretePolicy>(model, shape, scratch, m.value("temperature", 1.0));
  } else {
    actor = std::make_unique<ContinuousPolicy>(model, shape, scratch);
  }
  ad::assign_from(ckpt, actor->parameters());
  return actor;
}

}  // namespace boed::agents
