#include "boed/cli.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <fstream>
#include <iostream>
#include <set>
#include <sstream>
#include <thread>

#include "CLI11.hpp"

#include "boed/agents.hpp"
#include "boed/autodiff/checkpoint.hpp"
#include "boed/error.hpp"
#include "boed/service.hpp"

namespace boed::cli {

namespace {

constexpr std::uint64_t kBenchStream = 0x62656e6368000001ULL;

std::string fmt(double v) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

void write_text(const std::filesystem::path& path, const std::string& text) {
  std::ofstream f(path, std::ios::binary);
  if (!f) throw Error("cannot write " + path.string());
  f << text;
  if (!f) throw Error("failed writing " + path.string());
}

void ensure_dir(const std::filesystem::path& dir) {
  std::error_code ec;
  std::filesystem::create_directories(dir, ec);
  if (ec) throw Error("cannot create output directory " + dir.string() + ": " + ec.message());
}

const std::set<std::string>& known_keys() {
  static const std::set<std::string> keys{"model",     "profile",  "seed",       "method",   "reward",
                                          "checkpoint", "out",     "rollouts",   "contrastive", "iterations",
                                          "horizon",   "gamma",    "particles",  "outer",    "proposals",
                                          "grid_step", "addr",     "checkpoints"};
  return keys;
}

std::string design_string(const Design& d) {
  std::string s;
  for (std::size_t i = 0; i < d.values.size(); ++i) {
    if (i) s += ';';
    s += fmt(d.values[i]);
  }
  return s;
}

}  // namespace

// ---------------------------------------------------------------------------
// RunConfig

RunConfig RunConfig::from_json(const nlohmann::json& j) {
  if (!j.is_object()) throw UsageError("run config must be a JSON object");
  for (const auto& [key, _] : j.items()) {
    if (!known_keys().count(key)) throw UsageError("unknown run config key '" + key + "'");
  }
  RunConfig c;
  try {
    auto get = [&j](const char* key, auto& field) {
      if (j.contains(key)) field = j.at(key).get<std::remove_reference_t<decltype(field)>>();
    };
    auto get_opt = [&j](const char* key, auto& field) {
      using T = typename std::remove_reference_t<decltype(field)>::value_type;
      if (j.contains(key) && !j.at(key).is_null()) field = j.at(key).get<T>();
    };
    get("model", c.model);
    get("profile", c.profile);
    get("seed", c.seed);
    get("method", c.method);
    get("reward", c.reward);
    get("checkpoint", c.checkpoint);
    get("out", c.out);
    get_opt("rollouts", c.rollouts);
    get_opt("contrastive", c.contrastive);
    get_opt("iterations", c.iterations);
    get_opt("horizon", c.horizon);
    get_opt("gamma", c.gamma);
    get("particles", c.particles);
    get("outer", c.outer);
    get("proposals", c.proposals);
    get("grid_step", c.grid_step);
    get("addr", c.addr);
    get("checkpoints", c.checkpoints);
  } catch (const nlohmann::json::exception& e) {
    throw UsageError(std::string("run config: ") + e.what());
  }
  return c;
}

nlohmann::json RunConfig::to_json() const {
  auto opt = [](const auto& o) { return o ? nlohmann::json(*o) : nlohmann::json(nullptr); };
  return {{"model", model},       {"profile", profile},         {"seed", seed},
          {"method", method},     {"reward", reward},           {"checkpoint", checkpoint},
          {"out", out_dir().string()}, {"rollouts", opt(rollouts)}, {"contrastive", opt(contrastive)},
          {"iterations", opt(iterations)}, {"horizon", opt(horizon)}, {"gamma", opt(gamma)},
          {"particles", particles}, {"outer", outer},           {"proposals", proposals},
          {"grid_step", grid_step}, {"addr", addr},             {"checkpoints", checkpoints}};
}

std::filesystem::path RunConfig::out_dir() const {
  if (!out.empty()) return out;
  if (const char* env = std::getenv("BOED_OUT"); env && *env) return env;
  return "boed_out";
}

std::size_t RunConfig::eval_rollouts() const {
  if (rollouts) return *rollouts;
  if (profile == "paper") return 1000;
  return model == "prey" ? 500 : 200;
}

std::size_t RunConfig::eval_contrastive() const {
  if (contrastive) return *contrastive;
  return profile == "paper" ? 1'000'000 : 10'000;
}

std::size_t RunConfig::eval_horizon() const {
  if (horizon) return *horizon;
  return train::TrainConfig::defaults(model, profile).horizon;
}

train::TrainConfig RunConfig::train_config() const {
  train::TrainConfig c = train::TrainConfig::defaults(model, profile);
  c.seed = seed;
  c.reward = train::parse_reward_mode(reward);
  if (iterations) c.iterations = *iterations;
  if (contrastive) c.contrastive = *contrastive;
  if (horizon) c.horizon = *horizon;
  if (gamma) c.gamma = *gamma;
  c.log_interval = std::max<std::size_t>(1, std::min<std::size_t>(c.iterations / 40, 100));
  c.validate();
  return c;
}

// ---------------------------------------------------------------------------
// train

TrainOutput cmd_train(const RunConfig& cfg, std::ostream& progress) {
  const train::TrainConfig tc = cfg.train_config();
  const std::filesystem::path dir = cfg.out_dir();
  ensure_dir(dir);
  const std::string stem = tc.model + "-" + train::to_string(tc.reward) + "-seed" + std::to_string(tc.seed);

  nlohmann::json header = {{"command", "train"}, {"run_config", cfg.to_json()}, {"train_config", tc.to_json()}};
  write_text(dir / "run_header.json", header.dump(2) + "\n");

  train::Trainer trainer(tc);
  TrainOutput out;
  out.rows = trainer.run([&progress](const train::TrainLogRow& r) {
    char buf[200];
    std::snprintf(buf, sizeof buf, "iter %zu  return %.4f +- %.4f  critic %.4g  actor %.4g  alpha %.4g  %.1fs\n",
                  r.iteration, r.mean_return, r.return_stderr, r.critic_loss, r.actor_loss, r.alpha, r.seconds);
    progress << buf << std::flush;
  });
  out.checkpoint = dir / (stem + ".ckpt");
  out.log = dir / (stem + "_train_log.csv");
  ad::save_checkpoint(out.checkpoint, trainer.checkpoint());
  train::write_train_log_csv(out.log, out.rows);
  return out;
}

// ---------------------------------------------------------------------------
// eval

namespace {

PolicyFactory make_factory(const RunConfig& cfg, const Model& model, std::shared_ptr<const agents::Actor>& keep) {
  if (cfg.method == "random") return [&model] { return std::make_unique<agents::RandomPolicy>(model); };
  if (cfg.method == "myopic-snis") {
    if (!model.design_space().discrete()) {
      throw UsageError("method myopic-snis needs a discrete design space; " + model.id() + " is continuous");
    }
    const std::size_t particles = cfg.particles, outer = cfg.outer;
    return [&model, particles, outer] { return std::make_unique<agents::MyopicSnisPolicy>(model, particles, outer); };
  }
  if (cfg.method == "rl") {
    if (cfg.checkpoint.empty()) throw UsageError("method rl needs --checkpoint");
    ad::Checkpoint ckpt;
    try {
      ckpt = ad::load_checkpoint(cfg.checkpoint);
    } catch (const ad::CheckpointError& e) {
      throw UsageError(std::string("cannot use checkpoint: ") + e.what());
    }
    keep = agents::load_actor(ckpt, model);
    std::shared_ptr<const agents::Actor> actor = keep;
    return [actor, &model] { return std::make_unique<agents::ActorPolicy>(actor, model, agents::ActMode::kMean); };
  }
  throw UsageError("unknown method '" + cfg.method + "' (rl, random, myopic-snis)");
}

}  // namespace

EvalOutput cmd_eval(const RunConfig& cfg) {
  const std::unique_ptr<Model> model = make_model(cfg.model);
  std::shared_ptr<const agents::Actor> actor;
  const PolicyFactory factory = make_factory(cfg, *model, actor);
  const std::size_t horizon = cfg.eval_horizon(), rollouts = cfg.eval_rollouts(), L = cfg.eval_contrastive();
  if (rollouts < 1) throw UsageError("--rollouts must be >= 1");

  EvalOutput out;
  out.rollouts = run_rollouts(factory, *model, L, horizon, rollouts, cfg.seed);
  for (std::size_t t = 1; t <= horizon; ++t) {
    out.lower.push_back(out.rollouts.lower_at(t));
    out.upper.push_back(out.rollouts.upper_at(t));
  }

  const std::filesystem::path dir = cfg.out_dir();
  ensure_dir(dir);
  const std::string stem = "eval_" + cfg.model + "_" + cfg.method;
  out.rollouts_csv = dir / (stem + "_rollouts.csv");
  out.aggregate_csv = dir / (stem + "_aggregate.csv");

  std::ostringstream rows;
  rows << "model,method,seed,rollout,t,g_lower,g_upper\n";
  for (std::size_t r = 0; r < out.rollouts.rollouts.size(); ++r) {
    const RolloutTrace& tr = out.rollouts.rollouts[r];
    for (std::size_t t = 0; t < horizon; ++t) {
      rows << cfg.model << ',' << cfg.method << ',' << cfg.seed << ',' << r << ',' << t + 1 << ',' << fmt(tr.lower[t])
           << ',' << fmt(tr.upper[t]) << '\n';
    }
  }
  write_text(out.rollouts_csv, rows.str());

  std::ostringstream agg;
  agg << "model,method,t,lower_mean,lower_stderr,upper_mean,upper_stderr,n\n";
  for (std::size_t t = 0; t < horizon; ++t) {
    agg << cfg.model << ',' << cfg.method << ',' << t + 1 << ',' << fmt(out.lower[t].mean) << ','
        << fmt(out.lower[t].stderr_) << ',' << fmt(out.upper[t].mean) << ',' << fmt(out.upper[t].stderr_) << ','
        << out.lower[t].rollouts << '\n';
  }
  write_text(out.aggregate_csv, agg.str());

  nlohmann::json header = {{"command", "eval"}, {"run_config", cfg.to_json()}, {"contrastive", L},
                           {"rollouts", rollouts}, {"horizon", horizon}};
  write_text(dir / (stem + "_header.json"), header.dump(2) + "\n");
  return out;
}

// ---------------------------------------------------------------------------
// toy1d

Toy1dOutput cmd_toy1d(const RunConfig& cfg, std::ostream& progress) {
  const std::filesystem::path dir = cfg.out_dir();
  ensure_dir(dir);
  Toy1dOutput out;
  const auto model = make_model("source1d");
  const std::size_t rollouts = cfg.rollouts.value_or(10'000);
  const std::size_t L = cfg.contrastive.value_or(1000);

  for (const double gamma : {0.0, 1.0}) {
    RunConfig tc = cfg;
    tc.model = "source1d";
    tc.gamma = gamma;
    tc.horizon = 2;
    tc.contrastive = std::nullopt;  // training L follows the profile; the flag sets the evaluation L
    tc.out = (dir / (gamma == 0.0 ? "toy1d_myopic" : "toy1d_nonmyopic")).string();
    progress << "toy1d: training gamma=" << gamma << '\n';
    const TrainOutput trained = cmd_train(tc, progress);

    const ad::Checkpoint ckpt = ad::load_checkpoint(trained.checkpoint);
    std::shared_ptr<const agents::Actor> actor = agents::load_actor(ckpt, *model);
    const Model& m = *model;
    PolicyFactory factory = [actor, &m] {
      return std::make_unique<agents::ActorPolicy>(actor, m, agents::ActMode::kMean);
    };
    const RolloutSet set = run_rollouts(factory, *model, L, 2, rollouts, cfg.seed);
    const std::string name = gamma == 0.0 ? "myopic" : "non-myopic";
    for (std::size_t t = 1; t <= 2; ++t) {
      const BoundEstimate est = set.lower_at(t);
      Toy1dRow row{name, gamma, t, est.mean, est.stderr_, est.rollouts, std::nullopt};
      if (t == 1) row.design = set.rollouts.front().designs.front().values[0];
      out.rows.push_back(row);
    }
  }

  progress << "toy1d: grid search over the oracle\n";
  const auto& source = dynamic_cast<const SourceModel&>(*model);
  out.grid = grid_search_optimal_design_1d(source, cfg.grid_step);
  out.rows.push_back({"grid-optimum", 0.0, 1, out.grid.eig, 0.0, 0, out.grid.design});

  std::ostringstream csv;
  csv << "agent,gamma,t,eig_mean,eig_stderr,n,design\n";
  for (const Toy1dRow& r : out.rows) {
    csv << r.agent << ',' << fmt(r.gamma) << ',' << r.t << ',' << fmt(r.eig_mean) << ',' << fmt(r.eig_stderr) << ','
        << r.n << ',' << (r.design ? fmt(*r.design) : std::string()) << '\n';
  }
  out.csv = dir / "toy1d.csv";
  write_text(out.csv, csv.str());
  return out;
}

// ---------------------------------------------------------------------------
// bench

std::string hardware_note() {
  std::string cpu = "unknown cpu";
  std::ifstream f("/proc/cpuinfo");
  std::string line;
  while (std::getline(f, line)) {
    if (line.rfind("model name", 0) == 0) {
      const auto colon = line.find(':');
      if (colon != std::string::npos) cpu = line.substr(colon + 2);
      break;
    }
  }
  return cpu + ", " + std::to_string(std::max(1u, std::thread::hardware_concurrency())) + " hardware threads";
}

BenchOutput cmd_bench(const RunConfig& cfg) {
  using Clock = std::chrono::steady_clock;
  const std::unique_ptr<Model> model = make_model(cfg.model);
  if (cfg.checkpoint.empty()) throw UsageError("bench needs --checkpoint");
  if (cfg.proposals < 1) throw UsageError("--proposals must be >= 1");
  ad::Checkpoint ckpt;
  try {
    ckpt = ad::load_checkpoint(cfg.checkpoint);
  } catch (const ad::CheckpointError& e) {
    throw UsageError(std::string("cannot use checkpoint: ") + e.what());
  }
  std::shared_ptr<const agents::Actor> actor = agents::load_actor(ckpt, *model);
  const std::size_t horizon = cfg.eval_horizon();

  // Environment steps use a single contrastive sample; only the policy side is timed.
  auto measure = [&](DesignPolicy& policy, std::vector<std::string>* designs) {
    std::vector<double> seconds;
    std::size_t episode = 0;
    while (seconds.size() < cfg.proposals) {
      Rng env = Rng::substream(cfg.seed, episode, kBenchStream);
      Rng act = Rng::substream(cfg.seed, episode, kPolicyStream);
      auto ctx = sedmdp::reset(*model, 1, horizon, sedmdp::RewardMode::kDense, env);
      policy.reset();
      std::optional<std::pair<Design, Outcome>> last;
      while (!ctx.done() && seconds.size() < cfg.proposals) {
        const auto t0 = Clock::now();
        if (last) policy.observe(last->first, last->second);
        Design d = policy.propose(act);
        seconds.push_back(std::chrono::duration<double>(Clock::now() - t0).count());
        const auto res = sedmdp::step(ctx, d);
        if (designs) designs->push_back(std::to_string(episode) + "," + std::to_string(ctx.t) + "," + design_string(d) + "," + fmt(res.y));
        last = {{std::move(d), res.y}};
      }
      ++episode;
    }
    const BoundEstimate est = summarize(seconds, BoundKind::kLower, 0, 0);
    return LatencyStats{est.mean, est.stderr_, seconds.size()};
  };

  BenchOutput out;
  std::vector<std::string> designs;
  agents::ActorPolicy rl(actor, *model, agents::ActMode::kMean);
  out.rl = measure(rl, &designs);
  agents::RandomPolicy random(*model);
  out.random = measure(random, nullptr);
  out.hardware = hardware_note();

  const std::filesystem::path dir = cfg.out_dir();
  ensure_dir(dir);
  out.designs_csv = dir / "bench_designs.csv";
  std::ostringstream csv;
  csv << "episode,t,design,y\n";
  for (const std::string& row : designs) csv << row << '\n';
  write_text(out.designs_csv, csv.str());

  out.json = dir / "bench.json";
  nlohmann::json j = {
      {"model", cfg.model},
      {"checkpoint", cfg.checkpoint},
      {"proposals", out.rl.proposals},
      {"rl", {{"mean_seconds", out.rl.mean_seconds}, {"stderr_seconds", out.rl.stderr_seconds}}},
      {"random", {{"mean_seconds", out.random.mean_seconds}, {"stderr_seconds", out.random.stderr_seconds}}},
      {"hardware", out.hardware},
      {"timed", "summary update + policy forward per proposed design"}};
  write_text(out.json, j.dump(2) + "\n");
  return out;
}

// ---------------------------------------------------------------------------
// Command line

int run_cli(const std::vector<std::string>& args) {
  std::vector<char*> argv;
  std::vector<std::string> copy{"boed"};
  copy.insert(copy.end(), args.begin(), args.end());
  for (std::string& a : copy) argv.push_back(a.data());
  return run_cli(static_cast<int>(argv.size()), argv.data());
}

int run_cli(int argc, char** argv) {
  CLI::App app{"Sequential Bayesian experimental design with reinforcement learning"};
  app.require_subcommand(1);
  app.set_version_flag("--version", "boed 1.0");

  struct Flags {
    std::string config, model, profile, method, reward, checkpoint, out, addr, checkpoints;
    std::optional<std::uint64_t> seed;
    std::optional<std::size_t> rollouts, contrastive, iterations, horizon, particles, outer, proposals;
    std::optional<double> gamma, grid_step;
  } f;

  auto common = [&f](CLI::App* sub) {
    sub->add_option("--config", f.config, "JSON run config; flags override its keys");
    sub->add_option("--model", f.model, "source | source1d | ces | prey | lingauss");
    sub->add_option("--profile", f.profile, "desk | paper");
    sub->add_option("--seed", f.seed, "random seed");
    sub->add_option("--out", f.out, "output directory (default $BOED_OUT, then ./boed_out)");
  };

  CLI::App* train = app.add_subcommand("train", "train a policy");
  common(train);
  train->add_option("--reward", f.reward, "dense | sparse");
  train->add_option("--gamma", f.gamma, "discount factor");
  train->add_option("--contrastive,-L", f.contrastive, "contrastive samples L during training");
  train->add_option("--iterations", f.iterations, "training iterations (episodes)");
  train->add_option("--horizon,-T", f.horizon, "experiments per episode");

  CLI::App* eval = app.add_subcommand("eval", "estimate sPCE / sNMC bounds");
  common(eval);
  eval->add_option("--method", f.method, "rl | random | myopic-snis");
  eval->add_option("--checkpoint", f.checkpoint, "policy checkpoint for --method rl");
  eval->add_option("--rollouts", f.rollouts, "number of rollouts");
  eval->add_option("--contrastive,-L", f.contrastive, "contrastive samples L");
  eval->add_option("--horizon,-T", f.horizon, "experiments per rollout");
  eval->add_option("--particles", f.particles, "myopic-snis particles");
  eval->add_option("--outer", f.outer, "myopic-snis outcome draws per candidate");

  CLI::App* toy = app.add_subcommand("toy1d", "myopic vs non-myopic agents on the 1-D source model");
  common(toy);
  toy->add_option("--rollouts", f.rollouts, "evaluation rollouts (default 10000)");
  toy->add_option("--contrastive,-L", f.contrastive, "evaluation contrastive samples (default 1000)");
  toy->add_option("--iterations", f.iterations, "training iterations per agent");
  toy->add_option("--grid-step", f.grid_step, "design spacing of the oracle grid search");

  CLI::App* bench = app.add_subcommand("bench", "deployment latency per proposed design");
  common(bench);
  bench->add_option("--checkpoint", f.checkpoint, "policy checkpoint")->required();
  bench->add_option("--proposals", f.proposals, "number of timed proposals (default 1000)");

  CLI::App* serve = app.add_subcommand("serve", "HTTP session service");
  serve->add_option("--addr", f.addr, "HOST:PORT")->default_val("127.0.0.1:8080");
  serve->add_option("--checkpoints", f.checkpoints, "checkpoint directory")->default_val("checkpoints");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? kExitOk : kExitUsage;
  }

  try {
    RunConfig cfg;
    if (!f.config.empty()) {
      std::ifstream in(f.config);
      if (!in) throw UsageError("cannot read --config " + f.config);
      nlohmann::json j;
      try {
        j = nlohmann::json::parse(in);
      } catch (const nlohmann::json::exception& e) {
        throw UsageError("--config " + f.config + " is not valid JSON: " + e.what());
      }
      cfg = RunConfig::from_json(j);
    }
    if (!f.model.empty()) cfg.model = f.model;
    if (!f.profile.empty()) cfg.profile = f.profile;
    if (!f.method.empty()) cfg.method = f.method;
    if (!f.reward.empty()) cfg.reward = f.reward;
    if (!f.checkpoint.empty()) cfg.checkpoint = f.checkpoint;
    if (!f.out.empty()) cfg.out = f.out;
    if (f.seed) cfg.seed = *f.seed;
    if (f.rollouts) cfg.rollouts = f.rollouts;
    if (f.contrastive) cfg.contrastive = f.contrastive;
    if (f.iterations) cfg.iterations = f.iterations;
    if (f.horizon) cfg.horizon = f.horizon;
    if (f.gamma) cfg.gamma = f.gamma;
    if (f.particles) cfg.particles = *f.particles;
    if (f.outer) cfg.outer = *f.outer;
    if (f.proposals) cfg.proposals = *f.proposals;
    if (f.grid_step) cfg.grid_step = *f.grid_step;
    if (cfg.profile != "desk" && cfg.profile != "paper") throw UsageError("--profile must be desk or paper");
    make_model(cfg.model);

    if (*train) {
      const TrainOutput o = cmd_train(cfg, std::cerr);
      std::cout << o.checkpoint.string() << '\n';
    } else if (*eval) {
      const EvalOutput o = cmd_eval(cfg);
      const BoundEstimate& lo = o.lower.back();
      const BoundEstimate& up = o.upper.back();
      std::printf("%s %s T=%zu L=%zu n=%zu  lower %.4f +- %.4f  upper %.4f +- %.4f\n", cfg.model.c_str(),
                  cfg.method.c_str(), lo.horizon, lo.contrastive, lo.rollouts, lo.mean, lo.stderr_, up.mean,
                  up.stderr_);
      std::cout << o.aggregate_csv.string() << '\n';
    } else if (*toy) {
      const Toy1dOutput o = cmd_toy1d(cfg, std::cerr);
      for (const Toy1dRow& r : o.rows) {
        std::printf("%-12s t=%zu  eig %.4f +- %.4f\n", r.agent.c_str(), r.t, r.eig_mean, r.eig_stderr);
      }
      std::cout << o.csv.string() << '\n';
    } else if (*bench) {
      const BenchOutput o = cmd_bench(cfg);
      std::printf("rl %.3g s +- %.2g  random %.3g s +- %.2g  over %zu proposals (%s)\n", o.rl.mean_seconds,
                  o.rl.stderr_seconds, o.random.mean_seconds, o.random.stderr_seconds, o.rl.proposals,
                  o.hardware.c_str());
      std::cout << o.json.string() << '\n';
    } else if (*serve) {
      service::ServiceConfig sc;
      sc.checkpoints_dir = f.checkpoints;
      return service::serve(sc, f.addr);
    }
    return kExitOk;
  } catch (const UsageError& e) {
    std::cerr << "usage error: " << e.what() << '\n';
    return kExitUsage;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kExitRuntime;
  }
}

}  // namespace boed::cli
