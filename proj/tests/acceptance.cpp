// Acceptance gate: one PASS/FAIL line per criterion, exit status 1 if any fails.
//
//   acceptance [--only A1,A5] [--artifacts DIR]
//
// Trained checkpoints for A6 and A10 are cached under DIR and reused when their
// recorded train config matches; evaluation always reruns.

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iostream>
#include <map>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include <fcntl.h>
#include <unistd.h>

#include "CLI11.hpp"
#include "json.hpp"

#include "boed/agents.hpp"
#include "boed/cli.hpp"
#include "boed/estimators.hpp"
#include "boed/models.hpp"
#include "boed/sedmdp.hpp"
#include "gradient_checks.hpp"

using namespace boed;
namespace fs = std::filesystem;

namespace {

struct Verdict {
  bool pass = false;
  std::string detail;
};

std::string fmt(const char* f, auto... args) {
  char buf[512];
  std::snprintf(buf, sizeof buf, f, args...);
  return buf;
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

// ---------------------------------------------------------------------------

struct EpisodeSums {
  double dense_sum = 0.0;
  double sparse_sum = 0.0;
  double g_final = 0.0;
};

EpisodeSums paired_episode(const Model& model, std::size_t horizon, std::uint64_t episode) {
  constexpr std::size_t kL = 100;
  Rng env_d = Rng::substream(2024, episode), env_s = Rng::substream(2024, episode);
  Rng pol_d = Rng::substream(2024, episode, kPolicyStream), pol_s = Rng::substream(2024, episode, kPolicyStream);
  sedmdp::EpisodeContext dense = sedmdp::reset(model, kL, horizon, sedmdp::RewardMode::kDense, env_d);
  sedmdp::EpisodeContext sparse = sedmdp::reset(model, kL, horizon, sedmdp::RewardMode::kSparse, env_s);
  std::vector<double> rd, rs;
  while (!dense.done()) {
    rd.push_back(sedmdp::step(dense, agents::baseline_random(model, pol_d)).reward);
    rs.push_back(sedmdp::step(sparse, agents::baseline_random(model, pol_s)).reward);
  }
  return {sedmdp::undiscounted_return(rd), sedmdp::undiscounted_return(rs), g_value(dense.ell)};
}

const std::vector<std::pair<std::string, std::size_t>> kTheoremModels{{"source", 30}, {"ces", 10}, {"prey", 10}};

Verdict a1() {
  double worst = 0.0;
  for (const auto& [id, horizon] : kTheoremModels) {
    const auto model = make_model(id);
    for (std::uint64_t e = 0; e < 100; ++e) {
      const EpisodeSums s = paired_episode(*model, horizon, e);
      worst = std::max(worst, std::abs(s.dense_sum - s.g_final));
    }
  }
  return {worst < 1e-9, fmt("max |sum_t r_t - g(ell_T)| = %.3g over 300 episodes (tol 1e-9)", worst)};
}

Verdict a2() {
  double worst = 0.0;
  for (const auto& [id, horizon] : kTheoremModels) {
    const auto model = make_model(id);
    for (std::uint64_t e = 0; e < 100; ++e) {
      const EpisodeSums s = paired_episode(*model, horizon, e);
      worst = std::max(worst, std::abs(s.dense_sum - s.sparse_sum));
    }
  }
  return {worst < 1e-12, fmt("max |dense return - sparse return| = %.3g over 300 episodes (tol 1e-12)", worst)};
}

Verdict a3() {
  LinearGaussianModel model;
  const double truth = 0.5 * std::log(2.0);
  PolicyFactory fixed = [] { return std::make_unique<FixedDesignPolicy>(Design{{1.0}}); };
  const BoundEstimate lo = spce(fixed, model, 4095, 1, 20000, 3);
  const BoundEstimate up = snmc(fixed, model, 4095, 1, 20000, 3);
  const bool pass = lo.mean <= truth + 3 * lo.stderr_ && up.mean >= truth - 3 * up.stderr_ &&
                    std::abs(lo.mean - truth) < 0.02;
  return {pass, fmt("sPCE %.4f +- %.4f, sNMC %.4f +- %.4f, truth %.4f (|sPCE - truth| tol 0.02)", lo.mean, lo.stderr_,
                    up.mean, up.stderr_, truth)};
}

Verdict a4() {
  const auto model = make_model("source1d");
  const auto& source = dynamic_cast<const SourceModel&>(*model);
  OracleGrid fine;
  fine.theta_points = 2 * fine.theta_points - 1;
  fine.outcome_points = 2 * fine.outcome_points - 1;
  bool pass = true;
  double worst_z = 0.0, worst_doubling = 0.0;
  std::uint64_t seed = 40;
  for (const double d : {-2.5, 0.0, 0.7, 1.5, 3.0}) {
    const double oracle = eig_1d_oracle(source, d);
    const BoundEstimate est = pce(*model, Design{{d}}, 10000, 100000, seed++);
    const double z = std::abs(est.mean - oracle) / est.stderr_;
    const double doubling = std::abs(oracle - eig_1d_oracle(source, d, fine));
    worst_z = std::max(worst_z, z);
    worst_doubling = std::max(worst_doubling, doubling);
    pass = pass && z <= 3.0 && doubling < 1e-3;
  }
  return {pass, fmt("max |pce - oracle| / stderr = %.2f (tol 3), max grid-doubling change %.2g (tol 1e-3)", worst_z,
                    worst_doubling)};
}

Verdict a5(const fs::path& dir) {
  cli::RunConfig c;
  c.model = "source";
  c.method = "random";
  c.seed = 0;
  c.rollouts = 1000;
  c.contrastive = 10000;
  c.horizon = 30;
  c.out = (dir / "a5").string();
  const cli::EvalOutput o = cli::cmd_eval(c);
  const BoundEstimate& lo = o.lower.back();
  return {lo.mean >= 1.4 && lo.mean <= 1.9,
          fmt("random sPCE(t=30, L=1e4, 1000 rollouts) = %.4f +- %.4f (range [1.4, 1.9])", lo.mean, lo.stderr_)};
}

// ---------------------------------------------------------------------------

struct Trained {
  fs::path checkpoint;
  double train_seconds = 0.0;
  bool cached = false;
};

/// Desk-profile source training, reusing a checkpoint whose header records the same train config.
Trained desk_source(const fs::path& dir, const std::string& reward) {
  cli::RunConfig c;
  c.model = "source";
  c.profile = "desk";
  c.seed = 0;
  c.reward = reward;
  c.out = (dir / ("a6_" + reward)).string();
  const nlohmann::json want = c.train_config().to_json();
  Trained t;
  t.checkpoint = fs::path(c.out) / ("source-" + reward + "-seed0.ckpt");
  const fs::path header = fs::path(c.out) / "run_header.json";
  const fs::path log = fs::path(c.out) / ("source-" + reward + "-seed0_train_log.csv");
  if (fs::exists(t.checkpoint) && fs::exists(header) && fs::exists(log) &&
      nlohmann::json::parse(slurp(header)).at("train_config") == want) {
    t.cached = true;
  } else {
    std::cerr << "training source (" << reward << ") into " << c.out << '\n';
    cli::cmd_train(c, std::cerr);
  }
  // Cumulative wall time is the last column of the final log row.
  std::istringstream rows(slurp(log));
  std::string line, last;
  while (std::getline(rows, line)) {
    if (!line.empty()) last = line;
  }
  t.train_seconds = std::stod(last.substr(last.rfind(',') + 1));
  return t;
}

BoundEstimate eval_rl(const fs::path& dir, const Trained& t, const std::string& tag) {
  cli::RunConfig c;
  c.model = "source";
  c.method = "rl";
  c.checkpoint = t.checkpoint.string();
  c.seed = 0;
  c.rollouts = 200;
  c.contrastive = 10000;
  c.horizon = 30;
  c.out = (dir / ("a6_eval_" + tag)).string();
  return cli::cmd_eval(c).lower.back();
}

Verdict a6(const fs::path& dir) {
  const Trained dense = desk_source(dir, "dense");
  const Trained sparse = desk_source(dir, "sparse");
  const BoundEstimate d = eval_rl(dir, dense, "dense");
  const BoundEstimate s = eval_rl(dir, sparse, "sparse");
  const double hours = std::max(dense.train_seconds, sparse.train_seconds) / 3600.0;
  const bool pass = d.mean >= 4.0 && d.mean >= s.mean && hours <= 2.0;
  return {pass, fmt("dense sPCE %.4f +- %.4f (min 4.0), sparse %.4f +- %.4f (dense >= sparse), "
                    "training %.2f h per agent (max 2)%s",
                    d.mean, d.stderr_, s.mean, s.stderr_, hours, dense.cached && sparse.cached ? ", cached" : "")};
}

Verdict a7(const fs::path& dir) {
  cli::RunConfig c;
  c.profile = "desk";
  c.seed = 0;
  c.rollouts = 10000;
  c.contrastive = 1000;
  c.out = (dir / "a7").string();
  const auto start = std::chrono::steady_clock::now();
  const cli::Toy1dOutput o = cli::cmd_toy1d(c, std::cerr);
  const double hours = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count() / 3600.0;
  auto row = [&](const std::string& agent, std::size_t t) {
    for (const cli::Toy1dRow& r : o.rows) {
      if (r.agent == agent && r.t == t) return r;
    }
    throw Error("toy1d output lacks " + agent + " t=" + std::to_string(t));
  };
  const cli::Toy1dRow m1 = row("myopic", 1), m2 = row("myopic", 2), n1 = row("non-myopic", 1),
                      n2 = row("non-myopic", 2), opt = row("grid-optimum", 1);
  const double gap = n2.eig_mean - m2.eig_mean;
  const double combined = std::hypot(n2.eig_stderr, m2.eig_stderr);
  const bool i = gap > 2 * combined;
  const bool ii = m1.eig_mean >= n1.eig_mean;
  const bool iii = std::abs(m1.eig_mean - opt.eig_mean) <= 0.1 * opt.eig_mean;
  return {i && ii && iii && hours <= 1.0,
          fmt("(i) t=2 non-myopic - myopic = %.4f vs 2 x stderr %.4f; (ii) t=1 myopic %.4f vs non-myopic %.4f; "
              "(iii) grid optimum %.4f at d=%.3f; %.2f h (max 1)",
              gap, 2 * combined, m1.eig_mean, n1.eig_mean, opt.eig_mean, opt.design.value_or(0.0), hours)};
}

Verdict a8() {
  double worst = 0.0;
  std::size_t cases = 0;
  for (const checks::FdCase& fc : checks::fd_cases()) {
    for (int point = 0; point < 10; ++point) worst = std::max(worst, checks::primitive_fd_error(fc, point));
    ++cases;
  }
  double mlp = 0.0;
  for (int point = 0; point < 10; ++point) mlp = std::max(mlp, checks::mlp_fd_error(point));
  return {worst < 1e-4 && mlp < 1e-4,
          fmt("max relative error %.2g over %zu primitive cases, %.2g on the MLP (tol 1e-4)", worst, cases, mlp)};
}

Verdict a9() {
  // Prey without attack: nothing is eaten, with certainty.
  PreyModel prey;
  bool frozen = integrate_prey_ode(0.0, 0.5, 50.0) == 50.0;
  Rng rng(9);
  for (int i = 0; i < 100 && frozen; ++i) frozen = prey.sample_outcome({0.0, 0.5}, Design::discrete(50), rng) == 0.0;

  // RK4 against forward Euler with a 1e-5 step.
  double n = 50.0;
  const double a = 0.1, th = 0.2, h = 1e-5;
  for (long k = 0; k < 2'400'000; ++k) n += h * (-a * n * n / (1.0 + a * th * n * n));
  const double rk4_rel = std::abs(integrate_prey_ode(a, th, 50.0) - n) / n;

  // CES: interior density (in logit coordinates) plus the two atoms.
  CesModel ces;
  const Design d{{1, 2, 3, 4, 5, 6}};
  const double eps = ces.params().epsilon;
  double worst_norm = 0.0;
  for (const Predictive pred : {Predictive{0.3, 2.0}, Predictive{-5.0, 4.0}, Predictive{20.0, 3.0}}) {
    const double lo = std::log(eps / (1 - eps)), hi = -lo;
    const int steps = 200000;
    const double dh = (hi - lo) / steps;
    double mass = std::exp(ces.log_likelihood(pred, d, eps)) + std::exp(ces.log_likelihood(pred, d, 1 - eps));
    for (int i = 0; i <= steps; ++i) {
      const double y = 1.0 / (1.0 + std::exp(-(lo + i * dh)));
      if (y <= eps || y >= 1 - eps) continue;
      mass += ((i == 0 || i == steps) ? 0.5 : 1.0) * std::exp(ces.log_likelihood(pred, d, y)) * y * (1 - y) * dh;
    }
    worst_norm = std::max(worst_norm, std::abs(mass - 1.0));
  }

  SourceModel source;
  double worst_swap = 0.0;
  for (int i = 0; i < 100; ++i) {
    const auto theta = source.sample_prior(rng);
    const std::vector<double> swapped{theta[2], theta[3], theta[0], theta[1]};
    const Design ds{{rng.uniform(-4, 4), rng.uniform(-4, 4)}};
    const Outcome y = source.sample_outcome(theta, ds, rng);
    worst_swap = std::max(worst_swap, std::abs(source.log_likelihood(theta, ds, y) - source.log_likelihood(swapped, ds, y)));
  }
  return {frozen && rk4_rel < 1e-4 && worst_norm < 1e-4 && worst_swap < 1e-12,
          fmt("prey a=0 frozen: %s; RK4 vs Euler %.2g (tol 1e-4); CES mass error %.2g (tol 1e-4); "
              "source swap %.2g (tol 1e-12)",
              frozen ? "yes" : "no", rk4_rel, worst_norm, worst_swap)};
}

Verdict a10(const fs::path& dir) {
  const Trained dense = desk_source(dir, "dense");
  cli::RunConfig c;
  c.model = "source";
  c.checkpoint = dense.checkpoint.string();
  c.proposals = 1000;
  c.out = (dir / "a10").string();
  const cli::BenchOutput o = cli::cmd_bench(c);
  return {o.rl.mean_seconds < 10e-3, fmt("%.3g s +- %.2g per design over %zu proposals (max 10 ms; %s)",
                                          o.rl.mean_seconds, o.rl.stderr_seconds, o.rl.proposals, o.hardware.c_str())};
}

// ---------------------------------------------------------------------------

/// CSV bytes with the named column blanked.
std::string mask_column(const std::string& csv, const std::string& column) {
  std::istringstream in(csv);
  std::string line, out;
  long index = -1;
  bool header = true;
  while (std::getline(in, line)) {
    std::vector<std::string> cells;
    std::stringstream ss(line);
    std::string cell;
    while (std::getline(ss, cell, ',')) cells.push_back(cell);
    if (header) {
      const auto it = std::find(cells.begin(), cells.end(), column);
      index = it == cells.end() ? -1 : it - cells.begin();
      header = false;
    } else if (index >= 0 && static_cast<std::size_t>(index) < cells.size()) {
      cells[index].clear();
    }
    for (std::size_t k = 0; k < cells.size(); ++k) out += (k ? "," : "") + cells[k];
    out += '\n';
  }
  return out;
}

std::map<std::string, std::string> csv_files(const fs::path& dir) {
  std::map<std::string, std::string> files;
  for (const auto& entry : fs::recursive_directory_iterator(dir)) {
    if (entry.path().extension() != ".csv") continue;
    const std::string rel = fs::relative(entry.path(), dir).string();
    const std::string body = slurp(entry.path());
    files[rel] = rel.ends_with("_train_log.csv") ? mask_column(body, "seconds") : body;
  }
  return files;
}

// Sends stdout to /dev/null while alive, so CLI chatter stays out of the report.
class QuietStdout {
 public:
  QuietStdout() {
    std::fflush(stdout);
    std::cout.flush();
    saved_ = ::dup(STDOUT_FILENO);
    const int null = ::open("/dev/null", O_WRONLY);
    ::dup2(null, STDOUT_FILENO);
    ::close(null);
  }
  ~QuietStdout() {
    std::fflush(stdout);
    std::cout.flush();
    ::dup2(saved_, STDOUT_FILENO);
    ::close(saved_);
  }
  QuietStdout(const QuietStdout&) = delete;
  QuietStdout& operator=(const QuietStdout&) = delete;

 private:
  int saved_ = -1;
};

Verdict a11(const fs::path& dir) {
  const QuietStdout quiet;
  const fs::path root = dir / "a11";
  fs::remove_all(root);
  const fs::path ckpt = root / "ckpt";
  if (cli::run_cli({"train", "--model", "lingauss", "--iterations", "20", "-L", "64", "--seed", "3", "--out",
                    ckpt.string()}) != cli::kExitOk) {
    return {false, "could not train the checkpoint used by eval rl and bench"};
  }
  const std::string policy = (ckpt / "lingauss-dense-seed3.ckpt").string();
  const std::vector<std::pair<std::string, std::vector<std::string>>> commands{
      {"train", {"train", "--model", "prey", "--iterations", "12", "-L", "32", "-T", "3", "--seed", "5"}},
      {"train-sparse", {"train", "--model", "ces", "--iterations", "12", "-L", "32", "-T", "3", "--reward", "sparse"}},
      {"eval-rl", {"eval", "--model", "lingauss", "--method", "rl", "--checkpoint", policy, "--rollouts", "50", "-L", "200"}},
      {"eval-random", {"eval", "--model", "source", "--method", "random", "--rollouts", "20", "-L", "200", "-T", "5"}},
      {"eval-myopic", {"eval", "--model", "prey", "--method", "myopic-snis", "--rollouts", "2", "-L", "100", "-T", "2",
                       "--particles", "1000", "--outer", "2"}},
      {"toy1d", {"toy1d", "--iterations", "10", "--rollouts", "200", "-L", "100", "--grid-step", "0.25"}},
      {"bench", {"bench", "--model", "lingauss", "--checkpoint", policy, "--proposals", "40"}},
  };
  std::vector<std::string> differing;
  std::size_t files = 0;
  for (const auto& [name, args] : commands) {
    std::map<std::string, std::string> outputs[2];
    for (int rep = 0; rep < 2; ++rep) {
      const fs::path out = root / name / (rep == 0 ? "a" : "b");
      std::vector<std::string> full = args;
      full.insert(full.end(), {"--out", out.string()});
      if (cli::run_cli(full) != cli::kExitOk) return {false, name + " exited with an error"};
      outputs[rep] = csv_files(out);
    }
    files += outputs[0].size();
    if (outputs[0].empty() || outputs[0] != outputs[1]) differing.push_back(name);
  }
  std::string detail = fmt("%zu CSV files from %zu commands compared byte for byte (train-log seconds masked)", files,
                           commands.size());
  for (const std::string& d : differing) detail += "; differs: " + d;
  return {differing.empty(), detail};
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"acceptance criteria"};
  std::string only;
  std::string artifacts = "acceptance_artifacts";
  app.add_option("--only", only, "comma-separated criteria, e.g. A1,A5");
  app.add_option("--artifacts", artifacts, "directory for cached checkpoints and outputs");
  CLI11_PARSE(app, argc, argv);

  std::set<std::string> selected;
  std::stringstream ss(only);
  for (std::string id; std::getline(ss, id, ',');) {
    if (!id.empty()) selected.insert(id);
  }
  const fs::path dir = artifacts;
  fs::create_directories(dir);

  const std::vector<std::pair<std::string, std::function<Verdict()>>> criteria{
      {"A1", a1},
      {"A2", a2},
      {"A3", a3},
      {"A4", a4},
      {"A5", [&] { return a5(dir); }},
      {"A6", [&] { return a6(dir); }},
      {"A7", [&] { return a7(dir); }},
      {"A8", a8},
      {"A9", a9},
      {"A10", [&] { return a10(dir); }},
      {"A11", [&] { return a11(dir); }},
  };
  // Runtime ceilings for the criteria that state one.
  const std::map<std::string, double> budget_seconds{{"A1", 60}, {"A3", 120}, {"A5", 600}, {"A8", 60}};

  int failures = 0;
  for (const auto& [id, run] : criteria) {
    if (!selected.empty() && !selected.count(id)) continue;
    const auto start = std::chrono::steady_clock::now();
    Verdict v;
    try {
      v = run();
    } catch (const std::exception& e) {
      v = {false, std::string("error: ") + e.what()};
    }
    const double seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    if (const auto it = budget_seconds.find(id); it != budget_seconds.end() && seconds > it->second) {
      v.pass = false;
      v.detail += fmt("; took %.0f s (max %.0f)", seconds, it->second);
    }
    std::printf("%-4s %s  %s  [%.1f s]\n", id.c_str(), v.pass ? "PASS" : "FAIL", v.detail.c_str(), seconds);
    std::fflush(stdout);
    failures += v.pass ? 0 : 1;
  }
  return failures == 0 ? 0 : 1;
}
