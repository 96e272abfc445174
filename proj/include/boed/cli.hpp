#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <ostream>
#include <string>
#include <vector>

#include "json.hpp"

#include "boed/estimators.hpp"
#include "boed/trainer.hpp"

namespace boed::cli {

inline constexpr int kExitOk = 0;
inline constexpr int kExitUsage = 2;
inline constexpr int kExitRuntime = 3;

/// Settings shared by every command. Unset optionals fall back to profile defaults.
///
/// JSON keys (all optional): model, profile, seed, method, reward, checkpoint, out,
/// rollouts, contrastive, iterations, horizon, gamma, particles, outer, proposals,
/// grid_step, addr, checkpoints.
struct RunConfig {
  std::string model = "source";
  std::string profile = "desk";
  std::uint64_t seed = 0;
  std::string method = "rl";  // eval: rl | random | myopic-snis
  std::string reward = "dense";
  std::string checkpoint;
  std::string out;            // empty: $BOED_OUT, then ./boed_out
  std::optional<std::size_t> rollouts;
  std::optional<std::size_t> contrastive;
  std::optional<std::size_t> iterations;
  std::optional<std::size_t> horizon;
  std::optional<double> gamma;
  std::size_t particles = 8000;  // myopic-snis particle count
  std::size_t outer = 8;         // myopic-snis outcome draws per candidate
  std::size_t proposals = 1000;  // bench
  double grid_step = 0.05;       // toy1d grid search spacing
  std::string addr = "127.0.0.1:8080";
  std::string checkpoints = "checkpoints";

  static RunConfig from_json(const nlohmann::json& j);
  nlohmann::json to_json() const;

  std::filesystem::path out_dir() const;
  std::size_t eval_rollouts() const;
  std::size_t eval_contrastive() const;
  std::size_t eval_horizon() const;
  /// TrainConfig for `model` with the profile defaults and this config's overrides.
  train::TrainConfig train_config() const;
};

struct TrainOutput {
  std::filesystem::path checkpoint;
  std::filesystem::path log;
  std::vector<train::TrainLogRow> rows;
};

/// Trains, writes <out>/<stem>.ckpt, <stem>_train_log.csv and run_header.json.
TrainOutput cmd_train(const RunConfig& cfg, std::ostream& progress);

struct EvalOutput {
  RolloutSet rollouts;
  std::vector<BoundEstimate> lower;  // t = 1..T
  std::vector<BoundEstimate> upper;
  std::filesystem::path rollouts_csv;
  std::filesystem::path aggregate_csv;
};

/// Evaluates a method with sPCE and sNMC on shared contrastive sets.
EvalOutput cmd_eval(const RunConfig& cfg);

struct Toy1dRow {
  std::string agent;
  double gamma = 0.0;
  std::size_t t = 0;
  double eig_mean = 0.0;
  double eig_stderr = 0.0;
  std::size_t n = 0;
  std::optional<double> design;
};

struct Toy1dOutput {
  std::vector<Toy1dRow> rows;
  GridOptimum grid;
  std::filesystem::path csv;
};

/// Myopic (gamma = 0) versus non-myopic (gamma = 1) agents on the one-source 1-D model, T = 2.
Toy1dOutput cmd_toy1d(const RunConfig& cfg, std::ostream& progress);

struct LatencyStats {
  double mean_seconds = 0.0;
  double stderr_seconds = 0.0;
  std::size_t proposals = 0;
};

struct BenchOutput {
  LatencyStats rl;
  LatencyStats random;
  std::string hardware;
  std::filesystem::path json;
  std::filesystem::path designs_csv;
};

/// Wall time of summary update + policy forward per proposed design.
BenchOutput cmd_bench(const RunConfig& cfg);

/// Short CPU description for benchmark reports.
std::string hardware_note();

/// Full command-line entry point: parses argv, dispatches, maps errors to exit codes.
int run_cli(int argc, char** argv);
/// `args` excludes the program name.
int run_cli(const std::vector<std::string>& args);

}  // namespace boed::cli
