#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "boed/autodiff/graph.hpp"

namespace boed::ad {

struct AdamConfig {
  double learning_rate = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
};

/// Adam with bias correction. Moments are keyed by parameter name.
class Adam {
 public:
  explicit Adam(AdamConfig config = {}) : config_(config) {}

  /// Applies one update. Every parameter needs a same-shaped gradient; a
  /// non-finite gradient throws NumericalError before anything is modified.
  void step(const std::vector<Parameter*>& params, const Gradients& grads);

  std::int64_t steps() const { return step_; }
  const AdamConfig& config() const { return config_; }
  void set_learning_rate(double lr) { config_.learning_rate = lr; }

 private:
  AdamConfig config_;
  std::int64_t step_ = 0;
  std::map<std::string, Array> first_;
  std::map<std::string, Array> second_;
};

}  // namespace boed::ad
