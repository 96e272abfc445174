#pragma once

#include <cstddef>
#include <string>
#include <vector>

#include "boed/autodiff/graph.hpp"
#include "boed/rng.hpp"

namespace boed::ad {

enum class Activation { kRelu, kTanh, kNone };

struct MlpSpec {
  std::size_t input_dim = 1;
  std::vector<std::size_t> hidden;
  Activation activation = Activation::kRelu;
  std::size_t output_dim = 1;
};

/// Fully connected network; the activation applies to hidden layers only, the
/// output layer is linear. Weights are uniform in +-sqrt(6 / (fan_in + fan_out)),
/// biases start at zero.
class Mlp {
 public:
  Mlp() = default;
  Mlp(const MlpSpec& spec, const std::string& prefix, Rng& rng);

  const MlpSpec& spec() const { return spec_; }
  std::size_t num_layers() const { return weights_.size(); }

  /// Records the network on a graph; x is [batch, input_dim]. A frozen pass
  /// records the weights as constants, so backward() skips them.
  Node forward(Graph& g, Node x, bool frozen = false);
  /// Tape-free evaluation using the same kernels (bitwise equal to forward()).
  Array apply(const Array& x) const;

  std::vector<Parameter*> parameters();
  std::vector<const Parameter*> parameters() const;
  std::size_t parameter_count() const;

 private:
  MlpSpec spec_;
  std::vector<Parameter> weights_;
  std::vector<Parameter> biases_;
};

/// Polyak averaging: target <- rate * source + (1 - rate) * target.
void soft_update(std::vector<Parameter*> target, const std::vector<const Parameter*>& source, double rate);

}  // namespace boed::ad
